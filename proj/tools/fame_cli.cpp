#include <iostream>

#include "fame/cli.hpp"

int main(int argc, char** argv) { return fame::cli::run_cli(argc, argv, std::cout, std::cerr); }
