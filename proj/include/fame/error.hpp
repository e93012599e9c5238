#pragma once

#include <stdexcept>
#include <string>

namespace fame {

// Every failure surfaced by the library derives from Error so the CLI can map
// it to a categorized exit code.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

#define FAME_DEFINE_ERROR(Name, tag)                                  \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& what) : Error(tag, what) {}      \
  };

FAME_DEFINE_ERROR(DimensionError, "dimension")
FAME_DEFINE_ERROR(IndexError, "index")
FAME_DEFINE_ERROR(ParameterError, "parameter")
FAME_DEFINE_ERROR(ParseError, "parse")
FAME_DEFINE_ERROR(FormatError, "format")
FAME_DEFINE_ERROR(ConsistencyError, "consistency")
FAME_DEFINE_ERROR(SplitError, "split")
FAME_DEFINE_ERROR(InputError, "input")
FAME_DEFINE_ERROR(BatchError, "batch")
FAME_DEFINE_ERROR(SamplerError, "sampler")
FAME_DEFINE_ERROR(ConfigError, "config")
FAME_DEFINE_ERROR(IoError, "io")

#undef FAME_DEFINE_ERROR

}  // namespace fame
