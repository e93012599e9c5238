#pragma once

#include "fame/backbone.hpp"
#include "fame/bundle.hpp"
#include "fame/checkpoint.hpp"
#include "fame/config.hpp"
#include "fame/data.hpp"
#include "fame/error.hpp"
#include "fame/eval.hpp"
#include "fame/fame_layer.hpp"
#include "fame/numerics.hpp"
#include "fame/pretrain.hpp"
#include "fame/synth.hpp"
#include "fame/trainer.hpp"
