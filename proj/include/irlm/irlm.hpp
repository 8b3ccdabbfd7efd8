#pragma once

// Umbrella header for the impulse-response language-modeling laboratory.

#include "irlm/checkpoint.hpp"
#include "irlm/config.hpp"
#include "irlm/corpus.hpp"
#include "irlm/eval.hpp"
#include "irlm/grad.hpp"
#include "irlm/model.hpp"
#include "irlm/regopt.hpp"
#include "irlm/rng.hpp"
#include "irlm/train.hpp"
#include "irlm/types.hpp"
