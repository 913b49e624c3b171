#pragma once

// Umbrella header.

#include "dtsp/checkpoint.hpp"
#include "dtsp/config.hpp"
#include "dtsp/core.hpp"
#include "dtsp/dataset.hpp"
#include "dtsp/error.hpp"
#include "dtsp/eval.hpp"
#include "dtsp/losses.hpp"
#include "dtsp/model.hpp"
#include "dtsp/optimizer.hpp"
#include "dtsp/rollout.hpp"
#include "dtsp/solvers.hpp"
#include "dtsp/trainer.hpp"
