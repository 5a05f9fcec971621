#pragma once

#include "prefbench/analytics.hpp"
#include "prefbench/config.hpp"
#include "prefbench/error.hpp"
#include "prefbench/metrics.hpp"
#include "prefbench/numeric.hpp"
#include "prefbench/objectives.hpp"
#include "prefbench/optimizer.hpp"
#include "prefbench/policy.hpp"
#include "prefbench/random.hpp"
#include "prefbench/sweep.hpp"
#include "prefbench/synthenv.hpp"
#include "prefbench/trainer.hpp"
