#pragma once

// Umbrella header for the empirical-null provider profiling toolkit.

#include "empnull/io.hpp"
#include "empnull/lambda.hpp"
#include "empnull/linear.hpp"
#include "empnull/math.hpp"
#include "empnull/null_mle.hpp"
#include "empnull/rng.hpp"
#include "empnull/simulation.hpp"
#include "empnull/smoothed_null.hpp"
#include "empnull/spline.hpp"
#include "empnull/survival.hpp"
#include "empnull/types.hpp"
