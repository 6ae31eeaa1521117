#pragma once

#include "cbwk/error.hpp"
#include "cbwk/rng.hpp"
#include "cbwk/table.hpp"
#include "cbwk/problem.hpp"
#include "cbwk/environment.hpp"
#include "cbwk/logistic.hpp"
#include "cbwk/lp.hpp"
#include "cbwk/policy.hpp"
#include "cbwk/policy_conversion.hpp"
#include "cbwk/policy_linear.hpp"
#include "cbwk/runner.hpp"
#include "cbwk/bench.hpp"
