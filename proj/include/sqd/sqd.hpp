#pragma once

#include "sqd/errors.hpp"
#include "sqd/random.hpp"
#include "sqd/envmodel.hpp"
#include "sqd/detection.hpp"
#include "sqd/policy_types.hpp"
#include "sqd/analysis.hpp"
#include "sqd/policy.hpp"
#include "sqd/sim.hpp"
#include "sqd/scenario.hpp"
#include "sqd/io.hpp"
