#pragma once

#include "efix/analysis.hpp"
#include "efix/errors.hpp"
#include "efix/experiment.hpp"
#include "efix/penalty.hpp"
#include "efix/problems.hpp"
#include "efix/simnet.hpp"
#include "efix/solvers.hpp"
#include "efix/topology.hpp"
#include "efix/trace.hpp"
