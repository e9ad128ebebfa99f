#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "efix/simnet.hpp"

namespace efix {

/// One row of a run: the state after `round` communication rounds.
struct TraceRecord {
    std::uint64_t round = 0;
    std::size_t outer_s = 0;
    std::optional<double> theta;
    std::optional<double> epsilon;
    std::optional<double> error_e;
    std::optional<double> error_v;
    double consensus_residual = 0.0;  // |(I - W (x) I) x|
    std::uint64_t cum_sp_max = 0;
    std::uint64_t cum_vectors_sent = 0;
    bool boundary = false;  // first row of a new outer iteration
};

/// Summary of one penalty subproblem solve.
struct OuterRecord {
    std::size_t s = 0;
    double theta = 0.0;
    double epsilon = 0.0;
    double q = 0.0;
    double rho = 0.0;
    double solver_constant = 1.0;
    bool radius_fallback = false;
    double cbar = 0.0;
    std::uint64_t planned_rounds = 0;  // k(s)
    std::uint64_t rounds = 0;          // rounds actually executed
    double start_grad_norm = 0.0;      // |A z^0 - c| for this subproblem
    double grad_norm = 0.0;            // |A z^k - c| at the end
    bool completed = false;
    Eigen::VectorXd x;                 // iterate at the end of the solve
};

struct Trace {
    std::string method;
    std::vector<TraceRecord> records;
    std::vector<OuterRecord> outers;
    Eigen::VectorXd final_x;
    CostLedger ledger;
    bool diverged = false;
    bool numerical_failure = false;
    bool budget_exhausted = false;
    std::vector<std::string> warnings;
};

/// Optional per-round error evaluators.
struct Metrics {
    std::function<double(const Eigen::VectorXd&)> error_e;
    std::function<double(const Eigen::VectorXd&)> error_v;
};

/// Stopping budget; unset limits are ignored.
struct Budget {
    std::optional<std::uint64_t> rounds;
    std::optional<std::uint64_t> outer;
    std::optional<std::uint64_t> scalar_products;  // per-node maximum
};

} // namespace efix
