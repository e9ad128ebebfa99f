#pragma once

// Outer loops: EFIX for quadratic costs and for quadratic models of generic
// costs, the centralized gradient-test variant, and the DIGing baseline. All
// of them run on the round engine.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "efix/errors.hpp"
#include "efix/penalty.hpp"
#include "efix/problems.hpp"
#include "efix/simnet.hpp"
#include "efix/topology.hpp"
#include "efix/trace.hpp"

namespace efix {

enum class ThetaRule { factorial, linear };
enum class EpsilonRule { reciprocal, balance };
enum class RelaxationRule { fixed, refresh, explicit_value };
enum class CbarMode { exact, estimate };

/// Outer-loop parameter rules. Outer iterations are counted from s = 0.
///  factorial: theta_0 given, theta_{s+1} = (s + 1) theta_s
///  linear:    theta_s = theta_0 (s + 1), i.e. 1, 2, 3, ... for theta_0 = 1
///  reciprocal: eps_0 = theta_0, eps_s = eps_0 / s
///  balance:   eps_s from the penalty-error bound at theta_s
struct Schedule {
    std::optional<double> theta0;       // absolute; overrides the multiplier
    double theta0_multiplier = 2.0;     // theta_0 = multiplier * L
    ThetaRule theta_rule = ThetaRule::factorial;
    EpsilonRule eps_rule = EpsilonRule::balance;
    RelaxationRule q_rule = RelaxationRule::fixed;
    double q_safety = 0.99;
    double q_value = 1.0;               // used by RelaxationRule::explicit_value
    CbarMode cbar = CbarMode::exact;

    double initial_theta(double L) const { return theta0 ? *theta0 : theta0_multiplier * L; }

    double theta(std::size_t s, double L) const {
        const double t0 = initial_theta(L);
        if (theta_rule == ThetaRule::linear) return t0 * static_cast<double>(s + 1);
        double t = t0;
        for (std::size_t k = 1; k < s; ++k) t *= static_cast<double>(k + 1);
        return t;
    }
};

/// eps = mu (L J / (theta kappa (1 - lambda2)) sqrt(4 - 2 kappa / theta) + J / (theta (1 - lambda2)))
inline double epsilon_balance(double theta, const ProblemConstants& c, double lambda2) {
    if (!(lambda2 < 1.0)) throw InvalidNetwork("second eigenvalue modulus must be below 1");
    if (!(theta > c.kappa / 2.0)) throw ConfigError("penalty parameter must exceed kappa / 2");
    const double gap = 1.0 - lambda2;
    return c.mu * (c.L * c.J / (theta * c.kappa * gap) * std::sqrt(4.0 - 2.0 * c.kappa / theta) + c.J / (theta * gap));
}

inline double schedule_epsilon(const Schedule& sched, std::size_t s, double theta, const ProblemConstants& c,
                               double lambda2) {
    if (sched.eps_rule == EpsilonRule::balance) return epsilon_balance(theta, c, lambda2);
    const double eps0 = sched.initial_theta(c.L);
    return s == 0 ? eps0 : eps0 / static_cast<double>(s);
}

inline double schedule_relaxation(const Schedule& sched, double theta, double L, double w_bar) {
    switch (sched.q_rule) {
    case RelaxationRule::fixed: return sched.q_safety * relaxation_bound(sched.initial_theta(L), L, w_bar);
    case RelaxationRule::refresh: return sched.q_safety * relaxation_bound(theta, L, w_bar);
    case RelaxationRule::explicit_value: return sched.q_value;
    }
    return sched.q_value;
}

/// Number of inner rounds that carries the tolerance from one subproblem to the
/// next: ceil(|(log(mu eps_next) - log(C (L + 2 theta_next) T)) / log(rho_next)|).
/// T is eps_prev + 2 cbar for quadratic costs and eps_prev + cbar_prev + cbar_next
/// for models; C is the R-linear constant of the inner solver.
inline std::uint64_t inner_count(double eps_next, double theta_next, double rho_next, double term, double L,
                                 double mu, double solver_constant = 1.0) {
    if (!(rho_next > 0.0 && rho_next < 1.0)) throw NonContractive("contraction factor must lie in (0, 1)");
    const double numerator = std::log(mu * eps_next) - std::log(solver_constant * (L + 2.0 * theta_next) * term);
    const double k = std::ceil(std::abs(numerator / std::log(rho_next)));
    if (!std::isfinite(k)) throw NumericalFailure("inner iteration count is not finite");
    constexpr double cap = 1e18;
    return static_cast<std::uint64_t>(std::min(k, cap));
}

/// |c| for quadratic costs (exact), 3 L sqrt(N) as the generic estimate.
inline double cbar_estimate(double L, std::size_t node_count) {
    return 3.0 * L * std::sqrt(static_cast<double>(node_count));
}

inline double cbar_exact(const PenaltySubproblem& sub) { return stacked_rhs(sub).norm(); }

/// How the inner loop ends.
enum class InnerStop { planned_count, gradient_test };

/// Which linear system each outer iteration solves.
enum class EfixModel { quadratic, local_model };

struct EfixOptions {
    Schedule schedule;
    Budget budget;
    Metrics metrics;
    std::optional<VectorXd> x0;                 // zeros when absent
    std::vector<std::size_t> execution_order;   // identity when empty
    double divergence_ceiling = 1e12;
};

namespace detail {

struct EfixState {
    VectorXd z;
    bool is_finite() const { return z.allFinite(); }
};

struct DigingState {
    VectorXd x;
    VectorXd u;
    VectorXd g;  // gradient at x (general variant)
    bool is_finite() const { return x.allFinite() && u.allFinite(); }
};

inline bool within_budget(const Budget& budget, const CostLedger& ledger, std::uint64_t rounds,
                          std::uint64_t next_cost) {
    if (budget.rounds && rounds >= *budget.rounds) return false;
    if (budget.scalar_products && ledger.max_scalar_products() + next_cost > *budget.scalar_products) return false;
    return true;
}

template <class State, class Project>
TraceRecord observe(const RoundEngine<State>& engine, const MixingMatrix& w, const Metrics& metrics,
                    Project&& project, std::size_t outer_s, std::optional<double> theta,
                    std::optional<double> epsilon, VectorXd* gathered = nullptr) {
    const VectorXd x = engine.gather(project);
    TraceRecord rec;
    rec.round = engine.ledger().rounds;
    rec.outer_s = outer_s;
    rec.theta = theta;
    rec.epsilon = epsilon;
    if (metrics.error_e) rec.error_e = metrics.error_e(x);
    if (metrics.error_v) rec.error_v = metrics.error_v(x);
    rec.consensus_residual = laplacian_apply(w, x).norm();
    rec.cum_sp_max = engine.ledger().max_scalar_products();
    rec.cum_vectors_sent = engine.ledger().total_vectors_sent();
    if (gathered) *gathered = x;
    return rec;
}

inline void require_limit(const Budget& budget) {
    if (!budget.rounds && !budget.outer && !budget.scalar_products)
        throw ConfigError("a round, outer-iteration or scalar-product budget is required");
}

inline VectorXd initial_point(const std::optional<VectorXd>& x0, std::size_t count, std::size_t dim) {
    const auto size = static_cast<Eigen::Index>(count * dim);
    if (!x0) return VectorXd::Zero(size);
    if (x0->size() != size) throw DimensionMismatch("initial point has wrong length");
    return *x0;
}

} // namespace detail

/// Shared EFIX outer loop.
template <LocalCostFamily Problem>
Trace run_efix(const Problem& problem, const MixingMatrix& w, const ProblemConstants& consts, EfixModel model,
               InnerStop stop, const EfixOptions& opt) {
    const std::size_t count = node_count(problem);
    const std::size_t dim = dimension(problem);
    const auto n = static_cast<Eigen::Index>(dim);
    if (count != w.node_count) throw DimensionMismatch("problem and network sizes differ");
    detail::require_limit(opt.budget);

    Trace trace;
    trace.method = model == EfixModel::quadratic ? (stop == InnerStop::gradient_test ? "efix-q-stopping" : "efix-q")
                                                 : "efix-g";
    const Graph graph = graph_of(w);
    VectorXd x = detail::initial_point(opt.x0, count, dim);

    std::vector<detail::EfixState> init(count);
    for (std::size_t i = 0; i < count; ++i) init[i].z = x.segment(static_cast<Eigen::Index>(i) * n, n);
    RoundEngine<detail::EfixState> engine(graph, std::move(init));
    if (!opt.execution_order.empty()) engine.set_execution_order(opt.execution_order);
    const auto project = [](const detail::EfixState& st) -> const VectorXd& { return st.z; };

    const Schedule& sched = opt.schedule;
    const std::uint64_t round_cost = cost::efix_inner(dim);
    std::vector<NodeBlock> blocks;  // blocks[i] is node i's local memory

    const auto publish = [](const detail::EfixState& st) { return Message{st.z}; };
    const auto update = [&](std::size_t i, const detail::EfixState& self, const Inbox& inbox) {
        detail::EfixState next;
        next.z = jor_local_update(blocks[i], w.weights[i], self.z, [&](std::size_t k) -> const VectorXd& {
            return inbox.vector(k);
        });
        return next;
    };
    const auto charge = [&](std::size_t) { return round_cost; };

    {
        const double theta0 = sched.theta(0, consts.L);
        trace.records.push_back(detail::observe(engine, w, opt.metrics, project, 0, theta0,
                                                schedule_epsilon(sched, 0, theta0, consts, w.lambda2)));
    }

    double eps_prev = 0.0;
    double cbar_prev = 0.0;
    bool halted = false;
    for (std::size_t s = 0; !halted; ++s) {
        if (opt.budget.outer && s >= *opt.budget.outer) break;
        if (!detail::within_budget(opt.budget, engine.ledger(), engine.ledger().rounds, round_cost)) {
            trace.budget_exhausted = true;
            break;
        }
        const double theta = sched.theta(s, consts.L);
        const double eps = schedule_epsilon(sched, s, theta, consts, w.lambda2);
        const double q = schedule_relaxation(sched, theta, consts.L, w.w_bar);

        PenaltySubproblem sub;
        if constexpr (std::is_same_v<Problem, QuadraticProblem>) {
            sub = model == EfixModel::quadratic ? assemble_quadratic(problem, w, theta, q)
                                                : assemble_model(problem, x, w, theta, q);
        } else {
            sub = assemble_model(problem, x, w, theta, q);
        }
        if (model == EfixModel::local_model) {
            for (std::size_t i = 0; i < count; ++i)
                engine.charge(i, cost::efix_g_outer(dim, local_sample_count(problem, i)));
        }
        const ContractionEstimate est = contraction_estimate(sub, w);
        if (est.radius_fallback)
            trace.warnings.push_back("s=" + std::to_string(s) + ": |M|_2 >= 1, using spectral radius with C=" +
                                     std::to_string(est.constant));
        const double cbar_cur = sched.cbar == CbarMode::exact ? cbar_exact(sub) : cbar_estimate(consts.L, count);
        const double start_grad = penalty_gradient(sub, w, x).norm();
        if (s == 0) {
            eps_prev = start_grad;
            cbar_prev = cbar_cur;
        }
        const std::uint64_t planned =
            inner_count(eps, theta, est.rho, eps_prev + (cbar_prev + cbar_cur), consts.L, consts.mu, est.constant);

        if (s > 0) {
            TraceRecord rec = detail::observe(engine, w, opt.metrics, project, s, theta, eps);
            rec.boundary = true;
            trace.records.push_back(rec);
        }

        blocks = sub.blocks;
        OuterRecord outer;
        outer.s = s;
        outer.theta = theta;
        outer.epsilon = eps;
        outer.q = q;
        outer.rho = est.rho;
        outer.solver_constant = est.constant;
        outer.radius_fallback = est.radius_fallback;
        outer.cbar = cbar_cur;
        outer.planned_rounds = planned;
        outer.start_grad_norm = start_grad;

        std::uint64_t used = 0;
        for (;;) {
            if (stop == InnerStop::planned_count) {
                if (used >= planned) break;
            } else if (penalty_gradient(sub, w, x).norm() <= eps) {
                break;
            }
            if (!detail::within_budget(opt.budget, engine.ledger(), engine.ledger().rounds, round_cost)) {
                trace.budget_exhausted = true;
                halted = true;
                break;
            }
            const RoundStatus status = engine.run_round(publish, update, charge);
            ++used;
            trace.records.push_back(
                detail::observe(engine, w, opt.metrics, project, s, theta, eps, &x));
            if (!status.finite) {
                trace.numerical_failure = true;
                halted = true;
                break;
            }
            if (x.lpNorm<Eigen::Infinity>() > opt.divergence_ceiling) {
                trace.diverged = true;
                halted = true;
                break;
            }
        }
        outer.rounds = used;
        outer.grad_norm = penalty_gradient(sub, w, x).norm();
        outer.completed = !halted;
        outer.x = x;
        trace.outers.push_back(std::move(outer));
        eps_prev = eps;
        cbar_prev = cbar_cur;
    }
    trace.final_x = x;
    trace.ledger = engine.ledger();
    return trace;
}

/// EFIX-Q: JOR inner rounds on B + theta_s L with k(s) from the tolerance chain.
inline Trace efix_q(const QuadraticProblem& problem, const MixingMatrix& w, const EfixOptions& opt) {
    return run_efix(problem, w, quadratic_constants(problem), EfixModel::quadratic, InnerStop::planned_count, opt);
}

/// Centralized reference: inner rounds stop once |grad Phi_theta_s| <= eps_s.
inline Trace efix_q_stopping(const QuadraticProblem& problem, const MixingMatrix& w, const EfixOptions& opt) {
    return run_efix(problem, w, quadratic_constants(problem), EfixModel::quadratic, InnerStop::gradient_test, opt);
}

/// EFIX-G: the subproblem at s is the quadratic model of the penalty function
/// around the current iterate.
template <LocalCostFamily Problem>
Trace efix_g(const Problem& problem, const MixingMatrix& w, const ProblemConstants& consts, const EfixOptions& opt) {
    return run_efix(problem, w, consts, EfixModel::local_model, InnerStop::planned_count, opt);
}

/// Default EFIX-G schedule: q refreshed with theta_s and the cbar estimate.
inline Schedule efix_g_schedule() {
    Schedule s;
    s.q_rule = RelaxationRule::refresh;
    s.cbar = CbarMode::estimate;
    return s;
}

// ---------------------------------------------------------------------------
// DIGing
// ---------------------------------------------------------------------------

/// quadratic: u' = W u + B_ii (x' - x); general: u' = W u + grad f_i(x') - grad f_i(x).
enum class DigingVariant { quadratic, general };

struct DigingOptions {
    double alpha = 0.0;
    DigingVariant variant = DigingVariant::general;
    Budget budget;
    Metrics metrics;
    std::optional<VectorXd> x0;
    std::vector<std::size_t> execution_order;
    double divergence_ceiling = 1e12;
};

template <LocalCostFamily Problem>
Trace diging(const Problem& problem, const MixingMatrix& w, const DigingOptions& opt) {
    const std::size_t count = node_count(problem);
    const std::size_t dim = dimension(problem);
    const auto n = static_cast<Eigen::Index>(dim);
    if (count != w.node_count) throw DimensionMismatch("problem and network sizes differ");
    if (!(opt.alpha >= 0.0)) throw ConfigError("DIGing step size must be nonnegative");
    if (opt.variant == DigingVariant::quadratic && !std::is_same_v<Problem, QuadraticProblem>)
        throw ConfigError("the quadratic DIGing variant needs quadratic costs");
    if (!opt.budget.rounds && !opt.budget.scalar_products)
        throw ConfigError("DIGing needs a round or scalar-product budget");

    Trace trace;
    trace.method = "diging";
    const VectorXd x0 = detail::initial_point(opt.x0, count, dim);
    std::vector<detail::DigingState> init(count);
    for (std::size_t i = 0; i < count; ++i) {
        init[i].x = x0.segment(static_cast<Eigen::Index>(i) * n, n);
        init[i].g = local_gradient(problem, i, init[i].x);
        init[i].u = init[i].g;
    }
    RoundEngine<detail::DigingState> engine(graph_of(w), std::move(init));
    if (!opt.execution_order.empty()) engine.set_execution_order(opt.execution_order);
    const auto project = [](const detail::DigingState& st) -> const VectorXd& { return st.x; };

    const auto publish = [](const detail::DigingState& st) { return Message{st.x, st.u}; };
    const auto update = [&](std::size_t i, const detail::DigingState& self, const Inbox& inbox) {
        detail::DigingState next;
        VectorXd x_mix = w.diag[i] * self.x;
        VectorXd u_mix = w.diag[i] * self.u;
        for (std::size_t k = 0; k < inbox.size(); ++k) {
            x_mix += w.weights[i][k] * inbox.vector(k, 0);
            u_mix += w.weights[i][k] * inbox.vector(k, 1);
        }
        next.x = x_mix - opt.alpha * self.u;
        if (opt.variant == DigingVariant::quadratic) {
            next.u = u_mix + local_hessian(problem, i, self.x) * (next.x - self.x);
            next.g = self.g;
        } else {
            next.g = local_gradient(problem, i, next.x);
            next.u = u_mix + (next.g - self.g);
        }
        return next;
    };
    const auto charge = [&](std::size_t i) -> std::uint64_t {
        return opt.variant == DigingVariant::quadratic ? cost::diging_quadratic(dim)
                                                       : cost::diging_logistic(dim, local_sample_count(problem, i));
    };
    std::uint64_t worst_cost = 0;
    for (std::size_t i = 0; i < count; ++i) worst_cost = std::max(worst_cost, charge(i));

    trace.records.push_back(detail::observe(engine, w, opt.metrics, project, 0, std::nullopt, std::nullopt));
    VectorXd x = x0;
    while (detail::within_budget(opt.budget, engine.ledger(), engine.ledger().rounds, worst_cost)) {
        const RoundStatus status = engine.run_round(publish, update, charge);
        trace.records.push_back(
            detail::observe(engine, w, opt.metrics, project, 0, std::nullopt, std::nullopt, &x));
        if (!status.finite) {
            trace.numerical_failure = true;
            break;
        }
        if (x.lpNorm<Eigen::Infinity>() > opt.divergence_ceiling) {
            trace.diverged = true;
            break;
        }
    }
    if (!trace.diverged && !trace.numerical_failure) trace.budget_exhausted = true;
    trace.final_x = x;
    trace.ledger = engine.ledger();
    return trace;
}

/// Ratio of total vectors sent by two runs.
inline double communication_ratio(const Trace& a, const Trace& b) {
    const std::uint64_t denom = b.ledger.total_vectors_sent();
    if (denom == 0) throw Error("communication ratio with zero denominator");
    return static_cast<double>(a.ledger.total_vectors_sent()) / static_cast<double>(denom);
}

} // namespace efix
