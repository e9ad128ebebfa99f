#pragma once

// Centralized reference solutions, error metrics and rate fitting.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "efix/errors.hpp"
#include "efix/problems.hpp"
#include "efix/topology.hpp"
#include "efix/trace.hpp"

namespace efix {

struct OracleSolution {
    VectorXd y_star;
    double f_star = 0.0;
    std::string method;
};

/// y* = (sum_i B_ii)^-1 sum_i B_ii b_i.
inline OracleSolution oracle_quadratic(const QuadraticProblem& p) {
    const auto n = static_cast<Eigen::Index>(p.dim);
    MatrixXd H = MatrixXd::Zero(n, n);
    VectorXd rhs = VectorXd::Zero(n);
    for (std::size_t i = 0; i < p.node_count; ++i) {
        H += p.B[i];
        rhs += p.B[i] * p.b[i];
    }
    Eigen::LLT<MatrixXd> llt(H);
    if (llt.info() != Eigen::Success) throw NumericalFailure("sum of B_ii is not positive definite");
    OracleSolution sol;
    sol.y_star = llt.solve(rhs);
    // one refinement step
    sol.y_star += llt.solve(rhs - H * sol.y_star);
    sol.f_star = global_objective(p, sol.y_star);
    sol.method = "direct-solve";
    return sol;
}

/// Damped Newton on the global objective; the step is halved until the
/// objective decreases.
inline OracleSolution oracle_logistic(const LogisticProblem& p, double tol = 1e-10, std::size_t max_iter = 200) {
    VectorXd y = VectorXd::Zero(static_cast<Eigen::Index>(p.dim));
    double f = global_objective(p, y);
    for (std::size_t it = 0; it <= max_iter; ++it) {
        const VectorXd g = global_gradient(p, y);
        if (g.norm() <= tol) {
            OracleSolution sol;
            sol.y_star = y;
            sol.f_star = f;
            sol.method = "centralized-newton";
            return sol;
        }
        const VectorXd step = global_hessian(p, y).llt().solve(g);
        double t = 1.0;
        bool moved = false;
        for (int halvings = 0; halvings < 60; ++halvings, t *= 0.5) {
            const VectorXd trial = y - t * step;
            const double f_trial = global_objective(p, trial);
            if (f_trial < f) {
                y = trial;
                f = f_trial;
                moved = true;
                break;
            }
        }
        if (!moved) {
            // No representable decrease left; accept a full step if it does not
            // increase the gradient, otherwise give up.
            const VectorXd trial = y - step;
            if (global_gradient(p, trial).norm() < g.norm()) {
                y = trial;
                f = global_objective(p, y);
            } else {
                break;
            }
        }
    }
    throw NumericalFailure("Newton oracle did not reach gradient tolerance " + std::to_string(tol));
}

/// Mean over nodes of |x_i - y*| / |y*|.
inline double error_e(const VectorXd& x, const VectorXd& y_star) {
    const double scale = y_star.norm();
    if (!(scale > 0.0)) throw NumericalFailure("relative error needs a nonzero solution");
    const Eigen::Index n = y_star.size();
    if (n == 0 || x.size() % n != 0) throw DimensionMismatch("stacked vector does not match the solution");
    const Eigen::Index count = x.size() / n;
    double total = 0.0;
    for (Eigen::Index i = 0; i < count; ++i) total += (x.segment(i * n, n) - y_star).norm() / scale;
    return total / static_cast<double>(count);
}

/// Mean over nodes of the global objective at each node's estimate.
template <LocalCostFamily Problem>
double error_v(const VectorXd& x, const Problem& p) {
    const auto n = static_cast<Eigen::Index>(dimension(p));
    const std::size_t count = node_count(p);
    if (x.size() != n * static_cast<Eigen::Index>(count)) throw DimensionMismatch("stacked vector does not match");
    double total = 0.0;
    for (std::size_t i = 0; i < count; ++i) total += global_objective(p, x.segment(static_cast<Eigen::Index>(i) * n, n));
    return total / static_cast<double>(count);
}

/// max_i |x_i - y*|
inline double max_node_error(const VectorXd& x, const VectorXd& y_star) {
    const Eigen::Index n = y_star.size();
    if (n == 0 || x.size() % n != 0) throw DimensionMismatch("stacked vector does not match the solution");
    double worst = 0.0;
    for (Eigen::Index i = 0; i < x.size() / n; ++i) worst = std::max(worst, (x.segment(i * n, n) - y_star).norm());
    return worst;
}

/// Least-squares slope of log(err) against log(theta).
inline double slope_fit(const std::vector<double>& theta, const std::vector<double>& err) {
    if (theta.size() != err.size()) throw DimensionMismatch("slope_fit inputs differ in length");
    std::vector<double> lx;
    std::vector<double> ly;
    for (std::size_t k = 0; k < theta.size(); ++k) {
        if (theta[k] > 0.0 && err[k] > 0.0) {
            lx.push_back(std::log(theta[k]));
            ly.push_back(std::log(err[k]));
        }
    }
    if (lx.size() < 5) throw Error("slope_fit needs at least 5 points with positive values");
    const double m = static_cast<double>(lx.size());
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t k = 0; k < lx.size(); ++k) {
        mx += lx[k];
        my += ly[k];
    }
    mx /= m;
    my /= m;
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t k = 0; k < lx.size(); ++k) {
        sxy += (lx[k] - mx) * (ly[k] - my);
        sxx += (lx[k] - mx) * (lx[k] - mx);
    }
    if (!(sxx > 0.0)) throw Error("slope_fit needs distinct abscissae");
    return sxy / sxx;
}

/// Slope of the max-node error against theta_s over outer iterations s in [s_lo, s_hi].
inline double slope_fit(const Trace& trace, const VectorXd& y_star, std::size_t s_lo, std::size_t s_hi) {
    std::vector<double> theta;
    std::vector<double> err;
    for (const auto& outer : trace.outers) {
        if (outer.completed && outer.s >= s_lo && outer.s <= s_hi) {
            theta.push_back(outer.theta);
            err.push_back(max_node_error(outer.x, y_star));
        }
    }
    return slope_fit(theta, err);
}

/// Outer iterations after which every node is eps_hat-close to y* when
/// theta_s = s: ceil(2 J (3 + 2L/mu) / ((1 - lambda2) eps_hat)).
inline double hitting_time_bound(const ProblemConstants& c, double lambda2, double eps_hat) {
    return std::ceil(2.0 * c.J * (3.0 + 2.0 * c.L / c.mu) / ((1.0 - lambda2) * eps_hat));
}

inline Metrics quadratic_metrics(const QuadraticProblem& p, const OracleSolution& oracle) {
    Metrics m;
    m.error_e = [y = oracle.y_star](const VectorXd& x) { return error_e(x, y); };
    m.error_v = [&p](const VectorXd& x) { return error_v(x, p); };
    return m;
}

inline Metrics logistic_metrics(const LogisticProblem& p) {
    Metrics m;
    m.error_v = [&p](const VectorXd& x) { return error_v(x, p); };
    return m;
}

} // namespace efix
