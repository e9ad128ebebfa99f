#pragma once

// Penalty subproblem A x = c with A = H + theta (I - W (x) I) and its JOR
// splitting. Off-diagonal blocks are -theta w_ij I and are never stored.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "efix/errors.hpp"
#include "efix/problems.hpp"
#include "efix/topology.hpp"

namespace efix {

/// Node-local share of the subproblem.
struct NodeBlock {
    MatrixXd A_self;          // A_ii = H_i + theta (1 - w_ii) I
    VectorXd d;               // diag(A_ii)
    MatrixXd M_self;          // q D_ii^-1 G_ii + (1 - q) I
    VectorXd neighbor_scale;  // q theta D_ii^-1, so that M_ij = w_ij diag(neighbor_scale)
    VectorXd c;               // right-hand side c_i
    VectorXd p;               // q D_ii^-1 c_i
};

struct PenaltySubproblem {
    double theta = 0.0;
    double q = 0.0;
    std::size_t dim = 0;
    std::vector<NodeBlock> blocks;

    std::size_t node_count() const { return blocks.size(); }
    std::size_t stacked_size() const { return dim * blocks.size(); }
};

/// Builds node i's blocks from its local curvature H_i and right-hand side c_i.
inline NodeBlock assemble_node(const MatrixXd& curvature, VectorXd rhs, double w_self, double theta, double q) {
    NodeBlock blk;
    blk.A_self = curvature;
    blk.A_self.diagonal().array() += theta * (1.0 - w_self);
    blk.d = blk.A_self.diagonal();
    if ((blk.d.array() <= 0.0).any()) throw NumericalFailure("nonpositive diagonal in penalty matrix");
    const VectorXd d_inv = blk.d.cwiseInverse();

    MatrixXd G = -blk.A_self;
    G.diagonal().setZero();
    blk.M_self = q * (d_inv.asDiagonal() * G);
    blk.M_self.diagonal().array() += 1.0 - q;
    blk.neighbor_scale = (q * theta) * d_inv;
    blk.p = q * d_inv.cwiseProduct(rhs);
    blk.c = std::move(rhs);
    return blk;
}

inline void check_relaxation(double theta, double q) {
    if (!(theta > 0.0)) throw ConfigError("penalty parameter must be positive");
    if (!(q > 0.0)) throw NonContractive("relaxation parameter must be positive");
}

inline PenaltySubproblem assemble_quadratic(const QuadraticProblem& problem, const MixingMatrix& w, double theta,
                                            double q) {
    check_relaxation(theta, q);
    if (problem.node_count != w.node_count) throw DimensionMismatch("problem and network sizes differ");
    PenaltySubproblem sub;
    sub.theta = theta;
    sub.q = q;
    sub.dim = problem.dim;
    for (std::size_t i = 0; i < problem.node_count; ++i)
        sub.blocks.push_back(assemble_node(problem.B[i], problem.B[i] * problem.b[i], w.diag[i], theta, q));
    return sub;
}

/// Quadratic model of the penalty function at x_prev: H_i = Hessian of f_i at
/// x_prev_i and c_i = H_i x_prev_i - grad f_i(x_prev_i).
template <LocalCostFamily Problem>
PenaltySubproblem assemble_model(const Problem& problem, const VectorXd& x_prev, const MixingMatrix& w,
                                 double theta, double q) {
    check_relaxation(theta, q);
    const std::size_t count = node_count(problem);
    const auto n = static_cast<Eigen::Index>(dimension(problem));
    if (count != w.node_count) throw DimensionMismatch("problem and network sizes differ");
    if (x_prev.size() != n * static_cast<Eigen::Index>(count)) throw DimensionMismatch("x_prev has wrong length");
    PenaltySubproblem sub;
    sub.theta = theta;
    sub.q = q;
    sub.dim = dimension(problem);
    for (std::size_t i = 0; i < count; ++i) {
        const VectorXd xi = x_prev.segment(static_cast<Eigen::Index>(i) * n, n);
        sub.blocks.push_back(
            assemble_node(local_hessian(problem, i, xi), model_rhs(problem, i, xi), w.diag[i], theta, q));
    }
    return sub;
}

/// Upper end of the relaxation interval (0, 2 theta (1 - w_bar) / (L + 2 theta)).
inline double relaxation_bound(double theta, double L, double w_bar) {
    return 2.0 * theta * (1.0 - w_bar) / (L + 2.0 * theta);
}

/// One JOR update at a single node:
/// z_i' = M_ii z_i + q theta D_ii^-1 sum_j w_ij z_j + p_i.
/// `neighbor_value(k)` returns the vector held by the k-th neighbor of i.
template <class NeighborValue>
VectorXd jor_local_update(const NodeBlock& blk, const std::vector<double>& neighbor_weights, const VectorXd& z_self,
                          NeighborValue&& neighbor_value) {
    VectorXd mixed = VectorXd::Zero(z_self.size());
    for (std::size_t k = 0; k < neighbor_weights.size(); ++k) mixed += neighbor_weights[k] * neighbor_value(k);
    VectorXd out = blk.M_self * z_self;
    out += blk.neighbor_scale.cwiseProduct(mixed);
    out += blk.p;
    return out;
}

inline void check_stacked(const PenaltySubproblem& sub, const MixingMatrix& w, const VectorXd& z) {
    if (sub.node_count() != w.node_count) throw DimensionMismatch("subproblem and network sizes differ");
    if (static_cast<std::size_t>(z.size()) != sub.stacked_size()) throw DimensionMismatch("stacked vector length");
}

/// z' = M z + p, evaluated node by node from neighbor blocks only.
inline VectorXd jor_step(const VectorXd& z, const PenaltySubproblem& sub, const MixingMatrix& w) {
    check_stacked(sub, w, z);
    const auto n = static_cast<Eigen::Index>(sub.dim);
    VectorXd next(z.size());
    for (std::size_t i = 0; i < sub.node_count(); ++i) {
        const auto& nb = w.neighbors[i];
        next.segment(static_cast<Eigen::Index>(i) * n, n) = jor_local_update(
            sub.blocks[i], w.weights[i], z.segment(static_cast<Eigen::Index>(i) * n, n),
            [&](std::size_t k) { return z.segment(static_cast<Eigen::Index>(nb[k]) * n, n); });
    }
    return next;
}

/// A z - c (the penalty gradient, or the model gradient for assembled models).
inline VectorXd penalty_gradient(const PenaltySubproblem& sub, const MixingMatrix& w, const VectorXd& z) {
    check_stacked(sub, w, z);
    const auto n = static_cast<Eigen::Index>(sub.dim);
    VectorXd g(z.size());
    for (std::size_t i = 0; i < sub.node_count(); ++i) {
        const auto row = static_cast<Eigen::Index>(i) * n;
        VectorXd gi = sub.blocks[i].A_self * z.segment(row, n) - sub.blocks[i].c;
        for (std::size_t k = 0; k < w.neighbors[i].size(); ++k)
            gi -= (sub.theta * w.weights[i][k]) * z.segment(static_cast<Eigen::Index>(w.neighbors[i][k]) * n, n);
        g.segment(row, n) = gi;
    }
    return g;
}

inline VectorXd stacked_rhs(const PenaltySubproblem& sub) {
    const auto n = static_cast<Eigen::Index>(sub.dim);
    VectorXd c(static_cast<Eigen::Index>(sub.stacked_size()));
    for (std::size_t i = 0; i < sub.node_count(); ++i) c.segment(static_cast<Eigen::Index>(i) * n, n) = sub.blocks[i].c;
    return c;
}

/// Dense A assembled from the blocks (oracle and diagnostics only).
inline MatrixXd dense_matrix(const PenaltySubproblem& sub, const MixingMatrix& w) {
    const auto n = static_cast<Eigen::Index>(sub.dim);
    const auto size = static_cast<Eigen::Index>(sub.stacked_size());
    MatrixXd A = MatrixXd::Zero(size, size);
    for (std::size_t i = 0; i < sub.node_count(); ++i) {
        const auto row = static_cast<Eigen::Index>(i) * n;
        A.block(row, row, n, n) = sub.blocks[i].A_self;
        for (std::size_t k = 0; k < w.neighbors[i].size(); ++k) {
            const auto col = static_cast<Eigen::Index>(w.neighbors[i][k]) * n;
            A.block(row, col, n, n).diagonal().setConstant(-sub.theta * w.weights[i][k]);
        }
    }
    return A;
}

/// Dense JOR iteration matrix M = q D^-1 G + (1 - q) I.
inline MatrixXd dense_iteration_matrix(const PenaltySubproblem& sub, const MixingMatrix& w) {
    const MatrixXd A = dense_matrix(sub, w);
    const VectorXd d_inv = A.diagonal().cwiseInverse();
    MatrixXd M = -sub.q * (d_inv.asDiagonal() * A);
    M.diagonal().array() += 1.0;
    return M;
}

inline VectorXd dense_offset(const PenaltySubproblem& sub) {
    const auto n = static_cast<Eigen::Index>(sub.dim);
    VectorXd p(static_cast<Eigen::Index>(sub.stacked_size()));
    for (std::size_t i = 0; i < sub.node_count(); ++i) p.segment(static_cast<Eigen::Index>(i) * n, n) = sub.blocks[i].p;
    return p;
}

/// Exact minimizer of the subproblem by dense Cholesky.
inline VectorXd direct_solve(const PenaltySubproblem& sub, const MixingMatrix& w) {
    Eigen::LLT<MatrixXd> llt(dense_matrix(sub, w));
    if (llt.info() != Eigen::Success) throw NumericalFailure("penalty matrix is not positive definite");
    return llt.solve(stacked_rhs(sub));
}

/// Spectral radius of M. D^-1/2 A D^-1/2 is symmetric and similar to D^-1 A,
/// so the eigenvalues of M are 1 - q lambda with lambda real.
inline double jor_spectral_radius(const PenaltySubproblem& sub, const MixingMatrix& w) {
    const MatrixXd A = dense_matrix(sub, w);
    const VectorXd s = A.diagonal().cwiseSqrt().cwiseInverse();
    const MatrixXd S = s.asDiagonal() * A * s.asDiagonal();
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(S, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    return std::max(std::abs(1.0 - sub.q * lo), std::abs(1.0 - sub.q * hi));
}

/// Largest eigenvalue of D^-1 A; JOR converges for q < 2 / this value.
inline double jacobi_spectral_radius(const PenaltySubproblem& sub, const MixingMatrix& w) {
    const MatrixXd A = dense_matrix(sub, w);
    const VectorXd s = A.diagonal().cwiseSqrt().cwiseInverse();
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(s.asDiagonal() * A * s.asDiagonal(), Eigen::EigenvaluesOnly);
    return eig.eigenvalues().maxCoeff();
}

/// Contraction factor rho with |z^k - x*| <= C rho^k |z^0 - x*|.
struct ContractionEstimate {
    double rho = 0.0;
    double constant = 1.0;       // C; 1 when rho bounds the spectral norm
    bool radius_fallback = false;  // spectral norm >= 1, rho taken from the spectral radius
};

inline constexpr double contraction_floor = 1e-12;

/// Spectral norm of M when it is below one. Otherwise the spectral radius
/// inflated by 1e-6 (or halfway to 1 if that is closer), with C = sqrt(max d / min d): M is self-adjoint in the
/// D-inner product, so |M^k|_2 <= sqrt(cond D) rho(M)^k.
inline ContractionEstimate contraction_estimate(const PenaltySubproblem& sub, const MixingMatrix& w) {
    if (!(sub.q > 0.0)) throw NonContractive("relaxation parameter must be positive");
    const MatrixXd M = dense_iteration_matrix(sub, w);
    ContractionEstimate est;
    if (M.cwiseAbs().maxCoeff() == 0.0) {
        est.rho = contraction_floor;
        return est;
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> gram(M.transpose() * M, Eigen::EigenvaluesOnly);
    const double norm = std::sqrt(std::max(0.0, gram.eigenvalues().maxCoeff()));
    if (norm < 1.0) {
        est.rho = std::max(norm, contraction_floor);
        return est;
    }
    const double exact = jor_spectral_radius(sub, w);
    if (!(exact < 1.0))
        throw NonContractive("JOR iteration matrix has spectral radius " + std::to_string(exact) +
                             " for q = " + std::to_string(sub.q));
    const double radius = std::min(exact * (1.0 + 1e-6), 0.5 * (1.0 + exact));
    double d_min = std::numeric_limits<double>::infinity();
    double d_max = 0.0;
    for (const auto& blk : sub.blocks) {
        d_min = std::min(d_min, blk.d.minCoeff());
        d_max = std::max(d_max, blk.d.maxCoeff());
    }
    est.rho = std::max(radius, contraction_floor);
    est.constant = std::sqrt(d_max / d_min);
    est.radius_fallback = true;
    return est;
}

} // namespace efix
