#pragma once

// Shared generators and dense reference computations for the test suite.

#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "efix/efix.hpp"

namespace testing_support {

using Eigen::MatrixXd;
using Eigen::VectorXd;

class Gen {
public:
    explicit Gen(std::uint64_t seed) : rng_(seed) {}

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
    std::size_t index(std::size_t lo, std::size_t hi) {  // inclusive
        return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
    }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng_); }

    VectorXd vector(Eigen::Index n, double scale = 1.0) {
        VectorXd v(n);
        for (Eigen::Index k = 0; k < n; ++k) v(k) = scale * normal();
        return v;
    }

    // Symmetric with spectrum inside [lo, hi].
    MatrixXd spd(Eigen::Index n, double lo, double hi) {
        MatrixXd C(n, n);
        for (Eigen::Index r = 0; r < n; ++r)
            for (Eigen::Index c = 0; c < n; ++c) C(r, c) = normal();
        Eigen::HouseholderQR<MatrixXd> qr(C);
        const MatrixXd Q = qr.householderQ();
        VectorXd s(n);
        for (Eigen::Index k = 0; k < n; ++k) s(k) = uniform(lo, hi);
        MatrixXd B = Q * s.asDiagonal() * Q.transpose();
        return 0.5 * (B + B.transpose());
    }

    // Random spanning tree plus extra edges; always connected.
    efix::Graph connected_graph(std::size_t N, double extra_prob) {
        std::vector<std::pair<std::size_t, std::size_t>> edges;
        for (std::size_t i = 1; i < N; ++i) edges.emplace_back(index(0, i - 1), i);
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t j = i + 1; j < N; ++j)
                if (uniform(0.0, 1.0) < extra_prob) edges.emplace_back(i, j);
        return efix::graph_from_edges(N, edges);
    }

    efix::QuadraticProblem quadratic(std::size_t N, std::size_t n, double lo = 1.0, double hi = 10.0) {
        efix::QuadraticProblem p;
        p.node_count = N;
        p.dim = n;
        for (std::size_t i = 0; i < N; ++i) {
            p.B.push_back(spd(static_cast<Eigen::Index>(n), lo, hi));
            p.b.push_back(vector(static_cast<Eigen::Index>(n), 3.0));
        }
        return p;
    }

    std::mt19937_64& engine() { return rng_; }

private:
    std::mt19937_64 rng_;
};

// Metropolis weights formed densely from the adjacency matrix.
inline MatrixXd dense_metropolis(const efix::Graph& g) {
    const auto N = static_cast<Eigen::Index>(g.node_count);
    MatrixXd W = MatrixXd::Zero(N, N);
    for (Eigen::Index i = 0; i < N; ++i) {
        for (std::size_t j : g.neighbors[static_cast<std::size_t>(i)]) {
            const double di = static_cast<double>(g.neighbors[static_cast<std::size_t>(i)].size());
            const double dj = static_cast<double>(g.neighbors[j].size());
            W(i, static_cast<Eigen::Index>(j)) = 1.0 / std::max(di, dj);
        }
    }
    for (Eigen::Index i = 0; i < N; ++i) W(i, i) = 1.0 - (W.row(i).sum() - W(i, i));
    return W;
}

inline efix::QuadraticProblem scalar_problem(std::vector<double> B, std::vector<double> b) {
    efix::QuadraticProblem p;
    p.node_count = B.size();
    p.dim = 1;
    for (std::size_t i = 0; i < B.size(); ++i) {
        p.B.push_back(MatrixXd::Constant(1, 1, B[i]));
        p.b.push_back(VectorXd::Constant(1, b[i]));
    }
    return p;
}

// M (x) I_n
inline MatrixXd kron_identity(const MatrixXd& M, Eigen::Index n) {
    MatrixXd out = MatrixXd::Zero(M.rows() * n, M.cols() * n);
    for (Eigen::Index i = 0; i < M.rows(); ++i)
        for (Eigen::Index j = 0; j < M.cols(); ++j) out.block(i * n, j * n, n, n).diagonal().setConstant(M(i, j));
    return out;
}

// blockdiag(B_ii) + theta (I - W) (x) I_n
inline MatrixXd dense_penalty(const std::vector<MatrixXd>& H, const MatrixXd& W, double theta) {
    const auto N = W.rows();
    const auto n = H[0].rows();
    MatrixXd A = MatrixXd::Zero(N * n, N * n);
    for (Eigen::Index i = 0; i < N; ++i) A.block(i * n, i * n, n, n) = H[static_cast<std::size_t>(i)];
    const MatrixXd Lap = MatrixXd::Identity(N, N) - W;
    for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index j = 0; j < N; ++j)
            A.block(i * n, j * n, n, n) += theta * Lap(i, j) * MatrixXd::Identity(n, n);
    return A;
}

inline VectorXd stacked_Bb(const efix::QuadraticProblem& p) {
    const auto n = static_cast<Eigen::Index>(p.dim);
    VectorXd c(n * static_cast<Eigen::Index>(p.node_count));
    for (std::size_t i = 0; i < p.node_count; ++i) c.segment(static_cast<Eigen::Index>(i) * n, n) = p.B[i] * p.b[i];
    return c;
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

}  // namespace testing_support
