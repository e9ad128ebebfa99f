#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace efix;
using testing_support::Gen;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd sorted_eigenvalues(const MatrixXd& W) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(W, Eigen::EigenvaluesOnly);
    return eig.eigenvalues();
}

Graph path3() { return graph_from_edges(3, {{0, 1}, {1, 2}}); }
Graph triangle() { return graph_from_edges(3, {{0, 1}, {1, 2}, {0, 2}}); }
Graph complete4() { return graph_from_edges(4, {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}); }

}  // namespace

TEST(GeometricGraph, CloseTwoPointsAreLinked) {
    const double r = connection_radius(2);
    EXPECT_NEAR(r, std::sqrt(std::log(2.0) / 2.0), 1e-15);
    EXPECT_NEAR(r, 0.5887, 1e-4);
    const Graph g = geometric_graph_from_points({{0.2, 0.2}, {0.3, 0.2}});
    EXPECT_TRUE(g.has_edge(0, 1));
    EXPECT_TRUE(is_connected(g));
}

TEST(GeometricGraph, FarPointsAreDisconnected) {
    const Graph g = geometric_graph_from_points({{0.0, 0.0}, {1.0, 1.0}});
    EXPECT_EQ(g.edge_count(), 0u);
    EXPECT_FALSE(is_connected(g));
}

TEST(GeometricGraph, DistanceExactlyRadiusIsNotAnEdge) {
    const double r = connection_radius(2);
    const Graph g = geometric_graph_from_points({{0.0, 0.0}, {r, 0.0}});
    EXPECT_FALSE(g.has_edge(0, 1));
}

TEST(GeometricGraph, ResamplesUntilConnected) {
    // N=2 draws are connected only with probability < 1; every returned graph must be.
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const Graph g = generate_geometric_graph(2, seed);
        EXPECT_TRUE(is_connected(g));
        EXPECT_TRUE(g.has_edge(0, 1));
    }
}

TEST(GeometricGraph, Deterministic) {
    const Graph a = generate_geometric_graph(30, 42);
    const Graph b = generate_geometric_graph(30, 42);
    EXPECT_EQ(a.neighbors, b.neighbors);
    ASSERT_EQ(a.coordinates.size(), b.coordinates.size());
    for (std::size_t i = 0; i < a.coordinates.size(); ++i) {
        EXPECT_EQ(a.coordinates[i].x, b.coordinates[i].x);
        EXPECT_EQ(a.coordinates[i].y, b.coordinates[i].y);
    }
}

TEST(GeometricGraph, RejectsTinyAndExhaustedGeneration) {
    EXPECT_THROW(generate_geometric_graph(1, 0), GenerationFailure);
    EXPECT_THROW(generate_geometric_graph(0, 0), GenerationFailure);
    // A single attempt that happens to be disconnected must fail, not loop.
    bool saw_failure = false;
    for (std::uint64_t seed = 0; seed < 200 && !saw_failure; ++seed) {
        try {
            generate_geometric_graph(2, seed, 1);
        } catch (const GenerationFailure&) {
            saw_failure = true;
        }
    }
    EXPECT_TRUE(saw_failure);
}

TEST(GeometricGraph, SymmetricNoSelfLoops) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Graph g = generate_geometric_graph(25, seed);
        for (std::size_t i = 0; i < g.node_count; ++i) {
            EXPECT_FALSE(g.has_edge(i, i));
            for (std::size_t j : g.neighbors[i]) EXPECT_TRUE(g.has_edge(j, i));
            EXPECT_TRUE(std::is_sorted(g.neighbors[i].begin(), g.neighbors[i].end()));
        }
    }
}

TEST(Metropolis, PathGraph) {
    const MixingMatrix w = metropolis_weights(path3());
    EXPECT_DOUBLE_EQ(w.weight(0, 1), 0.5);
    EXPECT_DOUBLE_EQ(w.weight(1, 2), 0.5);
    EXPECT_DOUBLE_EQ(w.weight(0, 2), 0.0);
    EXPECT_DOUBLE_EQ(w.diag[0], 0.5);
    EXPECT_DOUBLE_EQ(w.diag[1], 0.0);
    EXPECT_DOUBLE_EQ(w.diag[2], 0.5);
    EXPECT_DOUBLE_EQ(w.w_bar, 0.5);
}

TEST(Metropolis, Triangle) {
    const MixingMatrix w = metropolis_weights(triangle());
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_DOUBLE_EQ(w.diag[i], 0.0);
        for (std::size_t j = 0; j < 3; ++j)
            if (i != j) EXPECT_DOUBLE_EQ(w.weight(i, j), 0.5);
    }
    EXPECT_DOUBLE_EQ(w.w_bar, 0.0);
}

TEST(Metropolis, Star) {
    const MixingMatrix w = metropolis_weights(graph_from_edges(4, {{0, 1}, {0, 2}, {0, 3}}));
    EXPECT_DOUBLE_EQ(w.diag[0], 0.0);
    for (std::size_t leaf = 1; leaf < 4; ++leaf) {
        EXPECT_DOUBLE_EQ(w.weight(0, leaf), 1.0 / 3.0);
        EXPECT_DOUBLE_EQ(w.diag[leaf], 2.0 / 3.0);
    }
}

TEST(Metropolis, MatchesDenseConstructionOnRandomGraphs) {
    Gen gen(7);
    for (int trial = 0; trial < 30; ++trial) {
        const Graph g = gen.connected_graph(gen.index(2, 20), 0.2);
        const MatrixXd expected = testing_support::dense_metropolis(g);
        EXPECT_LE((metropolis_weights(g).dense() - expected).cwiseAbs().maxCoeff(), 1e-15);
    }
}

TEST(SpectralGap, Triangle) {
    const MixingMatrix w = metropolis_weights(triangle());
    const VectorXd ev = sorted_eigenvalues(w.dense());
    EXPECT_NEAR(ev(0), -0.5, 1e-12);
    EXPECT_NEAR(ev(1), -0.5, 1e-12);
    EXPECT_NEAR(ev(2), 1.0, 1e-12);
    EXPECT_NEAR(w.lambda2, 0.5, 1e-12);
}

TEST(SpectralGap, CompleteK4) {
    const MixingMatrix w = metropolis_weights(complete4());
    const VectorXd ev = sorted_eigenvalues(w.dense());
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(ev(k), -1.0 / 3.0, 1e-12);
    EXPECT_NEAR(w.lambda2, 1.0 / 3.0, 1e-12);
}

TEST(SpectralGap, Path) {
    const MixingMatrix w = metropolis_weights(path3());
    const VectorXd ev = sorted_eigenvalues(w.dense());
    EXPECT_NEAR(ev(0), -0.5, 1e-12);
    EXPECT_NEAR(ev(1), 0.5, 1e-12);
    EXPECT_NEAR(ev(2), 1.0, 1e-12);
    EXPECT_NEAR(w.lambda2, 0.5, 1e-12);
}

TEST(SpectralGap, BipartiteTwoNodesIsOne) {
    const MixingMatrix w = metropolis_weights(graph_from_edges(2, {{0, 1}}));
    EXPECT_NEAR(w.lambda2, 1.0, 1e-12);
}

TEST(MixingInvariants, RandomGeometricNetworks) {
    for (std::size_t N : {10u, 30u, 100u}) {
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            const Graph g = generate_geometric_graph(N, seed * 7919 + N);
            const MixingMatrix w = metropolis_weights(g);
            const MatrixXd W = w.dense();
            ASSERT_LE((W - W.transpose()).cwiseAbs().maxCoeff(), 0.0);
            ASSERT_LE((W.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t j = 0; j < N; ++j) {
                    const double v = W(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                    ASSERT_GE(v, 0.0);
                    if (i != j) ASSERT_EQ(v > 0.0, g.has_edge(i, j));
                }
            ASSERT_LT(w.w_bar, 1.0);
            ASSERT_LT(w.lambda2, 1.0);
        }
    }
}

TEST(Laplacian, ConsensusVectorIsAnnihilated) {
    const MixingMatrix w = metropolis_weights(generate_geometric_graph(12, 3));
    VectorXd x(12 * 3);
    for (int i = 0; i < 12; ++i) x.segment(i * 3, 3) << 1.5, -2.0, 7.0;
    EXPECT_NEAR(laplacian_quadratic(w, x), 0.0, 1e-12);
    EXPECT_LE(laplacian_apply(w, x).norm(), 1e-12);
}

TEST(Laplacian, TwoNodeHandValue) {
    const MixingMatrix w = metropolis_weights(graph_from_edges(2, {{0, 1}}));
    ASSERT_DOUBLE_EQ(w.weight(0, 1), 1.0);
    VectorXd x(2);
    x << 1.0, -1.0;
    EXPECT_DOUBLE_EQ(laplacian_quadratic(w, x), 4.0);
}

TEST(Laplacian, MatchesDenseAndIsNonnegative) {
    Gen gen(11);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t N = gen.index(2, 15);
        const std::size_t n = gen.index(1, 4);
        const MixingMatrix w = metropolis_weights(gen.connected_graph(N, 0.3));
        const VectorXd x = gen.vector(static_cast<Eigen::Index>(N * n));
        const MatrixXd Lap = testing_support::kron_identity(MatrixXd::Identity(N, N) - w.dense(), static_cast<Eigen::Index>(n));
        const double dense = x.dot(Lap * x);
        const double value = laplacian_quadratic(w, x);
        EXPECT_GE(value, -1e-12);
        EXPECT_LE(std::abs(value - dense), 1e-10 * std::max(1.0, std::abs(dense)));
        EXPECT_LE((laplacian_apply(w, x) - Lap * x).norm(), 1e-10 * std::max(1.0, x.norm()));
    }
}

TEST(Laplacian, DimensionMismatch) {
    const MixingMatrix w = metropolis_weights(path3());
    EXPECT_THROW(laplacian_quadratic(w, VectorXd::Zero(4)), DimensionMismatch);
}

TEST(MixingJson, RoundTripIsBitwise) {
    const MixingMatrix w = metropolis_weights(generate_geometric_graph(30, 5));
    const MixingMatrix back = mixing_from_json(nlohmann::json::parse(to_json(w).dump()));
    EXPECT_EQ(back.neighbors, w.neighbors);
    EXPECT_EQ(back.weights, w.weights);
    EXPECT_EQ(back.diag, w.diag);
    EXPECT_EQ(back.lambda2, w.lambda2);
    EXPECT_EQ(back.w_bar, w.w_bar);
}

TEST(MixingJson, RejectsWeightOnNonEdge) {
    nlohmann::json doc = to_json(metropolis_weights(path3()));
    doc["weights"].push_back({0, 2, 0.1});
    EXPECT_THROW(mixing_from_json(doc), InvalidNetwork);
}
