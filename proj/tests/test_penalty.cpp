#include <cmath>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace efix;
using testing_support::Gen;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// n=1, N=2, B = diag(1,1), b = (0,2), w_12 = 1.
struct TwoNode {
    QuadraticProblem p = testing_support::scalar_problem({1, 1}, {0, 2});
    MixingMatrix w = metropolis_weights(graph_from_edges(2, {{0, 1}}));
};

VectorXd vec(std::initializer_list<double> v) {
    VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index k = 0;
    for (double x : v) out(k++) = x;
    return out;
}

MixingMatrix isolated(std::size_t N) { return metropolis_weights(graph_from_edges(N, {})); }

struct Instance {
    QuadraticProblem p;
    MixingMatrix w;
};

Instance random_instance(Gen& gen, std::size_t max_nodes = 12, std::size_t max_dim = 4) {
    Instance inst;
    const std::size_t N = gen.index(2, max_nodes);
    const std::size_t n = gen.index(1, max_dim);
    inst.w = metropolis_weights(gen.connected_graph(N, 0.25));
    inst.p = gen.quadratic(N, n, 1.0, 20.0);
    return inst;
}

}  // namespace

TEST(AssembleQuadratic, TwoNodeHandAssembly) {
    TwoNode t;
    const PenaltySubproblem sub = assemble_quadratic(t.p, t.w, 1.0, 1.0);
    const MatrixXd A = dense_matrix(sub, t.w);
    EXPECT_EQ(A, (MatrixXd(2, 2) << 2, -1, -1, 2).finished());
    EXPECT_EQ(sub.blocks[0].d(0), 2.0);
    EXPECT_EQ(sub.blocks[1].d(0), 2.0);
    EXPECT_EQ(dense_iteration_matrix(sub, t.w), (MatrixXd(2, 2) << 0, 0.5, 0.5, 0).finished());
    EXPECT_EQ(dense_offset(sub), vec({0, 1}));
}

TEST(AssembleQuadratic, IsolatedRowKeepsB) {
    Gen gen(1);
    const QuadraticProblem p = gen.quadratic(1, 3);
    for (double theta : {0.1, 5.0, 1e6}) {
        const PenaltySubproblem sub = assemble_quadratic(p, isolated(1), theta, 0.5);
        EXPECT_EQ(sub.blocks[0].A_self, p.B[0]);
    }
}

TEST(AssembleQuadratic, MatchesDenseOracle) {
    Gen gen(2);
    for (int trial = 0; trial < 25; ++trial) {
        const Instance inst = random_instance(gen);
        const double theta = gen.uniform(0.1, 100.0);
        const PenaltySubproblem sub = assemble_quadratic(inst.p, inst.w, theta, 0.3);
        const MatrixXd oracle = testing_support::dense_penalty(inst.p.B, testing_support::dense_metropolis(
                                                                              graph_of(inst.w)), theta);
        EXPECT_LE((dense_matrix(sub, inst.w) - oracle).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, theta));
        EXPECT_LE((stacked_rhs(sub) - testing_support::stacked_Bb(inst.p)).norm(), 0.0);
    }
}

TEST(AssembleQuadratic, SpectralBounds) {
    Gen gen(3);
    for (int trial = 0; trial < 25; ++trial) {
        const Instance inst = random_instance(gen);
        const ProblemConstants c = quadratic_constants(inst.p);
        const double theta = gen.uniform(0.1, 50.0);
        const MatrixXd A = dense_matrix(assemble_quadratic(inst.p, inst.w, theta, 0.5), inst.w);
        EXPECT_LE((A - A.transpose()).cwiseAbs().maxCoeff(), 0.0);
        Eigen::SelfAdjointEigenSolver<MatrixXd> eig(A, Eigen::EigenvaluesOnly);
        EXPECT_GE(eig.eigenvalues().minCoeff(), c.mu * (1 - 1e-10));
        EXPECT_LE(eig.eigenvalues().maxCoeff(), (c.L + 2 * theta) * (1 + 1e-12));
    }
}

TEST(AssembleQuadratic, RejectsBadParameters) {
    TwoNode t;
    EXPECT_THROW(assemble_quadratic(t.p, t.w, 0.0, 0.5), ConfigError);
    EXPECT_THROW(assemble_quadratic(t.p, t.w, 1.0, 0.0), NonContractive);
    EXPECT_THROW(assemble_quadratic(t.p, isolated(3), 1.0, 0.5), DimensionMismatch);
}

TEST(AssembleModel, QuadraticPathReproducesAssembly) {
    Gen gen(4);
    for (int trial = 0; trial < 10; ++trial) {
        const Instance inst = random_instance(gen);
        const VectorXd x = gen.vector(static_cast<Eigen::Index>(inst.p.node_count * inst.p.dim));
        const PenaltySubproblem a = assemble_quadratic(inst.p, inst.w, 7.0, 0.4);
        const PenaltySubproblem b = assemble_model(inst.p, x, inst.w, 7.0, 0.4);
        for (std::size_t i = 0; i < a.node_count(); ++i) {
            EXPECT_EQ(a.blocks[i].A_self, b.blocks[i].A_self);
            EXPECT_EQ(a.blocks[i].M_self, b.blocks[i].M_self);
            EXPECT_EQ(a.blocks[i].neighbor_scale, b.blocks[i].neighbor_scale);
            EXPECT_EQ(a.blocks[i].c, b.blocks[i].c);
            EXPECT_EQ(a.blocks[i].p, b.blocks[i].p);
        }
    }
}

TEST(AssembleModel, EmptyNodeHasRegularizerOnly) {
    LogisticProblem p;
    p.node_count = 2;
    p.dim = 2;
    p.data.dim = 2;
    p.data.features = {VectorXd::Ones(2)};
    p.data.labels = {1};
    p.parts = {{0}, {}};
    p.mu = 0.25;
    const MixingMatrix w = metropolis_weights(graph_from_edges(2, {{0, 1}}));
    const double theta = 3.0;
    const PenaltySubproblem sub = assemble_model(p, VectorXd::Ones(4), w, theta, 0.5);
    const MatrixXd expected = (p.mu + theta * (1.0 - w.diag[1])) * MatrixXd::Identity(2, 2);
    EXPECT_LE((sub.blocks[1].A_self - expected).norm(), 1e-15);
}

TEST(AssembleModel, ModelGradientAtExpansionPoint) {
    const LogisticProblem p =
        make_logistic_problem(generate_logistic_dataset(60, 3, 5), 6, 5, 1e-3);
    const MixingMatrix w = metropolis_weights(generate_geometric_graph(6, 5));
    Gen gen(6);
    for (int trial = 0; trial < 10; ++trial) {
        const VectorXd x = gen.vector(18);
        const double theta = gen.uniform(0.5, 20.0);
        const PenaltySubproblem sub = assemble_model(p, x, w, theta, 0.5);
        const VectorXd expected = stacked_gradient(p, x) + theta * laplacian_apply(w, x);
        EXPECT_LE((penalty_gradient(sub, w, x) - expected).norm(), 1e-10 * std::max(1.0, expected.norm()));
    }
}

TEST(RelaxationBound, ClosedForms) {
    for (double L : {0.5, 1.0, 3.7, 101.0}) {
        for (double wbar : {0.0, 0.25, 0.5, 0.9}) {
            EXPECT_DOUBLE_EQ(relaxation_bound(2 * L, L, wbar), 4 * (1 - wbar) / 5);
        }
    }
    EXPECT_DOUBLE_EQ(relaxation_bound(2.0, 1.0, 0.5), 0.4);
    double prev = 0.0;
    for (double theta = 0.1; theta < 1e7; theta *= 3) {
        const double q = relaxation_bound(theta, 2.0, 0.3);
        EXPECT_GT(q, prev);
        EXPECT_LT(q, 0.7);
        prev = q;
    }
    EXPECT_NEAR(relaxation_bound(1e12, 2.0, 0.3), 0.7, 1e-11);
}

TEST(JorStep, TwoNodeIterates) {
    TwoNode t;
    const PenaltySubproblem sub = assemble_quadratic(t.p, t.w, 1.0, 1.0);
    VectorXd z = VectorXd::Zero(2);
    z = jor_step(z, sub, t.w);
    EXPECT_EQ(z, vec({0, 1}));
    z = jor_step(z, sub, t.w);
    EXPECT_EQ(z, vec({0.5, 1}));
    for (int k = 0; k < 80; ++k) z = jor_step(z, sub, t.w);
    EXPECT_NEAR(z(0), 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(z(1), 4.0 / 3.0, 1e-12);
    const VectorXd exact = direct_solve(sub, t.w);
    EXPECT_NEAR(exact(0), 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(exact(1), 4.0 / 3.0, 1e-15);
}

TEST(JorStep, FixedPointAndDenseEquivalence) {
    Gen gen(7);
    for (int trial = 0; trial < 20; ++trial) {
        const Instance inst = random_instance(gen);
        const double theta = gen.uniform(0.5, 30.0);
        const double q = 0.9 * relaxation_bound(theta, quadratic_constants(inst.p).L, inst.w.w_bar);
        const PenaltySubproblem sub = assemble_quadratic(inst.p, inst.w, theta, q);
        const VectorXd star = direct_solve(sub, inst.w);
        EXPECT_LE((jor_step(star, sub, inst.w) - star).norm(), 1e-12 * std::max(1.0, star.norm()));
        const VectorXd z = gen.vector(star.size());
        const VectorXd dense = dense_iteration_matrix(sub, inst.w) * z + dense_offset(sub);
        EXPECT_LE((jor_step(z, sub, inst.w) - dense).norm(), 1e-12 * std::max(1.0, dense.norm()));
    }
}

TEST(JorStep, DiagonalSystemSolvedInOneStep) {
    QuadraticProblem p;
    p.node_count = 3;
    p.dim = 2;
    for (int i = 0; i < 3; ++i) {
        p.B.push_back((VectorXd(2) << 2.0 + i, 5.0).finished().asDiagonal());
        p.b.push_back(vec({1.0 * i, -2.0}));
    }
    const MixingMatrix w = isolated(3);
    const PenaltySubproblem sub = assemble_quadratic(p, w, 1.0, 1.0);
    const VectorXd z = jor_step(VectorXd::Constant(6, 9.0), sub, w);
    VectorXd expected(6);
    for (std::size_t i = 0; i < 3; ++i) expected.segment(static_cast<Eigen::Index>(2 * i), 2) = p.b[i];
    EXPECT_LE((z - expected).norm(), 1e-15);
    const ContractionEstimate est = contraction_estimate(sub, w);
    EXPECT_EQ(est.rho, contraction_floor);
    EXPECT_FALSE(est.radius_fallback);
}

TEST(JorStep, DimensionMismatch) {
    TwoNode t;
    const PenaltySubproblem sub = assemble_quadratic(t.p, t.w, 1.0, 1.0);
    EXPECT_THROW(jor_step(VectorXd::Zero(3), sub, t.w), DimensionMismatch);
}

TEST(PenaltyGradient, HandValuesAndDenseOracle) {
    TwoNode t;
    const PenaltySubproblem sub = assemble_quadratic(t.p, t.w, 1.0, 1.0);
    const VectorXd g0 = penalty_gradient(sub, t.w, VectorXd::Zero(2));
    EXPECT_EQ(g0, vec({0, -2}));
    EXPECT_EQ(g0.norm(), 2.0);
    EXPECT_LE(penalty_gradient(sub, t.w, direct_solve(sub, t.w)).norm(), 1e-10);
    EXPECT_DOUBLE_EQ(cbar_exact(sub), 2.0);

    Gen gen(8);
    for (int trial = 0; trial < 20; ++trial) {
        const Instance inst = random_instance(gen);
        const double theta = gen.uniform(0.5, 30.0);
        const PenaltySubproblem s = assemble_quadratic(inst.p, inst.w, theta, 0.5);
        const MatrixXd A = testing_support::dense_penalty(inst.p.B, inst.w.dense(), theta);
        const VectorXd z = gen.vector(A.rows());
        const VectorXd dense = A * z - testing_support::stacked_Bb(inst.p);
        EXPECT_LE((penalty_gradient(s, inst.w, z) - dense).norm(), 1e-12 * std::max(1.0, dense.norm()));
    }
}

TEST(Contraction, TwoNodeNormIsHalf) {
    TwoNode t;
    const ContractionEstimate est = contraction_estimate(assemble_quadratic(t.p, t.w, 1.0, 1.0), t.w);
    EXPECT_NEAR(est.rho, 0.5, 1e-15);
    EXPECT_EQ(est.constant, 1.0);
    EXPECT_FALSE(est.radius_fallback);
}

TEST(Contraction, SmallRelaxationApproachesOneAndZeroIsRejected) {
    TwoNode t;
    const ContractionEstimate est = contraction_estimate(assemble_quadratic(t.p, t.w, 1.0, 1e-6), t.w);
    EXPECT_GT(est.rho, 0.999);
    EXPECT_LT(est.rho, 1.0);
    PenaltySubproblem zero = assemble_quadratic(t.p, t.w, 1.0, 0.5);
    zero.q = 0.0;
    EXPECT_THROW(contraction_estimate(zero, t.w), NonContractive);
}

TEST(Contraction, OutsideConvergenceRegionIsRejected) {
    TwoNode t;
    // D^-1 A has eigenvalues 1/2 and 3/2; q = 2 gives spectral radius 2.
    EXPECT_THROW(contraction_estimate(assemble_quadratic(t.p, t.w, 1.0, 2.0), t.w), NonContractive);
}

TEST(Contraction, RelaxationIntervalContracts) {
    Gen gen(9);
    for (int trial = 0; trial < 30; ++trial) {
        const Instance inst = random_instance(gen);
        const ProblemConstants c = quadratic_constants(inst.p);
        const double theta = gen.uniform(0.1, 100.0);
        const double q = gen.uniform(0.01, 0.999) * relaxation_bound(theta, c.L, inst.w.w_bar);
        const PenaltySubproblem sub = assemble_quadratic(inst.p, inst.w, theta, q);
        ASSERT_LE(static_cast<int>(sub.stacked_size()), 200);
        EXPECT_LT(jor_spectral_radius(sub, inst.w), 1.0);
        const ContractionEstimate est = contraction_estimate(sub, inst.w);
        EXPECT_GT(est.rho, 0.0);
        EXPECT_LT(est.rho, 1.0);
        const MatrixXd M = dense_iteration_matrix(sub, inst.w);
        Eigen::JacobiSVD<MatrixXd> svd(M);
        const double norm = svd.singularValues()(0);
        if (!est.radius_fallback) {
            EXPECT_NEAR(est.rho, norm, 1e-10);
        } else {
            EXPECT_GE(norm, 1.0);
        }
    }
}

TEST(Contraction, IterateErrorBound) {
    Gen gen(10);
    for (int trial = 0; trial < 20; ++trial) {
        const Instance inst = random_instance(gen);
        const ProblemConstants c = quadratic_constants(inst.p);
        const double theta = gen.uniform(0.5, 40.0);
        const double q = 0.99 * relaxation_bound(theta, c.L, inst.w.w_bar);
        const PenaltySubproblem sub = assemble_quadratic(inst.p, inst.w, theta, q);
        const ContractionEstimate est = contraction_estimate(sub, inst.w);
        const VectorXd star = direct_solve(sub, inst.w);
        VectorXd z = gen.vector(star.size(), 10.0);
        const double e0 = (z - star).norm();
        double bound = est.constant * e0;
        for (int k = 1; k <= 60; ++k) {
            z = jor_step(z, sub, inst.w);
            bound *= est.rho;
            EXPECT_LE((z - star).norm(), bound * (1 + 1e-9) + 1e-12);
        }
    }
}
