#pragma once

// Local cost families: synthetic strongly convex quadratics and L2-regularized
// logistic regression partitioned across nodes.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "efix/errors.hpp"

namespace efix {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// f_i(y) = 1/2 (y - b_i)^T B_ii (y - b_i).
struct QuadraticProblem {
    std::size_t node_count = 0;
    std::size_t dim = 0;
    std::vector<MatrixXd> B;
    std::vector<VectorXd> b;
};

struct ProblemConstants {
    double L = 0.0;
    double mu = 0.0;
    double kappa = 0.0;  // mu L / (mu + L)
    double J = 0.0;      // sqrt(2 L f(0))
    double f0 = 0.0;
};

inline ProblemConstants make_constants(double L, double mu, double f0) {
    ProblemConstants c;
    c.L = L;
    c.mu = mu;
    c.kappa = mu * L / (mu + L);
    c.f0 = f0;
    c.J = std::sqrt(2.0 * L * f0);
    return c;
}

/// B_ii = P_i S_i P_i with S_i ~ U[1,101] diagonal and P_i the eigenvectors of
/// the symmetric part of a standard normal matrix; b_i ~ U[1,31].
inline QuadraticProblem generate_quadratic(std::size_t node_count, std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> spectrum(1.0, 101.0);
    std::uniform_real_distribution<double> offset(1.0, 31.0);

    const auto n = static_cast<Eigen::Index>(dim);
    QuadraticProblem p;
    p.node_count = node_count;
    p.dim = dim;
    for (std::size_t i = 0; i < node_count; ++i) {
        MatrixXd C(n, n);
        for (Eigen::Index c = 0; c < n; ++c)
            for (Eigen::Index r = 0; r < n; ++r) C(r, c) = normal(rng);
        Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (C + C.transpose()));
        const MatrixXd& P = eig.eigenvectors();
        VectorXd s(n);
        for (Eigen::Index k = 0; k < n; ++k) s(k) = spectrum(rng);
        MatrixXd Bii = P * s.asDiagonal() * P.transpose();
        Bii = 0.5 * (Bii + Bii.transpose());  // exact symmetry
        VectorXd bi(n);
        for (Eigen::Index k = 0; k < n; ++k) bi(k) = offset(rng);
        p.B.push_back(std::move(Bii));
        p.b.push_back(std::move(bi));
    }
    return p;
}

inline ProblemConstants quadratic_constants(const QuadraticProblem& p) {
    double L = 0.0;
    double mu = std::numeric_limits<double>::infinity();
    double f0 = 0.0;
    for (std::size_t i = 0; i < p.node_count; ++i) {
        Eigen::SelfAdjointEigenSolver<MatrixXd> eig(p.B[i], Eigen::EigenvaluesOnly);
        mu = std::min(mu, eig.eigenvalues().minCoeff());
        L = std::max(L, eig.eigenvalues().maxCoeff());
        f0 += 0.5 * p.b[i].dot(p.B[i] * p.b[i]);
    }
    return make_constants(L, mu, f0);
}

inline void validate(const QuadraticProblem& p) {
    if (p.B.size() != p.node_count || p.b.size() != p.node_count)
        throw DimensionMismatch("quadratic problem block count differs from N");
    const auto n = static_cast<Eigen::Index>(p.dim);
    for (std::size_t i = 0; i < p.node_count; ++i) {
        if (p.B[i].rows() != n || p.B[i].cols() != n || p.b[i].size() != n)
            throw DimensionMismatch("quadratic block " + std::to_string(i) + " has wrong shape");
    }
}

inline nlohmann::json to_json(const QuadraticProblem& p) {
    nlohmann::json blocks = nlohmann::json::array();
    nlohmann::json offsets = nlohmann::json::array();
    for (std::size_t i = 0; i < p.node_count; ++i) {
        std::vector<double> flat;
        flat.reserve(p.dim * p.dim);
        for (Eigen::Index r = 0; r < p.B[i].rows(); ++r)
            for (Eigen::Index c = 0; c < p.B[i].cols(); ++c) flat.push_back(p.B[i](r, c));
        blocks.push_back(flat);
        offsets.push_back(std::vector<double>(p.b[i].data(), p.b[i].data() + p.b[i].size()));
    }
    return {{"n", p.dim}, {"N", p.node_count}, {"B", blocks}, {"b", offsets}};
}

inline QuadraticProblem quadratic_from_json(const nlohmann::json& doc) {
    QuadraticProblem p;
    p.dim = doc.at("n").get<std::size_t>();
    p.node_count = doc.at("N").get<std::size_t>();
    const auto n = static_cast<Eigen::Index>(p.dim);
    for (const auto& flat_json : doc.at("B")) {
        const auto flat = flat_json.get<std::vector<double>>();
        if (flat.size() != p.dim * p.dim) throw DimensionMismatch("B block is not n*n");
        MatrixXd Bii(n, n);
        for (Eigen::Index r = 0; r < n; ++r)
            for (Eigen::Index c = 0; c < n; ++c) Bii(r, c) = flat[static_cast<std::size_t>(r * n + c)];
        p.B.push_back(std::move(Bii));
    }
    for (const auto& vec_json : doc.at("b")) {
        const auto values = vec_json.get<std::vector<double>>();
        p.b.push_back(Eigen::Map<const VectorXd>(values.data(), static_cast<Eigen::Index>(values.size())));
    }
    validate(p);
    return p;
}

// ---------------------------------------------------------------------------
// Logistic regression data
// ---------------------------------------------------------------------------

/// Labelled samples with labels in {-1, +1}.
struct Dataset {
    std::size_t dim = 0;
    std::vector<VectorXd> features;
    std::vector<int> labels;

    std::size_t size() const { return features.size(); }
};

/// Maps raw file labels onto {-1, +1}.
using LabelMap = std::map<long long, int>;

inline LabelMap default_label_map() { return {{-1, -1}, {0, -1}, {1, 1}}; }

/// LIBSVM sparse text: "label idx:val idx:val ..." with 1-based indices.
/// The dimension is the largest index seen (or `min_dim` if larger).
inline Dataset parse_libsvm(std::istream& in, const LabelMap& labels = default_label_map(),
                            std::size_t min_dim = 0) {
    struct Row {
        int label;
        std::vector<std::pair<std::size_t, double>> entries;
    };
    std::vector<Row> rows;
    std::size_t max_index = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream tokens(line);
        std::string token;
        if (!(tokens >> token)) continue;  // blank line
        double raw_label = 0.0;
        try {
            std::size_t used = 0;
            raw_label = std::stod(token, &used);
            if (used != token.size()) throw std::invalid_argument(token);
        } catch (const std::exception&) {
            throw ParseError(line_no, "bad label '" + token + "'");
        }
        if (raw_label != std::floor(raw_label)) throw ParseError(line_no, "non-integer label '" + token + "'");
        const auto it = labels.find(static_cast<long long>(raw_label));
        if (it == labels.end()) throw ParseError(line_no, "unknown label '" + token + "'");
        Row row{it->second, {}};
        while (tokens >> token) {
            const auto colon = token.find(':');
            if (colon == std::string::npos) throw ParseError(line_no, "expected idx:val, got '" + token + "'");
            try {
                std::size_t used_idx = 0;
                std::size_t used_val = 0;
                const std::string idx_text = token.substr(0, colon);
                const std::string val_text = token.substr(colon + 1);
                const long long idx = std::stoll(idx_text, &used_idx);
                const double val = std::stod(val_text, &used_val);
                if (used_idx != idx_text.size() || used_val != val_text.size() || idx < 1)
                    throw std::invalid_argument(token);
                row.entries.emplace_back(static_cast<std::size_t>(idx), val);
                max_index = std::max(max_index, static_cast<std::size_t>(idx));
            } catch (const std::exception&) {
                throw ParseError(line_no, "bad feature '" + token + "'");
            }
        }
        rows.push_back(std::move(row));
    }
    Dataset data;
    data.dim = std::max(max_index, min_dim);
    for (const auto& row : rows) {
        VectorXd d = VectorXd::Zero(static_cast<Eigen::Index>(data.dim));
        for (auto [idx, val] : row.entries) d(static_cast<Eigen::Index>(idx - 1)) = val;
        data.features.push_back(std::move(d));
        data.labels.push_back(row.label);
    }
    return data;
}

inline Dataset load_libsvm(const std::string& path, const LabelMap& labels = default_label_map(),
                           std::size_t min_dim = 0) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open dataset '" + path + "'");
    return parse_libsvm(in, labels, min_dim);
}

inline void write_libsvm(std::ostream& out, const Dataset& data) {
    out.precision(17);
    for (std::size_t j = 0; j < data.size(); ++j) {
        out << (data.labels[j] > 0 ? "+1" : "-1");
        for (Eigen::Index k = 0; k < data.features[j].size(); ++k)
            if (data.features[j](k) != 0.0) out << ' ' << (k + 1) << ':' << data.features[j](k);
        out << '\n';
    }
}

/// Synthetic binary classification data: Gaussian features, labels from a
/// random hyperplane with 10% label noise.
inline Dataset generate_logistic_dataset(std::size_t samples, std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto n = static_cast<Eigen::Index>(dim);
    VectorXd truth(n);
    for (Eigen::Index k = 0; k < n; ++k) truth(k) = normal(rng);
    Dataset data;
    data.dim = dim;
    for (std::size_t j = 0; j < samples; ++j) {
        VectorXd d(n);
        for (Eigen::Index k = 0; k < n; ++k) d(k) = normal(rng);
        int label = d.dot(truth) >= 0.0 ? 1 : -1;
        if (unit(rng) < 0.1) label = -label;
        data.features.push_back(std::move(d));
        data.labels.push_back(label);
    }
    return data;
}

/// parts[i] lists the sample indices owned by node i.
using Partition = std::vector<std::vector<std::size_t>>;

/// Random near-equal split; the first (T mod N) nodes get one extra sample.
inline Partition partition_data(const Dataset& data, std::size_t node_count, std::uint64_t seed) {
    if (node_count == 0) throw ConfigError("partition needs at least one node");
    if (data.size() < node_count)
        throw ConfigError("dataset has " + std::to_string(data.size()) + " samples for " +
                          std::to_string(node_count) + " nodes");
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    Partition parts(node_count);
    const std::size_t base = data.size() / node_count;
    const std::size_t extra = data.size() % node_count;
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < node_count; ++i) {
        const std::size_t take = base + (i < extra ? 1 : 0);
        parts[i].assign(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                        order.begin() + static_cast<std::ptrdiff_t>(cursor + take));
        std::sort(parts[i].begin(), parts[i].end());
        cursor += take;
    }
    return parts;
}

/// Largest eigenvalue of the node Gram matrix sum_{j in J_i} d_j d_j^T.
inline double node_gram_norm(const Dataset& data, const std::vector<std::size_t>& part) {
    const auto n = static_cast<Eigen::Index>(data.dim);
    if (part.empty() || n == 0) return 0.0;
    MatrixXd gram = MatrixXd::Zero(n, n);
    for (std::size_t j : part) gram.selfadjointView<Eigen::Lower>().rankUpdate(data.features[j]);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(gram.selfadjointView<Eigen::Lower>(), Eigen::EigenvaluesOnly);
    return std::max(0.0, eig.eigenvalues().maxCoeff());
}

/// Divides every feature vector by c = max_i sqrt(node_gram_norm_i), so the
/// worst node's Gram matrix has unit norm afterwards.
inline Dataset scale_features(const Dataset& data, const Partition& parts) {
    double worst = 0.0;
    for (const auto& part : parts) worst = std::max(worst, node_gram_norm(data, part));
    if (!(worst > 0.0)) throw NumericalFailure("cannot scale an all-zero dataset");
    const double c = std::sqrt(worst);
    Dataset scaled = data;
    for (auto& d : scaled.features) d /= c;
    return scaled;
}

/// f_i(y) = sum_{j in J_i} log(1 + exp(-zeta_j d_j^T y)) + mu/2 |y|^2.
struct LogisticProblem {
    std::size_t node_count = 0;
    std::size_t dim = 0;
    Dataset data;
    Partition parts;
    double mu = 1e-4;
};

/// Partition, then scale, then attach the regularizer.
inline LogisticProblem make_logistic_problem(const Dataset& raw, std::size_t node_count, std::uint64_t seed,
                                             double mu) {
    LogisticProblem p;
    p.node_count = node_count;
    p.dim = raw.dim;
    p.parts = partition_data(raw, node_count, seed);
    p.data = scale_features(raw, p.parts);
    p.mu = mu;
    return p;
}

// JSON: {"n", "N", "mu", "features": [[..]], "labels": [..], "parts": [[..]]}; features are stored scaled.
inline nlohmann::json to_json(const LogisticProblem& p) {
    nlohmann::json features = nlohmann::json::array();
    for (const auto& d : p.data.features) features.push_back(std::vector<double>(d.data(), d.data() + d.size()));
    return {{"n", p.dim}, {"N", p.node_count}, {"mu", p.mu}, {"features", features}, {"labels", p.data.labels},
            {"parts", p.parts}};
}

inline LogisticProblem logistic_from_json(const nlohmann::json& doc) {
    LogisticProblem p;
    p.dim = doc.at("n").get<std::size_t>();
    p.node_count = doc.at("N").get<std::size_t>();
    p.mu = doc.at("mu").get<double>();
    p.data.dim = p.dim;
    for (const auto& f : doc.at("features")) {
        const auto values = f.get<std::vector<double>>();
        if (values.size() != p.dim) throw DimensionMismatch("feature vector length differs from n");
        p.data.features.push_back(Eigen::Map<const VectorXd>(values.data(), static_cast<Eigen::Index>(values.size())));
    }
    p.data.labels = doc.at("labels").get<std::vector<int>>();
    p.parts = doc.at("parts").get<Partition>();
    if (p.data.labels.size() != p.data.features.size()) throw DimensionMismatch("label count differs from sample count");
    if (p.parts.size() != p.node_count) throw DimensionMismatch("partition count differs from N");
    for (const auto& part : p.parts)
        for (std::size_t j : part)
            if (j >= p.data.size()) throw DimensionMismatch("partition index out of range");
    if (!(p.mu > 0.0)) throw ConfigError("mu must be positive");
    return p;
}

/// Scaled data gives l_i <= 1 + mu; L is set to 1 + mu and f(0) = T log 2.
inline ProblemConstants logistic_constants(const LogisticProblem& p) {
    return make_constants(1.0 + p.mu, p.mu, static_cast<double>(p.data.size()) * std::log(2.0));
}

namespace detail {

// log(1 + exp(-t))
inline double softplus_neg(double t) {
    return t > 0.0 ? std::log1p(std::exp(-t)) : -t + std::log1p(std::exp(t));
}

// 1 / (1 + exp(t)) = (psi - 1) / psi with psi = 1 + exp(-t)
inline double sigmoid_neg(double t) {
    if (t >= 0.0) {
        const double e = std::exp(-t);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(t));
}

} // namespace detail

/// Curvature factor (psi - 1) / psi^2 at margin t = zeta d^T y.
inline double logistic_curvature(double margin) {
    const double s = detail::sigmoid_neg(margin);
    return s * (1.0 - s);
}

inline VectorXd logistic_gradient(const LogisticProblem& p, std::size_t i, const VectorXd& y) {
    VectorXd g = VectorXd::Zero(static_cast<Eigen::Index>(p.dim));
    for (std::size_t j : p.parts[i]) {
        const auto& d = p.data.features[j];
        const double zeta = p.data.labels[j];
        // (1 - psi) / psi = -sigmoid(-t)
        g -= detail::sigmoid_neg(zeta * d.dot(y)) * zeta * d;
    }
    g += p.mu * y;
    return g;
}

inline MatrixXd logistic_hessian(const LogisticProblem& p, std::size_t i, const VectorXd& y) {
    const auto n = static_cast<Eigen::Index>(p.dim);
    MatrixXd h = MatrixXd::Zero(n, n);
    for (std::size_t j : p.parts[i]) {
        const auto& d = p.data.features[j];
        const double factor = logistic_curvature(p.data.labels[j] * d.dot(y));
        h.noalias() += factor * d * d.transpose();
    }
    h.diagonal().array() += p.mu;
    return h;
}

inline double logistic_value(const LogisticProblem& p, std::size_t i, const VectorXd& y) {
    double v = 0.0;
    for (std::size_t j : p.parts[i]) v += detail::softplus_neg(p.data.labels[j] * p.data.features[j].dot(y));
    return v + 0.5 * p.mu * y.squaredNorm();
}

// ---------------------------------------------------------------------------
// Family interface used by the solvers: node_count, dimension, local value,
// gradient, Hessian, and the model right-hand side H_i(y) y - grad f_i(y).
// ---------------------------------------------------------------------------

inline std::size_t node_count(const QuadraticProblem& p) { return p.node_count; }
inline std::size_t node_count(const LogisticProblem& p) { return p.node_count; }
inline std::size_t dimension(const QuadraticProblem& p) { return p.dim; }
inline std::size_t dimension(const LogisticProblem& p) { return p.dim; }

inline double local_objective(const QuadraticProblem& p, std::size_t i, const VectorXd& y) {
    const VectorXd r = y - p.b[i];
    return 0.5 * r.dot(p.B[i] * r);
}
inline double local_objective(const LogisticProblem& p, std::size_t i, const VectorXd& y) {
    return logistic_value(p, i, y);
}

inline VectorXd local_gradient(const QuadraticProblem& p, std::size_t i, const VectorXd& y) {
    return p.B[i] * (y - p.b[i]);
}
inline VectorXd local_gradient(const LogisticProblem& p, std::size_t i, const VectorXd& y) {
    return logistic_gradient(p, i, y);
}

inline MatrixXd local_hessian(const QuadraticProblem& p, std::size_t i, const VectorXd&) { return p.B[i]; }
inline MatrixXd local_hessian(const LogisticProblem& p, std::size_t i, const VectorXd& y) {
    return logistic_hessian(p, i, y);
}

/// Linear term of the local quadratic model at y. A quadratic is its own
/// model, so this is B_ii b_i independent of y.
inline VectorXd model_rhs(const QuadraticProblem& p, std::size_t i, const VectorXd&) { return p.B[i] * p.b[i]; }
inline VectorXd model_rhs(const LogisticProblem& p, std::size_t i, const VectorXd& y) {
    return logistic_hessian(p, i, y) * y - logistic_gradient(p, i, y);
}

/// Samples held by node i (zero for the quadratic family).
inline std::size_t local_sample_count(const QuadraticProblem&, std::size_t) { return 0; }
inline std::size_t local_sample_count(const LogisticProblem& p, std::size_t i) { return p.parts[i].size(); }

template <class Problem>
concept LocalCostFamily = requires(const Problem& p, std::size_t i, const VectorXd& y) {
    { node_count(p) } -> std::convertible_to<std::size_t>;
    { dimension(p) } -> std::convertible_to<std::size_t>;
    { local_objective(p, i, y) } -> std::convertible_to<double>;
    { local_gradient(p, i, y) } -> std::convertible_to<VectorXd>;
    { local_hessian(p, i, y) } -> std::convertible_to<MatrixXd>;
    { model_rhs(p, i, y) } -> std::convertible_to<VectorXd>;
    { local_sample_count(p, i) } -> std::convertible_to<std::size_t>;
};

template <LocalCostFamily Problem>
double global_objective(const Problem& p, const VectorXd& y) {
    double total = 0.0;
    for (std::size_t i = 0; i < node_count(p); ++i) total += local_objective(p, i, y);
    return total;
}

template <LocalCostFamily Problem>
VectorXd global_gradient(const Problem& p, const VectorXd& y) {
    VectorXd g = VectorXd::Zero(static_cast<Eigen::Index>(dimension(p)));
    for (std::size_t i = 0; i < node_count(p); ++i) g += local_gradient(p, i, y);
    return g;
}

template <LocalCostFamily Problem>
MatrixXd global_hessian(const Problem& p, const VectorXd& y) {
    const auto n = static_cast<Eigen::Index>(dimension(p));
    MatrixXd h = MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i < node_count(p); ++i) h += local_hessian(p, i, y);
    return h;
}

/// Stacked gradient of F(x) = sum_i f_i(x_i).
template <LocalCostFamily Problem>
VectorXd stacked_gradient(const Problem& p, const VectorXd& x) {
    const auto n = static_cast<Eigen::Index>(dimension(p));
    if (x.size() != n * static_cast<Eigen::Index>(node_count(p)))
        throw DimensionMismatch("stacked vector does not match the problem");
    VectorXd g(x.size());
    for (std::size_t i = 0; i < node_count(p); ++i) {
        const auto row = static_cast<Eigen::Index>(i) * n;
        g.segment(row, n) = local_gradient(p, i, x.segment(row, n));
    }
    return g;
}

} // namespace efix
