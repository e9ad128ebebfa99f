#pragma once

// Network model: random geometric graphs, Metropolis mixing weights and the
// spectral quantities of the resulting doubly stochastic matrix.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <queue>
#include <random>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "efix/errors.hpp"

namespace efix {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

/// Undirected simple graph stored as sorted neighbor lists (self excluded).
struct Graph {
    std::size_t node_count = 0;
    std::vector<std::vector<std::size_t>> neighbors;
    std::vector<Point2> coordinates;  // empty unless generated from points

    std::size_t degree(std::size_t i) const { return neighbors[i].size(); }

    std::size_t edge_count() const {
        std::size_t twice = 0;
        for (const auto& nb : neighbors) twice += nb.size();
        return twice / 2;
    }

    bool has_edge(std::size_t i, std::size_t j) const {
        return std::binary_search(neighbors[i].begin(), neighbors[i].end(), j);
    }
};

inline bool is_connected(const Graph& g) {
    if (g.node_count == 0) return false;
    std::vector<char> seen(g.node_count, 0);
    std::queue<std::size_t> frontier;
    frontier.push(0);
    seen[0] = 1;
    std::size_t reached = 1;
    while (!frontier.empty()) {
        const std::size_t v = frontier.front();
        frontier.pop();
        for (std::size_t u : g.neighbors[v]) {
            if (!seen[u]) {
                seen[u] = 1;
                ++reached;
                frontier.push(u);
            }
        }
    }
    return reached == g.node_count;
}

/// Builds a graph from an undirected edge list; duplicates are merged.
inline Graph graph_from_edges(std::size_t node_count,
                              const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
    Graph g;
    g.node_count = node_count;
    g.neighbors.assign(node_count, {});
    for (auto [i, j] : edges) {
        if (i >= node_count || j >= node_count) throw DimensionMismatch("edge endpoint out of range");
        if (i == j) throw InvalidNetwork("self loops are not edges");
        g.neighbors[i].push_back(j);
        g.neighbors[j].push_back(i);
    }
    for (auto& nb : g.neighbors) {
        std::sort(nb.begin(), nb.end());
        nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    }
    return g;
}

/// Connection radius sqrt(log(N)/N) of the geometric model.
inline double connection_radius(std::size_t node_count) {
    const double n = static_cast<double>(node_count);
    return std::sqrt(std::log(n) / n);
}

/// Links every pair of points strictly closer than connection_radius(N).
/// The result may be disconnected.
inline Graph geometric_graph_from_points(std::vector<Point2> points) {
    const std::size_t count = points.size();
    const double radius = connection_radius(count);
    Graph g;
    g.node_count = count;
    g.neighbors.assign(count, {});
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t j = i + 1; j < count; ++j) {
            const double dist = std::hypot(points[i].x - points[j].x, points[i].y - points[j].y);
            if (dist < radius) {
                g.neighbors[i].push_back(j);
                g.neighbors[j].push_back(i);
            }
        }
    }
    for (auto& nb : g.neighbors) std::sort(nb.begin(), nb.end());
    g.coordinates = std::move(points);
    return g;
}

/// Connected random geometric graph on the unit square. A disconnected sample
/// is redrawn with the next seed, up to `max_attempts` draws.
inline Graph generate_geometric_graph(std::size_t node_count, std::uint64_t seed,
                                      std::size_t max_attempts = 1000) {
    if (node_count < 2) throw GenerationFailure("geometric graph needs at least 2 nodes");
    for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
        std::mt19937_64 rng(seed + attempt);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::vector<Point2> points(node_count);
        for (auto& p : points) {
            p.x = unit(rng);
            p.y = unit(rng);
        }
        Graph g = geometric_graph_from_points(std::move(points));
        if (is_connected(g)) return g;
    }
    throw GenerationFailure("no connected geometric graph for N=" + std::to_string(node_count) +
                            " after " + std::to_string(max_attempts) + " attempts");
}

/// Symmetric doubly stochastic weights, stored row-wise along the neighbor
/// lists plus the diagonal.
struct MixingMatrix {
    std::size_t node_count = 0;
    std::vector<std::vector<std::size_t>> neighbors;
    std::vector<std::vector<double>> weights;  // weights[i][k] = w_{i, neighbors[i][k]}
    std::vector<double> diag;
    double w_bar = 0.0;
    double lambda2 = 0.0;

    double weight(std::size_t i, std::size_t j) const {
        if (i == j) return diag[i];
        const auto& nb = neighbors[i];
        auto it = std::lower_bound(nb.begin(), nb.end(), j);
        if (it == nb.end() || *it != j) return 0.0;
        return weights[i][static_cast<std::size_t>(it - nb.begin())];
    }

    Eigen::MatrixXd dense() const {
        Eigen::MatrixXd w = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(node_count),
                                                  static_cast<Eigen::Index>(node_count));
        for (std::size_t i = 0; i < node_count; ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            w(ii, ii) = diag[i];
            for (std::size_t k = 0; k < neighbors[i].size(); ++k)
                w(ii, static_cast<Eigen::Index>(neighbors[i][k])) = weights[i][k];
        }
        return w;
    }
};

/// Second largest eigenvalue modulus: the largest |lambda| once the Perron
/// eigenvalue 1 is removed. Returns 1 for disconnected or bipartite patterns.
inline double spectral_gap(const MixingMatrix& w) {
    if (w.node_count < 2) return 0.0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(w.dense(), Eigen::EigenvaluesOnly);
    const Eigen::VectorXd& values = eig.eigenvalues();  // ascending
    const Eigen::Index top = values.size() - 1;          // the Perron eigenvalue
    double modulus = std::abs(values(0));
    if (top - 1 >= 0) modulus = std::max(modulus, std::abs(values(top - 1)));
    return std::min(modulus, 1.0);
}

namespace detail {

inline void finish_mixing(MixingMatrix& w) {
    w.w_bar = w.diag.empty() ? 0.0 : *std::max_element(w.diag.begin(), w.diag.end());
    w.lambda2 = spectral_gap(w);
}

} // namespace detail

/// Metropolis rule: w_ij = 1/max(deg i, deg j) on edges, diagonal takes the
/// complement of the row.
inline MixingMatrix metropolis_weights(const Graph& g) {
    MixingMatrix w;
    w.node_count = g.node_count;
    w.neighbors = g.neighbors;
    w.weights.resize(g.node_count);
    w.diag.assign(g.node_count, 0.0);
    for (std::size_t i = 0; i < g.node_count; ++i) {
        double off = 0.0;
        for (std::size_t j : g.neighbors[i]) {
            const double wij = 1.0 / static_cast<double>(std::max(g.degree(i), g.degree(j)));
            w.weights[i].push_back(wij);
            off += wij;
        }
        w.diag[i] = std::max(0.0, 1.0 - off);  // rounding can leave -1e-16
    }
    detail::finish_mixing(w);
    return w;
}

/// Stacked-vector block size, validating x against N blocks.
inline std::size_t block_size(const MixingMatrix& w, const Eigen::VectorXd& x) {
    if (w.node_count == 0 || static_cast<std::size_t>(x.size()) % w.node_count != 0)
        throw DimensionMismatch("stacked vector length is not a multiple of N");
    return static_cast<std::size_t>(x.size()) / w.node_count;
}

/// (I - W (x) I) x using neighbor lists only.
inline Eigen::VectorXd laplacian_apply(const MixingMatrix& w, const Eigen::VectorXd& x) {
    const auto n = static_cast<Eigen::Index>(block_size(w, x));
    Eigen::VectorXd out(x.size());
    for (std::size_t i = 0; i < w.node_count; ++i) {
        const auto row = static_cast<Eigen::Index>(i) * n;
        Eigen::VectorXd acc = (1.0 - w.diag[i]) * x.segment(row, n);
        for (std::size_t k = 0; k < w.neighbors[i].size(); ++k)
            acc -= w.weights[i][k] * x.segment(static_cast<Eigen::Index>(w.neighbors[i][k]) * n, n);
        out.segment(row, n) = acc;
    }
    return out;
}

/// x^T (I - W (x) I) x = sum_i |x_i|^2 - sum_i sum_j w_ij x_i^T x_j.
inline double laplacian_quadratic(const MixingMatrix& w, const Eigen::VectorXd& x) {
    const auto n = static_cast<Eigen::Index>(block_size(w, x));
    double total = 0.0;
    for (std::size_t i = 0; i < w.node_count; ++i) {
        const auto xi = x.segment(static_cast<Eigen::Index>(i) * n, n);
        double row = (1.0 - w.diag[i]) * xi.squaredNorm();
        for (std::size_t k = 0; k < w.neighbors[i].size(); ++k)
            row -= w.weights[i][k] * xi.dot(x.segment(static_cast<Eigen::Index>(w.neighbors[i][k]) * n, n));
        total += row;
    }
    return total;
}

// JSON: {"n": N, "edges": [[i,j],...], "weights": [[i,j,w],...], "diag": [...]}

inline nlohmann::json to_json(const MixingMatrix& w) {
    nlohmann::json edges = nlohmann::json::array();
    nlohmann::json weights = nlohmann::json::array();
    for (std::size_t i = 0; i < w.node_count; ++i) {
        for (std::size_t k = 0; k < w.neighbors[i].size(); ++k) {
            const std::size_t j = w.neighbors[i][k];
            if (i < j) {
                edges.push_back({i, j});
                weights.push_back({i, j, w.weights[i][k]});
            }
        }
    }
    return {{"n", w.node_count}, {"edges", edges}, {"weights", weights}, {"diag", w.diag}};
}

inline MixingMatrix mixing_from_json(const nlohmann::json& doc) {
    const auto count = doc.at("n").get<std::size_t>();
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (const auto& e : doc.at("edges")) edges.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>());
    const Graph g = graph_from_edges(count, edges);

    MixingMatrix w;
    w.node_count = count;
    w.neighbors = g.neighbors;
    w.weights.resize(count);
    for (std::size_t i = 0; i < count; ++i) w.weights[i].assign(g.neighbors[i].size(), 0.0);
    for (const auto& entry : doc.at("weights")) {
        const auto i = entry.at(0).get<std::size_t>();
        const auto j = entry.at(1).get<std::size_t>();
        const auto value = entry.at(2).get<double>();
        if (i >= count || j >= count || !g.has_edge(i, j)) throw InvalidNetwork("weight on a non-edge");
        auto slot = [&](std::size_t a, std::size_t b) -> double& {
            const auto& nb = w.neighbors[a];
            return w.weights[a][static_cast<std::size_t>(std::lower_bound(nb.begin(), nb.end(), b) - nb.begin())];
        };
        slot(i, j) = value;
        slot(j, i) = value;
    }
    w.diag = doc.at("diag").get<std::vector<double>>();
    if (w.diag.size() != count) throw DimensionMismatch("diag length differs from n");
    detail::finish_mixing(w);
    return w;
}

inline Graph graph_of(const MixingMatrix& w) {
    Graph g;
    g.node_count = w.node_count;
    g.neighbors = w.neighbors;
    return g;
}

} // namespace efix
