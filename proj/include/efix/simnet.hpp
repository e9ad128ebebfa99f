#pragma once

// Synchronous message-passing engine. Each round every node publishes its
// outgoing vectors, the engine delivers them along the edges, and every node
// computes its next state from its own state and its inbox alone.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "efix/errors.hpp"
#include "efix/topology.hpp"

namespace efix {

/// Cumulative per-node cost in scalar products of length-n vectors and in
/// length-n vectors sent.
struct CostLedger {
    std::vector<std::uint64_t> scalar_products;
    std::vector<std::uint64_t> vectors_sent;
    std::uint64_t rounds = 0;

    CostLedger() = default;
    explicit CostLedger(std::size_t node_count) : scalar_products(node_count, 0), vectors_sent(node_count, 0) {}

    std::uint64_t max_scalar_products() const {
        return scalar_products.empty() ? 0 : *std::max_element(scalar_products.begin(), scalar_products.end());
    }
    std::uint64_t total_vectors_sent() const {
        return std::accumulate(vectors_sent.begin(), vectors_sent.end(), std::uint64_t{0});
    }
};

/// Per-node scalar-product charges.
namespace cost {

/// EFIX inner round: M_ii z_i and the weighted neighbor sum take n + 1 each,
/// D_ii^-1 B_ii b_i one more.
inline constexpr std::uint64_t efix_inner(std::size_t n) { return 2 * n + 3; }

/// DIGing round, quadratic costs: two weighted sums plus B_ii (x' - x).
inline constexpr std::uint64_t diging_quadratic(std::size_t n) { return 3 * n; }

/// DIGing round, logistic costs: the gradient adds one product per sample.
inline constexpr std::uint64_t diging_logistic(std::size_t n, std::size_t samples) { return 3 * n + samples; }

/// EFIX-G outer boundary: evaluating c_i from the local data.
inline constexpr std::uint64_t efix_g_outer(std::size_t n, std::size_t samples) { return samples + 2 * n; }

} // namespace cost

using Message = std::vector<Eigen::VectorXd>;

/// Messages in flight, keyed by (sender, receiver).
using MessageTable = std::map<std::pair<std::size_t, std::size_t>, Message>;

/// Read-only view of the messages delivered to one node, ordered by sender.
class Inbox {
public:
    struct Entry {
        std::size_t from;
        const Message* message;
    };

    explicit Inbox(std::vector<Entry> entries) : entries_(std::move(entries)) {}

    std::size_t size() const { return entries_.size(); }
    std::size_t from(std::size_t k) const { return entries_[k].from; }
    const Eigen::VectorXd& vector(std::size_t k, std::size_t slot = 0) const { return (*entries_[k].message)[slot]; }

private:
    std::vector<Entry> entries_;
};

struct RoundStatus {
    bool finite = true;
};

/// Round engine over node states of type State. State must provide
/// `bool is_finite() const`.
template <class State>
class RoundEngine {
public:
    RoundEngine(const Graph& graph, std::vector<State> initial)
        : graph_(graph), states_(std::move(initial)), ledger_(graph.node_count) {
        if (states_.size() != graph_.node_count) throw DimensionMismatch("one state per node required");
        order_.resize(states_.size());
        std::iota(order_.begin(), order_.end(), std::size_t{0});
    }

    std::size_t size() const { return states_.size(); }
    const Graph& graph() const { return graph_; }
    const CostLedger& ledger() const { return ledger_; }

    /// Harness view of a node, for metrics only.
    const State& state(std::size_t i) const { return states_[i]; }

    /// Node-local setup between rounds (e.g. installing new subproblem blocks).
    template <class Setup>
    void configure(Setup&& setup) {
        for (std::size_t i = 0; i < states_.size(); ++i) setup(i, states_[i]);
    }

    /// Charges node-local work that happens outside a round.
    void charge(std::size_t i, std::uint64_t scalar_products) { ledger_.scalar_products[i] += scalar_products; }

    /// Order in which node updates are evaluated; results do not depend on it.
    void set_execution_order(std::vector<std::size_t> order) {
        std::vector<std::size_t> sorted = order;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t k = 0; k < sorted.size(); ++k)
            if (sorted[k] != k || sorted.size() != states_.size()) throw ConfigError("execution order is not a permutation");
        order_ = std::move(order);
    }

    /// Hook applied to the message table after posting and before delivery.
    void set_tamper(std::function<void(MessageTable&)> tamper) { tamper_ = std::move(tamper); }

    /// publish(const State&) -> Message
    /// update(std::size_t id, const State&, const Inbox&) -> State
    /// scalar_products(std::size_t id) -> std::uint64_t
    template <class Publish, class Update, class Cost>
    RoundStatus run_round(Publish&& publish, Update&& update, Cost&& scalar_products) {
        MessageTable table;
        std::vector<std::size_t> sent_per_node(states_.size(), 0);
        for (std::size_t i = 0; i < states_.size(); ++i) {
            Message out = publish(states_[i]);
            sent_per_node[i] = out.size() * graph_.neighbors[i].size();
            for (std::size_t j : graph_.neighbors[i]) table[{i, j}] = out;
        }
        if (tamper_) tamper_(table);

        std::vector<State> next(states_.size());
        for (std::size_t i : order_) {
            std::vector<Inbox::Entry> entries;
            entries.reserve(graph_.neighbors[i].size());
            for (std::size_t j : graph_.neighbors[i]) {
                const auto it = table.find({j, i});
                if (it == table.end()) throw NumericalFailure("missing message on a live edge");
                entries.push_back({j, &it->second});
            }
            next[i] = update(i, static_cast<const State&>(states_[i]), Inbox(std::move(entries)));
        }

        RoundStatus status;
        for (std::size_t i = 0; i < states_.size(); ++i) {
            ledger_.scalar_products[i] += scalar_products(i);
            ledger_.vectors_sent[i] += sent_per_node[i];
            status.finite = status.finite && next[i].is_finite();
        }
        ++ledger_.rounds;
        states_ = std::move(next);
        return status;
    }

    /// Concatenation of `project(state)` over nodes in id order.
    template <class Project>
    Eigen::VectorXd gather(Project&& project) const {
        if (states_.empty()) return {};
        const Eigen::Index n = project(states_[0]).size();
        Eigen::VectorXd out(n * static_cast<Eigen::Index>(states_.size()));
        for (std::size_t i = 0; i < states_.size(); ++i) out.segment(static_cast<Eigen::Index>(i) * n, n) = project(states_[i]);
        return out;
    }

private:
    Graph graph_;
    std::vector<State> states_;
    CostLedger ledger_;
    std::vector<std::size_t> order_;
    std::function<void(MessageTable&)> tamper_;
};

inline bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

} // namespace efix
