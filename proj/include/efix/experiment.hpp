#pragma once

// Config-driven experiment plumbing behind the command-line tool: problem and
// network files, trace CSV export and trace comparison.

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <variant>
#include <vector>

#include <json.hpp>

#include "efix/analysis.hpp"
#include "efix/errors.hpp"
#include "efix/problems.hpp"
#include "efix/solvers.hpp"
#include "efix/topology.hpp"
#include "efix/trace.hpp"

namespace efix {

struct ProblemSpec {
    std::string family = "quadratic";  // quadratic | logistic
    std::size_t node_count = 0;
    std::size_t dim = 0;
    std::size_t samples = 0;           // logistic synthetic data
    std::uint64_t seed = 1;
    double mu = 1e-4;
    std::optional<std::string> dataset;  // libsvm path, logistic only
    std::optional<std::string> file;     // previously generated problem.json
};

struct NetworkSpec {
    std::size_t node_count = 0;
    std::uint64_t seed = 1;
    std::optional<std::string> file;
};

struct AlgorithmSpec {
    std::string name = "efix-q";  // efix-q | efix-g | efix-q-stopping | diging
    double m = 10.0;              // DIGing step 1/(mL)
};

struct ExperimentConfig {
    ProblemSpec problem;
    NetworkSpec network;
    AlgorithmSpec algorithm;
    nlohmann::json schedule = nlohmann::json::object();
    Budget budget;
    std::string out;
};

namespace detail {

template <class T>
void read_opt(const nlohmann::json& doc, const char* key, T& into) {
    if (doc.contains(key)) into = doc.at(key).get<T>();
}

template <class T>
void read_opt(const nlohmann::json& doc, const char* key, std::optional<T>& into) {
    if (doc.contains(key) && !doc.at(key).is_null()) into = doc.at(key).get<T>();
}

} // namespace detail

inline void validate(const ExperimentConfig& cfg) {
    const auto& p = cfg.problem;
    if (p.family != "quadratic" && p.family != "logistic")
        throw ConfigError("problem.family must be quadratic or logistic");
    if (p.family == "quadratic" && p.dataset) throw ConfigError("a dataset path belongs to the logistic family");
    if (p.family == "logistic" && p.dataset && p.samples != 0)
        throw ConfigError("give either a dataset path or a sample count, not both");
    if (!p.file) {
        if (p.node_count == 0) throw ConfigError("problem.N must be positive");
        if (!p.dataset && p.dim == 0) throw ConfigError("problem.n must be positive");
        if (p.family == "logistic" && !p.dataset && p.samples == 0) throw ConfigError("problem.T must be positive");
        if (p.family == "logistic" && !(p.mu > 0.0)) throw ConfigError("problem.mu must be positive");
    }
    if (!cfg.network.file && cfg.network.node_count < 2) throw ConfigError("network.N must be at least 2");
    const auto& a = cfg.algorithm.name;
    if (a != "efix-q" && a != "efix-g" && a != "efix-q-stopping" && a != "diging")
        throw ConfigError("unknown algorithm '" + a + "'");
    if (!(cfg.algorithm.m > 0.0)) throw ConfigError("algorithm.m must be positive");
    if (cfg.budget.scalar_products && *cfg.budget.scalar_products == 0)
        throw ConfigError("budget.scalar_products must be positive");
}

inline ExperimentConfig parse_config(const nlohmann::json& doc) {
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    ExperimentConfig cfg;
    try {
        if (doc.contains("problem")) {
            const auto& p = doc.at("problem");
            detail::read_opt(p, "family", cfg.problem.family);
            detail::read_opt(p, "N", cfg.problem.node_count);
            detail::read_opt(p, "n", cfg.problem.dim);
            detail::read_opt(p, "T", cfg.problem.samples);
            detail::read_opt(p, "seed", cfg.problem.seed);
            detail::read_opt(p, "mu", cfg.problem.mu);
            detail::read_opt(p, "dataset", cfg.problem.dataset);
            detail::read_opt(p, "file", cfg.problem.file);
        }
        cfg.network.node_count = cfg.problem.node_count;
        cfg.network.seed = cfg.problem.seed;
        if (doc.contains("network")) {
            const auto& n = doc.at("network");
            detail::read_opt(n, "N", cfg.network.node_count);
            detail::read_opt(n, "seed", cfg.network.seed);
            detail::read_opt(n, "file", cfg.network.file);
        }
        if (doc.contains("algorithm")) {
            const auto& a = doc.at("algorithm");
            detail::read_opt(a, "name", cfg.algorithm.name);
            detail::read_opt(a, "m", cfg.algorithm.m);
        }
        if (doc.contains("schedule")) cfg.schedule = doc.at("schedule");
        if (doc.contains("budget")) {
            const auto& b = doc.at("budget");
            detail::read_opt(b, "rounds", cfg.budget.rounds);
            detail::read_opt(b, "outer", cfg.budget.outer);
            detail::read_opt(b, "scalar_products", cfg.budget.scalar_products);
        }
        detail::read_opt(doc, "out", cfg.out);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return cfg;
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

inline ExperimentConfig load_config(const std::string& path) { return parse_config(read_json_file(path)); }

/// Schedule fields: theta0, theta0_multiplier, theta_rule (factorial|linear),
/// eps_rule (balance|reciprocal), q_rule (fixed|refresh|value), q_safety,
/// q_value, cbar (exact|estimate).
inline Schedule parse_schedule(const nlohmann::json& doc, Schedule base = {}) {
    try {
        detail::read_opt(doc, "theta0", base.theta0);
        detail::read_opt(doc, "theta0_multiplier", base.theta0_multiplier);
        detail::read_opt(doc, "q_safety", base.q_safety);
        detail::read_opt(doc, "q_value", base.q_value);
        if (doc.contains("theta_rule")) {
            const auto v = doc.at("theta_rule").get<std::string>();
            if (v == "factorial") base.theta_rule = ThetaRule::factorial;
            else if (v == "linear") base.theta_rule = ThetaRule::linear;
            else throw ConfigError("unknown theta_rule '" + v + "'");
        }
        if (doc.contains("eps_rule")) {
            const auto v = doc.at("eps_rule").get<std::string>();
            if (v == "balance") base.eps_rule = EpsilonRule::balance;
            else if (v == "reciprocal") base.eps_rule = EpsilonRule::reciprocal;
            else throw ConfigError("unknown eps_rule '" + v + "'");
        }
        if (doc.contains("q_rule")) {
            const auto v = doc.at("q_rule").get<std::string>();
            if (v == "fixed") base.q_rule = RelaxationRule::fixed;
            else if (v == "refresh") base.q_rule = RelaxationRule::refresh;
            else if (v == "value") base.q_rule = RelaxationRule::explicit_value;
            else throw ConfigError("unknown q_rule '" + v + "'");
        }
        if (doc.contains("cbar")) {
            const auto v = doc.at("cbar").get<std::string>();
            if (v == "exact") base.cbar = CbarMode::exact;
            else if (v == "estimate") base.cbar = CbarMode::estimate;
            else throw ConfigError("unknown cbar '" + v + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("schedule: ") + e.what());
    }
    if (base.theta0 && !(*base.theta0 > 0.0)) throw ConfigError("theta0 must be positive");
    if (!(base.theta0_multiplier > 0.0)) throw ConfigError("theta0_multiplier must be positive");
    if (!(base.q_safety > 0.0 && base.q_safety <= 1.0)) throw ConfigError("q_safety must lie in (0, 1]");
    return base;
}

// ---------------------------------------------------------------------------
// Problem and network files
// ---------------------------------------------------------------------------

using AnyProblem = std::variant<QuadraticProblem, LogisticProblem>;

inline nlohmann::json problem_to_json(const AnyProblem& p) {
    return std::visit(
        [](const auto& prob) {
            nlohmann::json doc = to_json(prob);
            using P = std::decay_t<decltype(prob)>;
            doc["family"] = std::is_same_v<P, QuadraticProblem> ? "quadratic" : "logistic";
            return doc;
        },
        p);
}

inline AnyProblem problem_from_json(const nlohmann::json& doc) {
    try {
        const auto family = doc.at("family").get<std::string>();
        if (family == "quadratic") return quadratic_from_json(doc);
        if (family == "logistic") return logistic_from_json(doc);
        throw ConfigError("unknown problem family '" + family + "'");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("problem file: ") + e.what());
    }
}

inline AnyProblem build_problem(const ProblemSpec& spec) {
    if (spec.file) return problem_from_json(read_json_file(*spec.file));
    if (spec.family == "quadratic") return generate_quadratic(spec.node_count, spec.dim, spec.seed);
    const Dataset raw = spec.dataset ? load_libsvm(*spec.dataset, default_label_map(), spec.dim)
                                     : generate_logistic_dataset(spec.samples, spec.dim, spec.seed);
    return make_logistic_problem(raw, spec.node_count, spec.seed, spec.mu);
}

inline MixingMatrix build_network(const NetworkSpec& spec) {
    if (spec.file) {
        try {
            return mixing_from_json(read_json_file(*spec.file));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("network file: ") + e.what());
        }
    }
    return metropolis_weights(generate_geometric_graph(spec.node_count, spec.seed));
}

inline ProblemConstants constants_of(const AnyProblem& p) {
    return std::visit(
        [](const auto& prob) {
            if constexpr (std::is_same_v<std::decay_t<decltype(prob)>, QuadraticProblem>) return quadratic_constants(prob);
            else return logistic_constants(prob);
        },
        p);
}

inline std::size_t node_count(const AnyProblem& p) {
    return std::visit([](const auto& prob) { return node_count(prob); }, p);
}

/// 64-bit FNV-1a of a string, printed as 16 hex digits.
inline std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string content_hash(const nlohmann::json& doc) { return fnv1a_hex(doc.dump()); }

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline const char* trace_header =
    "round,outer_s,theta,epsilon,error_e,error_v,consensus_residual,cum_sp_max,cum_vectors_sent";

inline void write_trace_csv(std::ostream& out, const Trace& trace) {
    auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    out << trace_header << '\n';
    for (const auto& r : trace.records) {
        out << r.round << ',' << r.outer_s << ',' << opt(r.theta) << ',' << opt(r.epsilon) << ',' << opt(r.error_e)
            << ',' << opt(r.error_v) << ',' << format_double(r.consensus_residual) << ',' << r.cum_sp_max << ','
            << r.cum_vectors_sent << '\n';
    }
}

/// Parsed trace row; numeric cells that were empty stay unset.
struct CsvRow {
    std::uint64_t round = 0;
    std::uint64_t outer_s = 0;
    std::optional<double> theta, epsilon, error_e, error_v;
    double consensus_residual = 0.0;
    std::uint64_t cum_sp_max = 0;
    std::uint64_t cum_vectors_sent = 0;
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

inline double to_double(const std::string& s, std::size_t line) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ParseError(line, "bad number '" + s + "'");
    return v;
}

inline std::uint64_t to_uint(const std::string& s, std::size_t line) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ParseError(line, "bad integer '" + s + "'");
    return v;
}

} // namespace detail

inline std::vector<CsvRow> read_trace_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != trace_header) throw ParseError(1, "unexpected trace header");
    std::vector<CsvRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = detail::split_csv(line);
        if (cells.size() != 9) throw ParseError(lineno, "expected 9 cells");
        auto opt = [&](const std::string& s) -> std::optional<double> {
            if (s.empty()) return std::nullopt;
            return detail::to_double(s, lineno);
        };
        CsvRow r;
        r.round = detail::to_uint(cells[0], lineno);
        r.outer_s = detail::to_uint(cells[1], lineno);
        r.theta = opt(cells[2]);
        r.epsilon = opt(cells[3]);
        r.error_e = opt(cells[4]);
        r.error_v = opt(cells[5]);
        r.consensus_residual = detail::to_double(cells[6], lineno);
        r.cum_sp_max = detail::to_uint(cells[7], lineno);
        r.cum_vectors_sent = detail::to_uint(cells[8], lineno);
        rows.push_back(r);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

struct RunResult {
    Trace trace;
    nlohmann::json meta;
};

inline RunResult run_experiment(const ExperimentConfig& cfg) {
    validate(cfg);
    const AnyProblem problem = build_problem(cfg.problem);
    const MixingMatrix w = build_network(cfg.network);
    if (node_count(problem) != w.node_count) throw ConfigError("problem and network node counts differ");
    const ProblemConstants consts = constants_of(problem);
    const std::string& algo = cfg.algorithm.name;

    RunResult result;
    std::visit(
        [&](const auto& prob) {
            using P = std::decay_t<decltype(prob)>;
            constexpr bool quadratic = std::is_same_v<P, QuadraticProblem>;
            OracleSolution oracle;
            if constexpr (quadratic) oracle = oracle_quadratic(prob);
            else oracle = oracle_logistic(prob);
            Metrics metrics;
            metrics.error_e = [y = oracle.y_star](const VectorXd& x) { return error_e(x, y); };
            metrics.error_v = [&prob](const VectorXd& x) { return error_v(x, prob); };

            if (algo == "diging") {
                DigingOptions opt;
                opt.alpha = 1.0 / (cfg.algorithm.m * consts.L);
                opt.variant = quadratic ? DigingVariant::quadratic : DigingVariant::general;
                opt.budget = cfg.budget;
                opt.metrics = metrics;
                result.trace = diging(prob, w, opt);
                return;
            }
            EfixOptions opt;
            opt.budget = cfg.budget;
            opt.metrics = metrics;
            if (algo == "efix-g") {
                opt.schedule = parse_schedule(cfg.schedule, efix_g_schedule());
                result.trace = efix_g(prob, w, consts, opt);
                return;
            }
            if constexpr (quadratic) {
                opt.schedule = parse_schedule(cfg.schedule);
                result.trace = algo == "efix-q" ? efix_q(prob, w, opt) : efix_q_stopping(prob, w, opt);
            } else {
                throw ConfigError(algo + " needs a quadratic problem");
            }
        },
        problem);

    result.meta = {{"algorithm", algo},
                   {"problem_hash", content_hash(problem_to_json(problem))},
                   {"network_hash", content_hash(to_json(w))},
                   {"rounds", result.trace.ledger.rounds},
                   {"diverged", result.trace.diverged},
                   {"numerical_failure", result.trace.numerical_failure},
                   {"budget_exhausted", result.trace.budget_exhausted},
                   {"warnings", result.trace.warnings}};
    return result;
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

struct LoadedTrace {
    std::string label;
    std::vector<CsvRow> rows;
    nlohmann::json meta;
};

inline std::string sidecar_path(const std::string& csv) { return csv + ".json"; }

inline LoadedTrace load_trace(const std::string& csv) {
    LoadedTrace t;
    t.label = std::filesystem::path(csv).stem().string();
    std::ifstream in(csv);
    if (!in) throw ConfigError("cannot open " + csv);
    t.rows = read_trace_csv(in);
    t.meta = read_json_file(sidecar_path(csv));
    return t;
}

namespace detail {

/// Last row whose key does not exceed k.
template <class Key>
const CsvRow* row_at(const std::vector<CsvRow>& rows, std::uint64_t k, Key key) {
    const CsvRow* hit = nullptr;
    for (const auto& r : rows) {
        if (key(r) > k) break;
        hit = &r;
    }
    return hit;
}

} // namespace detail

/// One CSV with sections aligned by round, by cum_sp_max and by
/// cum_vectors_sent. Differences and vector ratios are taken against the
/// first trace; a value is carried forward from the last row at or below the key.
inline void write_comparison(std::ostream& out, const std::vector<LoadedTrace>& traces) {
    if (traces.size() < 2) throw ConfigError("compare needs at least two traces");
    for (const auto& t : traces) {
        for (const char* key : {"problem_hash", "network_hash"}) {
            if (!t.meta.contains(key) || t.meta.at(key) != traces[0].meta.at(key))
                throw ConfigError("traces " + traces[0].label + " and " + t.label + " differ in " + key);
        }
    }
    auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };

    out << "section,key";
    for (const auto& t : traces)
        out << ',' << t.label << "_round," << t.label << "_error_e," << t.label << "_error_v," << t.label
            << "_cum_sp_max," << t.label << "_cum_vectors_sent";
    for (std::size_t k = 1; k < traces.size(); ++k)
        out << ",diff_error_e_" << traces[k].label << ",diff_error_v_" << traces[k].label << ",vectors_ratio_"
            << traces[k].label;
    out << '\n';

    using KeyFn = std::uint64_t (*)(const CsvRow&);
    const std::pair<const char*, KeyFn> sections[] = {
        {"round", [](const CsvRow& r) { return r.round; }},
        {"cum_sp_max", [](const CsvRow& r) { return r.cum_sp_max; }},
        {"cum_vectors_sent", [](const CsvRow& r) { return r.cum_vectors_sent; }},
    };
    for (const auto& [name, key] : sections) {
        std::vector<std::uint64_t> keys;
        for (const auto& t : traces)
            for (const auto& r : t.rows) keys.push_back(key(r));
        std::sort(keys.begin(), keys.end());
        keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
        for (std::uint64_t k : keys) {
            std::vector<const CsvRow*> at;
            for (const auto& t : traces) at.push_back(detail::row_at(t.rows, k, key));
            out << name << ',' << k;
            for (const CsvRow* r : at) {
                if (r)
                    out << ',' << r->round << ',' << opt(r->error_e) << ',' << opt(r->error_v) << ',' << r->cum_sp_max
                        << ',' << r->cum_vectors_sent;
                else
                    out << ",,,,,";
            }
            const CsvRow* base = at[0];
            for (std::size_t j = 1; j < at.size(); ++j) {
                const CsvRow* r = at[j];
                auto diff = [&](const std::optional<double> CsvRow::*field) {
                    if (!base || !r || !(base->*field) || !(r->*field)) return std::string();
                    return format_double(*(r->*field) - *(base->*field));
                };
                out << ',' << diff(&CsvRow::error_e) << ',' << diff(&CsvRow::error_v) << ',';
                if (base && r && r->cum_vectors_sent > 0)
                    out << format_double(static_cast<double>(base->cum_vectors_sent) /
                                         static_cast<double>(r->cum_vectors_sent));
            }
            out << '\n';
        }
    }
}

} // namespace efix
