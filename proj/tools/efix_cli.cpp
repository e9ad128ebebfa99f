// efix: generate instances, run solvers, compare traces.
//
//   efix gen     --config cfg.json --out DIR
//   efix run     --config cfg.json --out trace.csv [--algo NAME] [--m M] [--budget-rounds R] ...
//   efix compare a.csv b.csv ... --out merged.csv
//
// Exit status: 0 success, 1 configuration error, 2 numerical failure or divergence.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "efix/efix.hpp"

namespace {

constexpr int exit_ok = 0;
constexpr int exit_config = 1;
constexpr int exit_numeric = 2;

struct Overrides {
    std::string config;
    std::string out;
    std::optional<std::string> algo;
    std::optional<double> m;
    std::optional<std::uint64_t> budget_rounds;
    std::optional<std::uint64_t> budget_outer;
    std::optional<std::uint64_t> budget_sp;
    std::optional<std::uint64_t> seed;
};

efix::ExperimentConfig resolve(const Overrides& o) {
    efix::ExperimentConfig cfg = o.config.empty() ? efix::parse_config(nlohmann::json::object())
                                                  : efix::load_config(o.config);
    if (!o.out.empty()) cfg.out = o.out;
    if (o.algo) cfg.algorithm.name = *o.algo;
    if (o.m) cfg.algorithm.m = *o.m;
    if (o.budget_rounds) cfg.budget.rounds = *o.budget_rounds;
    if (o.budget_outer) cfg.budget.outer = *o.budget_outer;
    if (o.budget_sp) cfg.budget.scalar_products = *o.budget_sp;
    if (o.seed) {
        cfg.problem.seed = *o.seed;
        cfg.network.seed = *o.seed;
    }
    if (cfg.out.empty()) throw efix::ConfigError("no output path (--out)");
    return cfg;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw efix::ConfigError("cannot write " + path.string());
    out << text;
    if (!out) throw efix::ConfigError("write failed for " + path.string());
}

int cmd_gen(const Overrides& o) {
    efix::ExperimentConfig cfg = resolve(o);
    efix::validate(cfg);
    const efix::AnyProblem problem = efix::build_problem(cfg.problem);
    const efix::MixingMatrix w = efix::build_network(cfg.network);
    if (efix::node_count(problem) != w.node_count) throw efix::ConfigError("problem and network node counts differ");
    const std::filesystem::path dir(cfg.out);
    write_text(dir / "problem.json", efix::problem_to_json(problem).dump() + "\n");
    write_text(dir / "network.json", efix::to_json(w).dump() + "\n");

    const efix::ProblemConstants c = efix::constants_of(problem);
    const nlohmann::json echo = {{"L", c.L},           {"mu", c.mu},       {"lambda2", w.lambda2},
                                 {"w_bar", w.w_bar},   {"kappa", c.kappa}, {"J", c.J},
                                 {"problem", (dir / "problem.json").string()},
                                 {"network", (dir / "network.json").string()}};
    std::cout << echo.dump(2) << '\n';
    return exit_ok;
}

int cmd_run(const Overrides& o) {
    const efix::ExperimentConfig cfg = resolve(o);
    const efix::RunResult result = efix::run_experiment(cfg);
    std::ostringstream csv;
    efix::write_trace_csv(csv, result.trace);
    write_text(cfg.out, csv.str());
    write_text(efix::sidecar_path(cfg.out), result.meta.dump(2) + "\n");
    for (const auto& warning : result.trace.warnings) std::cerr << "warning: " << warning << '\n';
    if (result.trace.diverged || result.trace.numerical_failure) {
        std::cerr << "error: " << (result.trace.diverged ? "iterates diverged" : "non-finite iterate") << " after "
                  << result.trace.ledger.rounds << " rounds\n";
        return exit_numeric;
    }
    return exit_ok;
}

int cmd_compare(const std::vector<std::string>& traces, const std::string& out_path) {
    if (out_path.empty()) throw efix::ConfigError("no output path (--out)");
    std::vector<efix::LoadedTrace> loaded;
    for (const auto& path : traces) loaded.push_back(efix::load_trace(path));
    std::ostringstream out;
    efix::write_comparison(out, loaded);
    write_text(out_path, out.str());
    return exit_ok;
}

void add_run_flags(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--algo", o.algo, "efix-q | efix-g | efix-q-stopping | diging");
    cmd->add_option("--m", o.m, "DIGing step divisor, alpha = 1/(mL)");
    cmd->add_option("--budget-rounds", o.budget_rounds, "communication round limit");
    cmd->add_option("--budget-outer", o.budget_outer, "outer iteration limit");
    cmd->add_option("--budget-scalar-products", o.budget_sp, "per-node scalar product limit");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"EFIX distributed penalty solvers"};
    app.require_subcommand(1);

    Overrides gen_opts;
    auto* gen = app.add_subcommand("gen", "write problem.json and network.json");
    gen->add_option("--config", gen_opts.config, "experiment config (JSON)");
    gen->add_option("--out", gen_opts.out, "output directory");
    gen->add_option("--seed", gen_opts.seed, "problem and network seed");

    Overrides run_opts;
    auto* run = app.add_subcommand("run", "run one solver and write a trace CSV");
    run->add_option("--config", run_opts.config, "experiment config (JSON)");
    run->add_option("--out", run_opts.out, "trace CSV path");
    run->add_option("--seed", run_opts.seed, "problem and network seed");
    add_run_flags(run, run_opts);

    std::vector<std::string> traces;
    std::string compare_out;
    auto* compare = app.add_subcommand("compare", "merge traces of one problem into a comparison CSV");
    compare->add_option("traces", traces, "trace CSV files")->required()->expected(2, -1);
    compare->add_option("--out", compare_out, "merged CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_config;
    }

    try {
        if (*gen) return cmd_gen(gen_opts);
        if (*run) return cmd_run(run_opts);
        return cmd_compare(traces, compare_out);
    } catch (const efix::NumericalFailure& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_numeric;
    } catch (const efix::NonContractive& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_numeric;
    } catch (const efix::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_config;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_config;
    }
}
