// rotlab: equilibrium predictions and random-walk experiments.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "rotlab/rotlab.hpp"

namespace fs = std::filesystem;
using namespace rotlab;

namespace {

enum ExitCode : int { kPass = 0, kCheckFail = 1, kConfigError = 2, kNumericError = 3 };

std::mutex output_mutex;

void say(std::ostream& os, const std::string& text)
{
    std::lock_guard lock(output_mutex);
    os << text << std::flush;
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << text;
}

struct CommonOptions {
    std::vector<std::string> configs;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::size_t jobs = 1;
};

fs::path output_root(const CommonOptions& opts)
{
    if (opts.out)
        return *opts.out;
    if (const char* env = std::getenv("ROTLAB_OUT_DIR"); env && *env)
        return env;
    return "rotlab_out";
}

fs::path output_dir(const CommonOptions& opts, const std::string& name)
{
    const fs::path root = output_root(opts);
    return opts.configs.size() > 1 ? root / name : root;
}

ExperimentConfig load_experiment(const std::string& path, const CommonOptions& opts)
{
    ExperimentConfig cfg = parse_experiment_config(read_json_file(path));
    if (opts.seed)
        cfg.seed = *opts.seed;
    return cfg;
}

/// Runs `task` for every config on up to `jobs` threads; returns the worst
/// exit code.
template <typename Task>
int for_each_config(const CommonOptions& opts, Task task)
{
    std::vector<int> codes(opts.configs.size(), kPass);
    auto guarded = [&](std::size_t i) {
        const std::string& path = opts.configs[i];
        try {
            codes[i] = task(path);
        } catch (const ConfigError& e) {
            say(std::cerr, "config error (" + path + "): " + e.what() + "\n");
            codes[i] = kConfigError;
        } catch (const DomainError& e) {
            say(std::cerr, "config error (" + path + "): " + e.what() + "\n");
            codes[i] = kConfigError;
        } catch (const NumericError& e) {
            say(std::cerr, "numeric failure (" + path + "): " + e.what() + "\n");
            codes[i] = kNumericError;
        } catch (const std::exception& e) {
            say(std::cerr, "error (" + path + "): " + e.what() + "\n");
            codes[i] = kConfigError;
        }
    };
    const std::size_t jobs = std::clamp<std::size_t>(opts.jobs, 1, std::max<std::size_t>(opts.configs.size(), 1));
    if (jobs == 1) {
        for (std::size_t i = 0; i < opts.configs.size(); ++i)
            guarded(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> workers;
        for (std::size_t j = 0; j < jobs; ++j)
            workers.emplace_back([&] {
                for (std::size_t i = next++; i < opts.configs.size(); i = next++)
                    guarded(i);
            });
    }
    return *std::max_element(codes.begin(), codes.end());
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
    std::optional<std::string> config;
    std::string optimizer = "AdamW";
    double lr = 1e-3;
    double weight_decay = 0.0;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    std::size_t dim = 128;
    std::optional<double> expected_sq_norm;
    std::optional<double> unit_expected_sq_norm;
    bool exact = false;
};

Json optional_field(const std::optional<double>& value, const std::string& missing)
{
    return value ? Json(*value) : Json(missing);
}

int cmd_predict(const PredictArgs& args)
{
    OptimizerConfig cfg;
    std::size_t dim = args.dim;
    if (args.config) {
        const ExperimentConfig exp = parse_experiment_config(read_json_file(*args.config));
        cfg = exp.optimizer;
        dim = exp.system.inputs;
    } else {
        const auto kind = parse_optimizer_kind(args.optimizer);
        if (!kind)
            throw ConfigError("optimizer", "unknown optimizer \"" + args.optimizer + "\"");
        cfg.kind = *kind;
        cfg.lr = args.lr;
        cfg.weight_decay = args.weight_decay;
        cfg.momentum = args.momentum;
        cfg.beta1 = args.beta1;
        cfg.beta2 = args.beta2;
    }
    cfg.validate();
    if (!(cfg.weight_decay > 0.0)) {
        std::cerr << "no equilibrium: lambda is zero\n";
        return kConfigError;
    }
    GradientStats stats;
    stats.expected_sq_norm = args.expected_sq_norm;
    stats.unit_expected_sq_norm = args.unit_expected_sq_norm;
    const EquilibriumPrediction p = predict(cfg, dim, stats, PredictOptions{.exact = args.exact, .allow_partial = true});

    std::string grad_note = "requires E[‖g‖²]";
    std::string norm_note = "requires E[‖g̃‖²]";
    if (cfg.kind == OptimizerKind::AdamL2)
        norm_note = "requires sqrt(E[g̃²]) per coordinate or E[‖g̃‖²]";
    Json out{{"optimizer", std::string(to_string(cfg.kind))},
             {"dim", dim},
             {"lr", cfg.lr},
             {"weight_decay", cfg.weight_decay},
             {"exact", args.exact},
             {"eta_g_hat", optional_field(p.eta_g_hat, grad_note)},
             {"eta_r_hat", optional_field(p.eta_r_hat, norm_note)},
             {"omega_norm_hat", optional_field(p.omega_norm_hat, norm_note)},
             {"loosest_approximation", p.loosest_approximation}};
    if (cfg.kind == OptimizerKind::SGDM || cfg.kind == OptimizerKind::AdamW) {
        out["tau_g_hat"] = optional_field(p.tau_g_hat, grad_note);
        out["tau_r_hat"] = optional_field(p.tau_r_hat, norm_note);
    }
    std::cout << out.dump(2) << "\n";
    return kPass;
}

// ---------------------------------------------------------------------------
// run / check

int cmd_run(const CommonOptions& opts)
{
    return for_each_config(opts, [&](const std::string& path) {
        const ExperimentConfig cfg = load_experiment(path, opts);
        const fs::path dir = output_dir(opts, cfg.name);
        const RunResult result = run_experiment(cfg, RunOptions{.out_dir = dir, .record = true});
        write_text(dir / "summary.json", run_summary(cfg, result).dump(2) + "\n");
        write_text(dir / "config.json", to_json(cfg).dump(2) + "\n");
        say(std::cout, cfg.name + ": " + std::to_string(cfg.steps) + " steps written to " + dir.string() + "\n");
        return int{kPass};
    });
}

std::string describe(const ReportEntry& e)
{
    std::ostringstream os;
    os << e.quantity << (e.unit < 0 ? std::string(" [layer]") : " [neuron " + std::to_string(e.unit) + "]")
       << " measured=" << e.measured;
    if (e.predicted)
        os << " predicted=" << *e.predicted;
    if (const auto rel = e.relative_error())
        os << " rel_err=" << *rel * 100.0 << "%";
    if (e.checked())
        os << " tol=" << *e.tolerance_pct << "% " << (e.pass() ? "PASS" : "FAIL");
    return os.str();
}

int cmd_check(const CommonOptions& opts, const std::optional<std::string>& from)
{
    return for_each_config(opts, [&](const std::string& path) {
        const ExperimentConfig cfg = load_experiment(path, opts);
        const fs::path dir = output_dir(opts, cfg.name);
        TelemetryStore store;
        std::optional<Matrix> coord;
        if (from) {
            const fs::path src = opts.configs.size() > 1 ? fs::path(*from) / cfg.name : fs::path(*from);
            store = read_telemetry_csv((src / "telemetry.csv").string());
            if (fs::exists(src / "coordinate_stats.csv"))
                coord = read_coordinate_stats(src / "coordinate_stats.csv", cfg.system.neurons, cfg.system.inputs);
            fs::create_directories(dir);
        } else {
            RunResult result = run_experiment(cfg, RunOptions{.out_dir = dir, .record = true});
            write_text(dir / "summary.json", run_summary(cfg, result).dump(2) + "\n");
            store = std::move(result.store);
            coord = std::move(result.coordinate_sq_means);
        }
        const ComparisonReport report = build_report(cfg, store, coord);
        write_text(dir / "report.json", to_json(report).dump(2) + "\n");

        std::string text = cfg.name + ": window [" + std::to_string(report.window.from) + ", " +
                           std::to_string(report.window.to) + ")\n";
        std::size_t neuron_checked = 0;
        std::size_t neuron_failed = 0;
        for (const auto& e : report.entries) {
            if (e.unit >= 0) {
                if (e.checked()) {
                    ++neuron_checked;
                    neuron_failed += e.pass() ? 0 : 1;
                }
                continue;
            }
            text += "  " + describe(e) + "\n";
        }
        if (neuron_checked > 0)
            text += "  per-neuron eta_r: " + std::to_string(neuron_checked - neuron_failed) + "/" +
                    std::to_string(neuron_checked) + " PASS\n";
        for (const auto& note : report.notes)
            text += "  note: " + note + "\n";
        text += std::string("  verdict: ") + (report.pass() ? "PASS" : "FAIL") + "\n";
        say(std::cout, text);
        return report.pass() ? int{kPass} : int{kCheckFail};
    });
}

// ---------------------------------------------------------------------------
// converge

struct ConvergeArgs {
    std::optional<double> omega0_sq;
    std::optional<double> omega0_sq_multiple;
    std::optional<double> lr;
    std::optional<double> weight_decay;
    std::optional<std::size_t> dim;
    std::optional<std::size_t> steps;
    std::optional<std::size_t> trials;
};

int cmd_converge(const CommonOptions& opts, const ConvergeArgs& args)
{
    auto task = [&](const std::optional<std::string>& path) {
        Json j = path ? read_json_file(*path) : Json::object();
        if (args.omega0_sq) {
            j.erase("omega0_sq_multiple");
            j["omega0_sq"] = *args.omega0_sq;
        }
        if (args.omega0_sq_multiple) {
            j.erase("omega0_sq");
            j["omega0_sq_multiple"] = *args.omega0_sq_multiple;
        }
        if (args.lr)
            j["lr"] = *args.lr;
        if (args.weight_decay)
            j["weight_decay"] = *args.weight_decay;
        if (args.dim)
            j["dim"] = *args.dim;
        if (args.steps)
            j["steps"] = *args.steps;
        if (args.trials)
            j["trials"] = *args.trials;
        if (opts.seed)
            j["seed"] = *opts.seed;
        if (!j.contains("omega0_sq") && !j.contains("omega0_sq_multiple"))
            j["omega0_sq_multiple"] = 1.0;
        const ConvergeConfig cfg = parse_converge_config(j);
        const std::size_t threads = opts.configs.size() > 1 ? 1 : opts.jobs;
        const ConvergeResult r = run_converge(cfg, threads);
        const fs::path dir = opts.configs.size() > 1 ? output_root(opts) / cfg.name : output_root(opts);
        fs::create_directories(dir);
        write_text(dir / "converge.csv", converge_csv(r));
        std::string text = cfg.name + ": omega0^2=" + std::to_string(r.omega0_sq);
        if (r.fixed_point) {
            text += " fixed_point=" + std::to_string(*r.fixed_point) +
                    " max_rel_err(i>=" + std::to_string(cfg.compare_from) + ")=" +
                    std::to_string(r.max_relative_error * 100.0) + "% " + (r.pass ? "PASS" : "FAIL") + "\n";
        } else {
            text += " prediction n/a (no equilibrium: lambda is zero)\n";
        }
        say(std::cout, text);
        return r.pass ? int{kPass} : int{kCheckFail};
    };
    if (opts.configs.empty()) {
        try {
            return task(std::nullopt);
        } catch (const ConfigError& e) {
            std::cerr << "config error: " << e.what() << "\n";
            return kConfigError;
        }
    }
    return for_each_config(opts, [&](const std::string& path) { return task(path); });
}

void add_common(CLI::App* cmd, CommonOptions& opts, bool config_required)
{
    auto* c = cmd->add_option("--config", opts.configs, "Experiment config (JSON); may repeat");
    if (config_required)
        c->required();
    cmd->add_option("--out", opts.out, "Output directory (default: $ROTLAB_OUT_DIR or ./rotlab_out)");
    cmd->add_option("--seed", opts.seed, "Override the config seed");
    cmd->add_option("--jobs", opts.jobs, "Parallel jobs")->check(CLI::PositiveNumber);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"rotlab: rotational equilibrium predictions and random-walk experiments"};
    app.require_subcommand(1);

    PredictArgs pargs;
    auto* predict_cmd = app.add_subcommand("predict", "Print steady-state predictions as JSON");
    predict_cmd->add_option("--config", pargs.config, "Experiment config; uses its optimizer and C");
    predict_cmd->add_option("--optimizer", pargs.optimizer, "SGDM | AdamW | AdamL2 | Lion");
    predict_cmd->add_option("--lr", pargs.lr);
    predict_cmd->add_option("--weight-decay", pargs.weight_decay);
    predict_cmd->add_option("--momentum", pargs.momentum);
    predict_cmd->add_option("--beta1", pargs.beta1);
    predict_cmd->add_option("--beta2", pargs.beta2);
    predict_cmd->add_option("--dim", pargs.dim, "Vector dimension C")->check(CLI::PositiveNumber);
    predict_cmd->add_option("--expected-sq-norm", pargs.expected_sq_norm, "E[|g|^2]");
    predict_cmd->add_option("--unit-expected-sq-norm", pargs.unit_expected_sq_norm, "E[|g_unit|^2]");
    predict_cmd->add_flag("--exact", pargs.exact, "Unsimplified denominators");

    CommonOptions run_opts;
    auto* run_cmd = app.add_subcommand("run", "Run experiments and write telemetry");
    add_common(run_cmd, run_opts, true);

    CommonOptions check_opts;
    std::optional<std::string> from;
    auto* check_cmd = app.add_subcommand("check", "Run experiments and compare against predictions");
    add_common(check_cmd, check_opts, true);
    check_cmd->add_option("--from", from, "Rebuild reports from a previous run directory instead of running");

    CommonOptions conv_opts;
    ConvergeArgs cargs;
    auto* conv_cmd = app.add_subcommand("converge", "Monte-Carlo check of the AdamW norm recurrence");
    add_common(conv_cmd, conv_opts, false);
    conv_cmd->add_option("--omega0-sq", cargs.omega0_sq);
    conv_cmd->add_option("--omega0-sq-multiple", cargs.omega0_sq_multiple, "Initial norm^2 as a multiple of the fixed point");
    conv_cmd->add_option("--lr", cargs.lr);
    conv_cmd->add_option("--weight-decay", cargs.weight_decay);
    conv_cmd->add_option("--dim", cargs.dim);
    conv_cmd->add_option("--steps", cargs.steps);
    conv_cmd->add_option("--trials", cargs.trials);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kPass : kConfigError;
    }

    try {
        if (*predict_cmd)
            return cmd_predict(pargs);
        if (*run_cmd)
            return cmd_run(run_opts);
        if (*check_cmd)
            return cmd_check(check_opts, from);
        if (*conv_cmd)
            return cmd_converge(conv_opts, cargs);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const DomainError& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kConfigError;
    }
    return kConfigError;
}
