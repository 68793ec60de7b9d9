#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "rotlab/core_math.hpp"
#include "rotlab/optimizers.hpp"
#include "rotlab/rotational.hpp"

namespace rotlab {

using Json = nlohmann::json;

inline constexpr std::string_view kVersion = "0.1.0";

/// Invalid configuration; `path` is the dotted field path.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string path, const std::string& message)
        : std::runtime_error(path.empty() ? message : path + ": " + message), path_(std::move(path))
    {
    }
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

enum class SystemMode { RandomWalk, Synthetic };
enum class Granularity { Neuron, Layer };
enum class ScheduleKind { Constant, Cosine };

inline std::string_view to_string(SystemMode m) { return m == SystemMode::RandomWalk ? "random_walk" : "synthetic"; }
inline std::string_view to_string(Granularity g) { return g == Granularity::Neuron ? "neuron" : "layer"; }
inline std::string_view to_string(ScheduleKind k) { return k == ScheduleKind::Constant ? "constant" : "cosine"; }

struct SystemConfig {
    std::size_t batch = 32;
    std::size_t inputs = 128;
    std::size_t neurons = 128;
    double loss_scale = 1.0;
    double eps_bn = 1e-5;
    SystemMode mode = SystemMode::RandomWalk;
    double init_scale = 1.0;  // multiplies the initial W

    bool operator==(const SystemConfig&) const = default;
};

struct WrapperConfig {
    bool enabled = false;
    double beta = 0.9;
    double eps_rv = 1e-8;
    Granularity granularity = Granularity::Neuron;
    bool center = true;
    std::optional<ImbalanceSpec> imbalance;
    std::optional<double> eta_r_override;
    bool adamw_rate_for_adam_l2 = true;

    bool operator==(const WrapperConfig&) const = default;
};

/// Learning-rate multiplier: optional linear warmup, then constant or
/// cosine decay to `final_fraction`.
struct ScheduleConfig {
    ScheduleKind kind = ScheduleKind::Constant;
    double final_fraction = 0.1;
    std::size_t warmup_steps = 0;

    bool operator==(const ScheduleConfig&) const = default;

    /// Multiplier for 1-based `step` of `total`; always in (0, 1].
    double multiplier(std::size_t step, std::size_t total) const
    {
        if (step <= warmup_steps)
            return static_cast<double>(step) / static_cast<double>(warmup_steps);
        if (kind == ScheduleKind::Constant)
            return 1.0;
        const std::size_t span = total > warmup_steps + 1 ? total - warmup_steps - 1 : 1;
        const double progress = std::min(1.0, static_cast<double>(step - warmup_steps - 1) / static_cast<double>(span));
        return final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    }
};

struct TelemetryConfig {
    std::optional<bool> per_neuron;  // default: on for K <= 256
    std::size_t flush_interval = 1000;

    bool operator==(const TelemetryConfig&) const = default;

    bool per_neuron_enabled(std::size_t neurons) const { return per_neuron.value_or(neurons <= 256); }
};

struct ReportConfig {
    std::size_t burn_in_steps = 5000;
    double tolerance_pct = 10.0;
    std::optional<double> norm_tolerance_pct;  // defaults to tolerance_pct
    bool auto_burn_in = false;
    std::size_t downsample_factor = 100;

    bool operator==(const ReportConfig&) const = default;

    double norm_tolerance() const { return norm_tolerance_pct.value_or(tolerance_pct); }
};

struct ExperimentConfig {
    std::string name = "experiment";
    std::uint64_t seed = 0;
    SystemConfig system;
    OptimizerConfig optimizer;
    WrapperConfig wrapper;
    std::size_t steps = 15000;
    ScheduleConfig schedule;
    TelemetryConfig telemetry;
    ReportConfig report;

    bool operator==(const ExperimentConfig&) const = default;

    void validate() const
    {
        if (steps < 1)
            throw ConfigError("steps", "must be >= 1");
        if (system.batch < 2)
            throw ConfigError("system.B", "must be >= 2");
        if (system.inputs < 1)
            throw ConfigError("system.C", "must be >= 1");
        if (system.neurons < 1)
            throw ConfigError("system.K", "must be >= 1");
        if (!(system.loss_scale > 0.0) || !std::isfinite(system.loss_scale))
            throw ConfigError("system.loss_scale", "must be finite and > 0");
        if (!(system.eps_bn >= 0.0))
            throw ConfigError("system.eps_bn", "must be >= 0");
        if (!(system.init_scale > 0.0) || !std::isfinite(system.init_scale))
            throw ConfigError("system.init_scale", "must be finite and > 0");
        try {
            optimizer.validate();
        } catch (const DomainError& e) {
            throw ConfigError("optimizer", e.what());
        }
        if (!(optimizer.lr > 0.0))
            throw ConfigError("optimizer.lr", "must be > 0 for a run");
        if (!(wrapper.beta >= 0.0 && wrapper.beta < 1.0))
            throw ConfigError("wrapper.beta", "must lie in [0, 1)");
        if (!(wrapper.eps_rv >= 0.0))
            throw ConfigError("wrapper.eps_rv", "must be >= 0");
        if (wrapper.imbalance) {
            try {
                wrapper.imbalance->validate();
            } catch (const DomainError& e) {
                throw ConfigError("wrapper.imbalance", e.what());
            }
            if (wrapper.granularity == Granularity::Layer)
                throw ConfigError("wrapper.imbalance", "requires granularity \"neuron\"");
        }
        if (wrapper.eta_r_override && !(*wrapper.eta_r_override >= 0.0))
            throw ConfigError("wrapper.eta_r_override", "must be >= 0");
        if (wrapper.enabled && !wrapper.eta_r_override) {
            if (!(optimizer.weight_decay > 0.0))
                throw ConfigError("optimizer.weight_decay",
                                  "must be > 0 to set the rotation rate; or supply wrapper.eta_r_override");
            if (optimizer.kind == OptimizerKind::AdamL2 && !wrapper.adamw_rate_for_adam_l2)
                throw ConfigError("wrapper.adamw_rate_for_adam_l2",
                                  "AdamL2 rotation rate needs gradient statistics; enable this flag or set "
                                  "wrapper.eta_r_override");
        }
        if (!(schedule.final_fraction > 0.0 && schedule.final_fraction <= 1.0))
            throw ConfigError("schedule.final_fraction", "must lie in (0, 1]");
        if (schedule.warmup_steps >= steps)
            throw ConfigError("schedule.warmup_steps", "must be < steps");
        if (telemetry.flush_interval < 1)
            throw ConfigError("telemetry.flush_interval", "must be >= 1");
        if (report.burn_in_steps >= steps)
            throw ConfigError("report.burn_in_steps", "must be < steps");
        if (!(report.tolerance_pct > 0.0))
            throw ConfigError("report.tolerance_pct", "must be > 0");
        if (report.norm_tolerance_pct && !(*report.norm_tolerance_pct > 0.0))
            throw ConfigError("report.norm_tolerance_pct", "must be > 0");
        if (report.downsample_factor < 1)
            throw ConfigError("report.downsample_factor", "must be >= 1");
    }
};

/// Inputs of the Monte-Carlo norm-convergence run.
struct ConvergeConfig {
    std::string name = "converge";
    std::uint64_t seed = 0;
    std::optional<double> omega0_sq;
    std::optional<double> omega0_sq_multiple;  // of the fixed point
    double lr = 1e-2;
    double weight_decay = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t dim = 128;
    std::size_t steps = 2000;
    std::size_t trials = 500;
    std::size_t compare_from = 50;
    double tolerance_pct = 15.0;

    bool operator==(const ConvergeConfig&) const = default;

    OptimizerConfig optimizer() const
    {
        OptimizerConfig cfg;
        cfg.kind = OptimizerKind::AdamW;
        cfg.lr = lr;
        cfg.weight_decay = weight_decay;
        cfg.beta1 = beta1;
        cfg.beta2 = beta2;
        cfg.eps = eps;
        return cfg;
    }

    void validate() const
    {
        try {
            optimizer().validate();
        } catch (const DomainError& e) {
            throw ConfigError("", e.what());
        }
        if (omega0_sq.has_value() == omega0_sq_multiple.has_value())
            throw ConfigError("omega0_sq", "set exactly one of omega0_sq and omega0_sq_multiple");
        if (omega0_sq && !(*omega0_sq > 0.0))
            throw ConfigError("omega0_sq", "must be > 0");
        if (omega0_sq_multiple && !(*omega0_sq_multiple > 0.0))
            throw ConfigError("omega0_sq_multiple", "must be > 0");
        if (omega0_sq_multiple && !(weight_decay > 0.0))
            throw ConfigError("omega0_sq_multiple", "needs weight_decay > 0 for a fixed point");
        const double el = lr * weight_decay;
        if (weight_decay > 0.0 && !(el < 1.0))
            throw ConfigError("weight_decay", "lr * weight_decay must be < 1");
        if (dim < 1)
            throw ConfigError("dim", "must be >= 1");
        if (steps < 1)
            throw ConfigError("steps", "must be >= 1");
        if (trials < 1)
            throw ConfigError("trials", "must be >= 1");
        if (!(tolerance_pct > 0.0))
            throw ConfigError("tolerance_pct", "must be > 0");
    }
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline std::string join_path(const std::string& base, std::string_view key)
{
    return base.empty() ? std::string(key) : base + "." + std::string(key);
}

/// Reads the fields of one JSON object and rejects keys nobody asked for.
class ObjectReader {
public:
    ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path))
    {
        if (!j_.is_object())
            throw ConfigError(path_, "expected an object");
    }

    bool has(const char* key) const { return j_.contains(key); }

    void read(const char* key, double& out)
    {
        if (const Json* v = find(key)) {
            if (!v->is_number())
                throw ConfigError(join_path(path_, key), "expected a number");
            out = v->get<double>();
        }
    }

    void read(const char* key, std::optional<double>& out)
    {
        if (const Json* v = find(key)) {
            if (v->is_null()) {
                out.reset();
                return;
            }
            if (!v->is_number())
                throw ConfigError(join_path(path_, key), "expected a number");
            out = v->get<double>();
        }
    }

    template <typename Unsigned>
        requires std::is_unsigned_v<Unsigned> && (!std::is_same_v<Unsigned, bool>)
    void read(const char* key, Unsigned& out)
    {
        if (const Json* v = find(key)) {
            if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0))
                throw ConfigError(join_path(path_, key), "expected a non-negative integer");
            out = v->get<Unsigned>();
        }
    }

    void read(const char* key, bool& out)
    {
        if (const Json* v = find(key)) {
            if (!v->is_boolean())
                throw ConfigError(join_path(path_, key), "expected true or false");
            out = v->get<bool>();
        }
    }

    void read(const char* key, std::optional<bool>& out)
    {
        if (const Json* v = find(key)) {
            if (v->is_null()) {
                out.reset();
                return;
            }
            if (!v->is_boolean())
                throw ConfigError(join_path(path_, key), "expected true or false");
            out = v->get<bool>();
        }
    }

    void read(const char* key, std::string& out)
    {
        if (const Json* v = find(key)) {
            if (!v->is_string())
                throw ConfigError(join_path(path_, key), "expected a string");
            out = v->get<std::string>();
        }
    }

    /// Child object, or nullopt when absent or null.
    std::optional<ObjectReader> child(const char* key)
    {
        const Json* v = find(key);
        if (!v || v->is_null())
            return std::nullopt;
        return ObjectReader(*v, join_path(path_, key));
    }

    std::string path_of(const char* key) const { return join_path(path_, key); }

    void finish() const
    {
        for (const auto& [key, value] : j_.items())
            if (!seen_.count(key))
                throw ConfigError(join_path(path_, key), "unknown key");
    }

private:
    const Json* find(const char* key)
    {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    const Json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <typename Enum, typename Parse>
void read_enum(ObjectReader& r, const char* key, Enum& out, Parse parse)
{
    std::string text;
    const bool present = r.has(key);
    r.read(key, text);
    if (!present)
        return;
    const auto parsed = parse(text);
    if (!parsed)
        throw ConfigError(r.path_of(key), "unknown value \"" + text + "\"");
    out = *parsed;
}

inline std::optional<SystemMode> parse_mode(std::string_view s)
{
    if (s == "random_walk")
        return SystemMode::RandomWalk;
    if (s == "synthetic")
        return SystemMode::Synthetic;
    return std::nullopt;
}

inline std::optional<Granularity> parse_granularity(std::string_view s)
{
    if (s == "neuron")
        return Granularity::Neuron;
    if (s == "layer")
        return Granularity::Layer;
    return std::nullopt;
}

inline std::optional<ScheduleKind> parse_schedule(std::string_view s)
{
    if (s == "constant")
        return ScheduleKind::Constant;
    if (s == "cosine")
        return ScheduleKind::Cosine;
    return std::nullopt;
}

inline std::optional<ImbalanceMode> parse_imbalance_mode(std::string_view s)
{
    if (s == "slow")
        return ImbalanceMode::Slow;
    if (s == "split")
        return ImbalanceMode::Split;
    return std::nullopt;
}

inline void read_optimizer(ObjectReader& r, OptimizerConfig& cfg)
{
    read_enum(r, "kind", cfg.kind, parse_optimizer_kind);
    r.read("lr", cfg.lr);
    r.read("weight_decay", cfg.weight_decay);
    r.read("momentum", cfg.momentum);
    r.read("beta1", cfg.beta1);
    r.read("beta2", cfg.beta2);
    r.read("eps", cfg.eps);
    r.finish();
}

} // namespace detail

inline Json to_json(const OptimizerConfig& cfg)
{
    return Json{{"kind", std::string(to_string(cfg.kind))},
                {"lr", cfg.lr},
                {"weight_decay", cfg.weight_decay},
                {"momentum", cfg.momentum},
                {"beta1", cfg.beta1},
                {"beta2", cfg.beta2},
                {"eps", cfg.eps}};
}

inline Json to_json(const ExperimentConfig& cfg)
{
    Json wrapper{{"enabled", cfg.wrapper.enabled},
                 {"beta", cfg.wrapper.beta},
                 {"eps_rv", cfg.wrapper.eps_rv},
                 {"granularity", std::string(to_string(cfg.wrapper.granularity))},
                 {"center", cfg.wrapper.center},
                 {"adamw_rate_for_adam_l2", cfg.wrapper.adamw_rate_for_adam_l2}};
    if (cfg.wrapper.imbalance)
        wrapper["imbalance"] = Json{{"p", cfg.wrapper.imbalance->unaffected},
                                    {"f", cfg.wrapper.imbalance->factor},
                                    {"mode", std::string(to_string(cfg.wrapper.imbalance->mode))}};
    if (cfg.wrapper.eta_r_override)
        wrapper["eta_r_override"] = *cfg.wrapper.eta_r_override;

    Json telemetry{{"flush_interval", cfg.telemetry.flush_interval}};
    if (cfg.telemetry.per_neuron)
        telemetry["per_neuron"] = *cfg.telemetry.per_neuron;

    Json report{{"burn_in_steps", cfg.report.burn_in_steps},
                {"tolerance_pct", cfg.report.tolerance_pct},
                {"auto_burn_in", cfg.report.auto_burn_in},
                {"downsample_factor", cfg.report.downsample_factor}};
    if (cfg.report.norm_tolerance_pct)
        report["norm_tolerance_pct"] = *cfg.report.norm_tolerance_pct;

    return Json{{"name", cfg.name},
                {"seed", cfg.seed},
                {"system",
                 {{"B", cfg.system.batch},
                  {"C", cfg.system.inputs},
                  {"K", cfg.system.neurons},
                  {"loss_scale", cfg.system.loss_scale},
                  {"eps_bn", cfg.system.eps_bn},
                  {"mode", std::string(to_string(cfg.system.mode))},
                  {"init_scale", cfg.system.init_scale}}},
                {"optimizer", to_json(cfg.optimizer)},
                {"wrapper", wrapper},
                {"steps", cfg.steps},
                {"schedule",
                 {{"kind", std::string(to_string(cfg.schedule.kind))},
                  {"final_fraction", cfg.schedule.final_fraction},
                  {"warmup_steps", cfg.schedule.warmup_steps}}},
                {"telemetry", telemetry},
                {"report", report}};
}

/// Parses and validates an experiment config. Absent keys keep defaults;
/// unknown keys are errors.
inline ExperimentConfig parse_experiment_config(const Json& j)
{
    using detail::ObjectReader;
    ExperimentConfig cfg;
    ObjectReader root(j, "");
    root.read("name", cfg.name);
    root.read("seed", cfg.seed);
    root.read("steps", cfg.steps);
    if (auto r = root.child("system")) {
        r->read("B", cfg.system.batch);
        r->read("C", cfg.system.inputs);
        r->read("K", cfg.system.neurons);
        r->read("loss_scale", cfg.system.loss_scale);
        r->read("eps_bn", cfg.system.eps_bn);
        detail::read_enum(*r, "mode", cfg.system.mode, detail::parse_mode);
        r->read("init_scale", cfg.system.init_scale);
        r->finish();
    }
    if (auto r = root.child("optimizer"))
        detail::read_optimizer(*r, cfg.optimizer);
    if (auto r = root.child("wrapper")) {
        r->read("enabled", cfg.wrapper.enabled);
        r->read("beta", cfg.wrapper.beta);
        r->read("eps_rv", cfg.wrapper.eps_rv);
        detail::read_enum(*r, "granularity", cfg.wrapper.granularity, detail::parse_granularity);
        r->read("center", cfg.wrapper.center);
        r->read("eta_r_override", cfg.wrapper.eta_r_override);
        r->read("adamw_rate_for_adam_l2", cfg.wrapper.adamw_rate_for_adam_l2);
        if (auto imb = r->child("imbalance")) {
            ImbalanceSpec spec;
            imb->read("p", spec.unaffected);
            imb->read("f", spec.factor);
            detail::read_enum(*imb, "mode", spec.mode, detail::parse_imbalance_mode);
            imb->finish();
            cfg.wrapper.imbalance = spec;
        }
        r->finish();
    }
    if (auto r = root.child("schedule")) {
        detail::read_enum(*r, "kind", cfg.schedule.kind, detail::parse_schedule);
        r->read("final_fraction", cfg.schedule.final_fraction);
        r->read("warmup_steps", cfg.schedule.warmup_steps);
        r->finish();
    }
    if (auto r = root.child("telemetry")) {
        r->read("per_neuron", cfg.telemetry.per_neuron);
        r->read("flush_interval", cfg.telemetry.flush_interval);
        r->finish();
    }
    if (auto r = root.child("report")) {
        r->read("burn_in_steps", cfg.report.burn_in_steps);
        r->read("tolerance_pct", cfg.report.tolerance_pct);
        r->read("norm_tolerance_pct", cfg.report.norm_tolerance_pct);
        r->read("auto_burn_in", cfg.report.auto_burn_in);
        r->read("downsample_factor", cfg.report.downsample_factor);
        r->finish();
    }
    root.finish();
    cfg.validate();
    return cfg;
}

inline Json to_json(const ConvergeConfig& cfg)
{
    Json j{{"name", cfg.name},   {"seed", cfg.seed},       {"lr", cfg.lr},
           {"weight_decay", cfg.weight_decay}, {"beta1", cfg.beta1}, {"beta2", cfg.beta2},
           {"eps", cfg.eps},     {"dim", cfg.dim},         {"steps", cfg.steps},
           {"trials", cfg.trials}, {"compare_from", cfg.compare_from}, {"tolerance_pct", cfg.tolerance_pct}};
    if (cfg.omega0_sq)
        j["omega0_sq"] = *cfg.omega0_sq;
    if (cfg.omega0_sq_multiple)
        j["omega0_sq_multiple"] = *cfg.omega0_sq_multiple;
    return j;
}

inline ConvergeConfig parse_converge_config(const Json& j)
{
    ConvergeConfig cfg;
    detail::ObjectReader r(j, "");
    r.read("name", cfg.name);
    r.read("seed", cfg.seed);
    r.read("omega0_sq", cfg.omega0_sq);
    r.read("omega0_sq_multiple", cfg.omega0_sq_multiple);
    r.read("lr", cfg.lr);
    r.read("weight_decay", cfg.weight_decay);
    r.read("beta1", cfg.beta1);
    r.read("beta2", cfg.beta2);
    r.read("eps", cfg.eps);
    r.read("dim", cfg.dim);
    r.read("steps", cfg.steps);
    r.read("trials", cfg.trials);
    r.read("compare_from", cfg.compare_from);
    r.read("tolerance_pct", cfg.tolerance_pct);
    r.finish();
    cfg.validate();
    return cfg;
}

inline Json read_json_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("", "cannot read config file " + path);
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ConfigError("", path + ": " + e.what());
    }
}

/// 64-bit FNV-1a of the canonical serialization, as 16 hex digits.
inline std::string config_hash(const Json& canonical)
{
    const std::string text = canonical.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xF];
        h >>= 4;
    }
    return out;
}

} // namespace rotlab
