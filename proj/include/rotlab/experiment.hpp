#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "rotlab/config.hpp"
#include "rotlab/core_math.hpp"
#include "rotlab/equilibrium.hpp"
#include "rotlab/optimizers.hpp"
#include "rotlab/rotational.hpp"
#include "rotlab/simple_system.hpp"
#include "rotlab/telemetry.hpp"

namespace rotlab {

/// A parameter became non-finite during a run.
class NumericError : public std::runtime_error {
public:
    NumericError(std::size_t step, long unit, const std::string& what)
        : std::runtime_error("non-finite " + what + " at step " + std::to_string(step) + ", neuron " +
                             std::to_string(unit)),
          step_(step), unit_(unit)
    {
    }
    std::size_t step() const noexcept { return step_; }
    long unit() const noexcept { return unit_; }

private:
    std::size_t step_;
    long unit_;
};

/// SplitMix64 finalizer; decorrelates seeds derived from one base seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index)
{
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline constexpr std::uint64_t kImbalanceStream = 1;

/// Rotation target of the wrapper for each 1-based step, indexed by step - 1.
/// The target follows the scheduled learning rate.
inline Vector target_eta_r_series(const ExperimentConfig& cfg)
{
    Vector out(cfg.steps);
    if (cfg.wrapper.eta_r_override) {
        std::fill(out.begin(), out.end(), *cfg.wrapper.eta_r_override);
        return out;
    }
    TargetEtaROptions options;
    options.adamw_rate_for_adam_l2 = cfg.wrapper.adamw_rate_for_adam_l2;
    const std::size_t dim = cfg.wrapper.granularity == Granularity::Neuron
                                ? cfg.system.inputs
                                : cfg.system.inputs * cfg.system.neurons;
    double cached_mult = -1.0;
    double cached = 0.0;
    for (std::size_t s = 1; s <= cfg.steps; ++s) {
        const double mult = cfg.schedule.multiplier(s, cfg.steps);
        if (mult != cached_mult) {
            OptimizerConfig scheduled = cfg.optimizer;
            scheduled.lr *= mult;
            cached = resolve_target_eta_r(scheduled, dim, options);
            cached_mult = mult;
        }
        out[s - 1] = cached;
    }
    return out;
}

inline Vector imbalance_scales(const ExperimentConfig& cfg)
{
    if (!cfg.wrapper.enabled || !cfg.wrapper.imbalance)
        return Vector(cfg.system.neurons, 1.0);
    return assign_imbalance(*cfg.wrapper.imbalance, cfg.system.neurons, derive_seed(cfg.seed, kImbalanceStream));
}

struct RunOptions {
    std::optional<std::filesystem::path> out_dir;
    /// Off: no telemetry at all (the trajectory is unchanged).
    bool record = true;
};

struct RunResult {
    TelemetryStore store;
    Matrix initial_weights;
    Matrix final_weights;
    Vector imbalance_scales;
    /// K x C window means of (||omega||^2 g_k^2), AdamL2 runs only.
    std::optional<Matrix> coordinate_sq_means;
    std::size_t noop_steps = 0;
    /// Largest |(||p|| - n_p)| / n_p after any wrapped step.
    double max_norm_drift = 0.0;
};

namespace detail {

inline void check_rows_finite(const Matrix& m, std::size_t step, const char* what)
{
    for (std::size_t k = 0; k < m.rows; ++k)
        if (!all_finite(m.row(k)))
            throw NumericError(step, static_cast<long>(k), what);
}

inline Vector row_norms(const Matrix& m)
{
    Vector out(m.rows);
    for (std::size_t k = 0; k < m.rows; ++k)
        out[k] = norm(m.row(k));
    return out;
}

} // namespace detail

inline void write_coordinate_stats(const std::filesystem::path& path, const Matrix& sq_means)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    std::string text = "neuron,coord,sqrt_mean_unit_grad_sq\n";
    for (std::size_t k = 0; k < sq_means.rows; ++k)
        for (std::size_t c = 0; c < sq_means.cols; ++c) {
            text += std::to_string(k);
            text += ',';
            text += std::to_string(c);
            text += ',';
            append_double(text, std::sqrt(sq_means(k, c)));
            text += '\n';
        }
    out << text;
}

/// Reads a file written by write_coordinate_stats back as squared means.
inline Matrix read_coordinate_stats(const std::filesystem::path& path, std::size_t neurons, std::size_t inputs)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    Matrix out(neurons, inputs, std::nan(""));
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw DomainError("coordinate stats: malformed line '" + line + "'");
        const std::size_t k = std::stoul(line.substr(0, c1));
        const std::size_t c = std::stoul(line.substr(c1 + 1, c2 - c1 - 1));
        const double v = std::stod(line.substr(c2 + 1));
        if (k >= neurons || c >= inputs)
            throw DomainError("coordinate stats: index out of range");
        out(k, c) = v * v;
    }
    if (!all_finite(out.data))
        throw DomainError("coordinate stats: missing entries");
    return out;
}

/// Runs one seeded experiment on the simple system.
inline RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {})
{
    cfg.validate();
    const std::size_t k_count = cfg.system.neurons;
    const std::size_t c_count = cfg.system.inputs;
    SimpleSystem sys = init_system({cfg.system.batch, c_count, k_count}, cfg.system.loss_scale, cfg.seed,
                                   cfg.system.eps_bn);
    if (cfg.system.mode == SystemMode::Synthetic)
        init_synthetic_targets(sys);
    for (double& w : sys.weights.data)
        w *= cfg.system.init_scale;

    RunResult result;
    result.imbalance_scales = imbalance_scales(cfg);

    const bool wrapped = cfg.wrapper.enabled;
    const bool per_neuron_rot = cfg.wrapper.granularity == Granularity::Neuron;
    std::vector<RotationalState> rot;
    Vector targets;
    if (wrapped) {
        if (per_neuron_rot) {
            for (std::size_t k = 0; k < k_count; ++k) {
                rot.push_back(init_rotational(sys.weights.row(k), cfg.wrapper.center, cfg.wrapper.beta,
                                              cfg.wrapper.eps_rv));
                rot.back().imbalance_scale = result.imbalance_scales[k];
            }
        } else {
            rot.push_back(init_rotational(sys.weights.data, cfg.wrapper.center, cfg.wrapper.beta, cfg.wrapper.eps_rv));
        }
        targets = target_eta_r_series(cfg);
    }
    result.initial_weights = sys.weights;

    const bool record = opts.record;
    const bool per_neuron = cfg.telemetry.per_neuron_enabled(k_count);
    result.store = TelemetryStore(per_neuron ? k_count : 0);
    std::optional<TelemetryCsvWriter> writer;
    if (opts.out_dir) {
        std::filesystem::create_directories(*opts.out_dir);
        if (record)
            writer.emplace((*opts.out_dir / "telemetry.csv").string(), cfg.telemetry.flush_interval);
    }

    const bool coord_stats = cfg.optimizer.kind == OptimizerKind::AdamL2;
    Matrix coord_acc;
    if (coord_stats)
        coord_acc = Matrix(k_count, c_count);
    std::size_t coord_samples = 0;

    OptState state(k_count * c_count);
    Vector prev;
    Vector prev_m;
    Vector increments;
    std::vector<TelemetryRecord> records;
    records.reserve(k_count);

    for (std::size_t s = 1; s <= cfg.steps; ++s) {
        OptimizerConfig step_cfg = cfg.optimizer;
        step_cfg.lr *= cfg.schedule.multiplier(s, cfg.steps);

        const GradientSample gs =
            cfg.system.mode == SystemMode::RandomWalk ? forward_backward(sys) : forward_backward_synthetic(sys);
        detail::check_rows_finite(gs.grad, s, "gradient");

        if (coord_stats && s > cfg.report.burn_in_steps) {
            for (std::size_t k = 0; k < k_count; ++k) {
                const double w2 = squared_norm(sys.weights.row(k));
                for (std::size_t c = 0; c < c_count; ++c)
                    coord_acc(k, c) += w2 * gs.grad(k, c) * gs.grad(k, c);
            }
            ++coord_samples;
        }

        if (record) {
            prev = sys.weights.data;
            prev_m = state.m;
        }

        const UpdateDecomposition dec = step(state, sys.weights.data, gs.grad.data, step_cfg);
        const Vector* rms_source = &dec.delta_g;
        if (!wrapped) {
            apply_update(sys.weights.data, dec);
        } else {
            increments.assign(k_count * c_count, 0.0);
            auto wrap = [&](RotationalState& st, std::size_t offset, std::size_t len) {
                MutSpan p = MutSpan(sys.weights.data).subspan(offset, len);
                UpdateDecomposition part;
                part.delta_g.assign(dec.delta_g.begin() + static_cast<std::ptrdiff_t>(offset),
                                    dec.delta_g.begin() + static_cast<std::ptrdiff_t>(offset + len));
                const WrappedStepResult r = wrapped_step(st, p, part, step_cfg.lr, targets[s - 1]);
                std::copy(r.increment.begin(), r.increment.end(),
                          increments.begin() + static_cast<std::ptrdiff_t>(offset));
                const double drift = std::abs(norm(p) - st.initial_norm) / st.initial_norm;
                result.max_norm_drift = std::max(result.max_norm_drift, drift);
            };
            if (per_neuron_rot)
                for (std::size_t k = 0; k < k_count; ++k)
                    wrap(rot[k], k * c_count, c_count);
            else
                wrap(rot[0], 0, k_count * c_count);
            rms_source = &increments;
        }
        detail::check_rows_finite(sys.weights, s, "weight");

        if (!record)
            continue;
        records.clear();
        for (std::size_t k = 0; k < k_count; ++k) {
            const std::size_t off = k * c_count;
            auto slice = [&](const Vector& v) { return ConstSpan(v).subspan(off, c_count); };
            records.push_back(record_step(s, static_cast<long>(k), slice(prev), sys.weights.row(k), slice(*rms_source),
                                          gs.grad.row(k), slice(prev_m)));
        }
        const TelemetryRecord agg = make_layer_record(records, s);
        const std::span<const TelemetryRecord> rows =
            per_neuron ? std::span<const TelemetryRecord>(records) : std::span<const TelemetryRecord>();
        result.store.append(rows, agg);
        if (writer)
            writer->write_step(rows, agg);
    }
    if (writer)
        writer->close();

    for (const auto& st : rot)
        result.noop_steps += st.noop_steps;
    result.final_weights = sys.weights;
    if (coord_stats && coord_samples > 0) {
        for (double& x : coord_acc.data)
            x /= static_cast<double>(coord_samples);
        result.coordinate_sq_means = std::move(coord_acc);
        if (opts.out_dir)
            write_coordinate_stats(*opts.out_dir / "coordinate_stats.csv", *result.coordinate_sq_means);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Reports

/// Half-open window of step indices (step - 1) used for steady-state means.
struct ReportWindow {
    std::size_t from = 0;
    std::size_t to = 0;
};

/// First step index at which the layer-mean norm is within 5% of its mean
/// over the configured window.
inline std::size_t auto_burn_in(const TelemetryStore& store, std::size_t configured_from)
{
    const Vector norms = store.series(Metric::WeightNorm, store.aggregate_unit());
    const double target = window_mean(norms, configured_from, norms.size(), MeanKind::Arithmetic);
    for (std::size_t i = 0; i < norms.size(); ++i)
        if (std::abs(norms[i] - target) <= 0.05 * std::abs(target))
            return std::min(i, norms.size() - 1);
    return configured_from;
}

inline ReportWindow report_window(const ExperimentConfig& cfg, const TelemetryStore& store)
{
    if (store.steps() != cfg.steps)
        throw DomainError("telemetry holds " + std::to_string(store.steps()) + " steps, config expects " +
                          std::to_string(cfg.steps));
    ReportWindow w{cfg.report.burn_in_steps, cfg.steps};
    if (cfg.report.auto_burn_in)
        w.from = auto_burn_in(store, cfg.report.burn_in_steps);
    return w;
}

struct ReportEntry {
    std::string quantity;
    long unit = -1;  // -1: layer
    double measured = 0.0;
    std::optional<double> predicted;
    std::optional<double> tolerance_pct;  // empty: informational
    std::string note;

    std::optional<double> relative_error() const
    {
        if (!predicted || *predicted == 0.0)
            return std::nullopt;
        return (measured - *predicted) / *predicted;
    }
    bool checked() const { return tolerance_pct.has_value() && predicted.has_value(); }
    bool pass() const
    {
        if (!checked())
            return true;
        const auto rel = relative_error();
        return rel && std::abs(*rel) * 100.0 <= *tolerance_pct;
    }
};

struct ComparisonReport {
    std::string name;
    std::string config_hash;
    std::uint64_t seed = 0;
    ReportWindow window;
    std::optional<double> lambda_u;
    bool lambda_e_applied = false;
    std::vector<ReportEntry> entries;
    std::vector<std::string> notes;
    std::size_t downsample_factor = 1;
    Vector angular_update_downsampled;
    Vector weight_norm_downsampled;

    bool pass() const
    {
        return std::all_of(entries.begin(), entries.end(), [](const ReportEntry& e) { return e.pass(); });
    }
    std::size_t checked_count() const
    {
        return static_cast<std::size_t>(
            std::count_if(entries.begin(), entries.end(), [](const ReportEntry& e) { return e.checked(); }));
    }
    const ReportEntry* find(std::string_view quantity, long unit = -1) const
    {
        for (const auto& e : entries)
            if (e.quantity == quantity && e.unit == unit)
                return &e;
        return nullptr;
    }
};

inline Json to_json(const ComparisonReport& r)
{
    Json entries = Json::array();
    for (const auto& e : r.entries) {
        Json j{{"quantity", e.quantity}, {"unit", e.unit}, {"measured", e.measured}};
        j["predicted"] = e.predicted ? Json(*e.predicted) : Json(nullptr);
        const auto rel = e.relative_error();
        j["relative_error"] = rel ? Json(*rel) : Json(nullptr);
        j["tolerance_pct"] = e.tolerance_pct ? Json(*e.tolerance_pct) : Json(nullptr);
        j["verdict"] = !e.checked() ? "INFO" : (e.pass() ? "PASS" : "FAIL");
        if (!e.note.empty())
            j["note"] = e.note;
        entries.push_back(std::move(j));
    }
    Json j{{"name", r.name},
           {"config_hash", r.config_hash},
           {"seed", r.seed},
           {"version", std::string(kVersion)},
           {"window", {{"from_step", r.window.from}, {"to_step", r.window.to}}},
           {"lambda_e_applied", r.lambda_e_applied},
           {"entries", entries},
           {"notes", r.notes},
           {"downsample_factor", r.downsample_factor},
           {"series",
            {{"angular_update", r.angular_update_downsampled}, {"weight_norm", r.weight_norm_downsampled}}},
           {"pass", r.pass()}};
    j["lambda_u"] = r.lambda_u ? Json(*r.lambda_u) : Json(nullptr);
    return j;
}

namespace detail {

inline double unit_mean(const TelemetryStore& store, Metric m, std::size_t unit, ReportWindow w)
{
    return window_mean(store.series(m, unit), w.from, w.to, layer_mean_kind(m));
}

inline void add_entry(ComparisonReport& r, std::string quantity, long unit, double measured,
                      std::optional<double> predicted, std::optional<double> tolerance, std::string note = {})
{
    r.entries.push_back({std::move(quantity), unit, measured, predicted, tolerance, std::move(note)});
}

inline void passive_entries(ComparisonReport& report, const ExperimentConfig& cfg, const TelemetryStore& store,
                            const std::optional<Matrix>& coord_sq_means, ReportWindow w)
{
    const std::size_t agg = store.aggregate_unit();
    const std::size_t c_count = cfg.system.inputs;
    const double tol = cfg.report.tolerance_pct;
    const double norm_tol = cfg.report.norm_tolerance();
    const double eta_r = unit_mean(store, Metric::AngularUpdate, agg, w);
    const double omega = unit_mean(store, Metric::WeightNorm, agg, w);
    const double eta_g = unit_mean(store, Metric::RmsUpdate, agg, w);

    OptimizerConfig opt = cfg.optimizer;
    if (cfg.system.mode == SystemMode::Synthetic) {
        report.lambda_u = unit_mean(store, Metric::RadialCoeff, agg, w);
        if (opt.kind == OptimizerKind::SGDM) {
            opt.weight_decay = effective_decay(opt.weight_decay, *report.lambda_u).lambda_e;
            report.lambda_e_applied = true;
        }
    }
    if (!(opt.weight_decay > 0.0)) {
        report.notes.emplace_back("no equilibrium: lambda is zero");
        add_entry(report, "eta_r", -1, eta_r, std::nullopt, std::nullopt);
        add_entry(report, "weight_norm", -1, omega, std::nullopt, std::nullopt);
        return;
    }

    std::optional<double> predicted_eta_r;
    std::optional<double> predicted_norm;
    std::optional<double> predicted_eta_g;
    switch (opt.kind) {
    case OptimizerKind::AdamW:
    case OptimizerKind::Lion: {
        const auto p = predict(opt, c_count);
        predicted_eta_r = p.eta_r_hat;
        predicted_norm = p.omega_norm_hat;
        predicted_eta_g = p.eta_g_hat;
        break;
    }
    case OptimizerKind::SGDM: {
        // The norm prediction uses each neuron's measured E[||g_unit||^2].
        GradientStats layer_stats;
        layer_stats.expected_sq_norm = unit_mean(store, Metric::GradSqNorm, agg, w);
        layer_stats.unit_expected_sq_norm = unit_mean(store, Metric::UnitGradSqNorm, agg, w);
        const auto p = predict(opt, c_count, layer_stats);
        predicted_eta_r = p.eta_r_hat;
        predicted_eta_g = p.eta_g_hat;
        if (store.neurons() > 0) {
            double acc = 0.0;
            for (std::size_t k = 0; k < store.neurons(); ++k) {
                GradientStats s;
                s.expected_sq_norm = unit_mean(store, Metric::GradSqNorm, k, w);
                s.unit_expected_sq_norm = unit_mean(store, Metric::UnitGradSqNorm, k, w);
                acc += *predict(opt, c_count, s).omega_norm_hat;
            }
            predicted_norm = acc / static_cast<double>(store.neurons());
        } else {
            predicted_norm = p.omega_norm_hat;
            report.notes.emplace_back("weight_norm prediction uses the layer-mean E[||g_unit||^2]");
        }
        break;
    }
    case OptimizerKind::AdamL2: {
        if (!coord_sq_means) {
            report.notes.emplace_back("AdamL2 predictions need coordinate statistics; none supplied");
            break;
        }
        double acc_r = 0.0;
        double acc_w = 0.0;
        const std::size_t k_count = coord_sq_means->rows;
        for (std::size_t k = 0; k < k_count; ++k) {
            GradientStats s;
            Vector sq(coord_sq_means->row(k).begin(), coord_sq_means->row(k).end());
            for (double& x : sq)
                x = std::sqrt(x);
            s.per_coord_sqrt_second_moment = std::move(sq);
            const auto p = predict(opt, c_count, s);
            acc_r += *p.eta_r_hat;
            acc_w += *p.omega_norm_hat;
            predicted_eta_g = p.eta_g_hat;
            if (k < store.neurons())
                add_entry(report, "eta_r", static_cast<long>(k), unit_mean(store, Metric::AngularUpdate, k, w),
                          p.eta_r_hat, std::nullopt);
        }
        predicted_eta_r = acc_r / static_cast<double>(k_count);
        predicted_norm = acc_w / static_cast<double>(k_count);
        break;
    }
    }

    std::optional<double> override_tol = tol;
    if (cfg.wrapper.eta_r_override) {
        predicted_eta_r = *cfg.wrapper.eta_r_override;
        report.notes.emplace_back("eta_r prediction replaced by wrapper.eta_r_override");
    }
    add_entry(report, "eta_r", -1, eta_r, predicted_eta_r, predicted_eta_r ? override_tol : std::nullopt);
    add_entry(report, "weight_norm", -1, omega, predicted_norm, predicted_norm ? std::optional(norm_tol) : std::nullopt);
    add_entry(report, "eta_g", -1, eta_g, predicted_eta_g, std::nullopt);
}

inline void wrapper_entries(ComparisonReport& report, const ExperimentConfig& cfg, const TelemetryStore& store,
                            ReportWindow w)
{
    const Vector targets = target_eta_r_series(cfg);
    const double target_mean = window_mean(targets, w.from, w.to, MeanKind::Arithmetic);
    const Vector scales = imbalance_scales(cfg);
    const double tol = cfg.report.tolerance_pct;
    const std::size_t agg = store.aggregate_unit();
    if (cfg.wrapper.granularity == Granularity::Layer) {
        add_entry(report, "eta_r", -1, unit_mean(store, Metric::AngularUpdate, agg, w), target_mean, std::nullopt,
                  "layer granularity: target applies to the flattened layer");
        return;
    }
    for (std::size_t k = 0; k < store.neurons(); ++k)
        add_entry(report, "eta_r", static_cast<long>(k), unit_mean(store, Metric::AngularUpdate, k, w),
                  target_mean * scales[k], tol);
    double mean_scale = 0.0;
    for (double s : scales)
        mean_scale += s;
    mean_scale /= static_cast<double>(scales.size());
    add_entry(report, "eta_r", -1, unit_mean(store, Metric::AngularUpdate, agg, w), target_mean * mean_scale, tol);
}

} // namespace detail

/// Measured-vs-predicted comparison. Depends only on the config, the stored
/// telemetry and (for AdamL2) the coordinate statistics.
inline ComparisonReport build_report(const ExperimentConfig& cfg, const TelemetryStore& store,
                                     const std::optional<Matrix>& coord_sq_means = std::nullopt)
{
    ComparisonReport report;
    report.name = cfg.name;
    report.config_hash = config_hash(to_json(cfg));
    report.seed = cfg.seed;
    report.window = report_window(cfg, store);
    report.downsample_factor = cfg.report.downsample_factor;
    const std::size_t agg = store.aggregate_unit();
    report.angular_update_downsampled =
        rms_downsample(store.series(Metric::AngularUpdate, agg), cfg.report.downsample_factor);
    report.weight_norm_downsampled = rms_downsample(store.series(Metric::WeightNorm, agg), cfg.report.downsample_factor);
    if (cfg.wrapper.enabled)
        detail::wrapper_entries(report, cfg, store, report.window);
    else
        detail::passive_entries(report, cfg, store, coord_sq_means, report.window);
    return report;
}

/// Window means of every metric for every recorded unit.
inline Json run_summary(const ExperimentConfig& cfg, const RunResult& result)
{
    const ReportWindow w = report_window(cfg, result.store);
    Json units = Json::array();
    for (std::size_t u = 0; u < result.store.units(); ++u) {
        Json unit{{"layer", "W"}, {"neuron", u == result.store.aggregate_unit() ? -1L : static_cast<long>(u)}};
        for (std::size_t m = 0; m < kMetricCount; ++m) {
            const auto metric = static_cast<Metric>(m);
            try {
                unit[std::string(to_string(metric))] = detail::unit_mean(result.store, metric, u, w);
            } catch (const DomainError&) {
                unit[std::string(to_string(metric))] = nullptr;
            }
        }
        units.push_back(std::move(unit));
    }
    return Json{{"name", cfg.name},
                {"config_hash", config_hash(to_json(cfg))},
                {"seed", cfg.seed},
                {"version", std::string(kVersion)},
                {"steps", cfg.steps},
                {"window", {{"from_step", w.from}, {"to_step", w.to}}},
                {"noop_steps", result.noop_steps},
                {"max_norm_drift", result.max_norm_drift},
                {"units", units}};
}

// ---------------------------------------------------------------------------
// Norm convergence

struct ConvergeResult {
    double omega0_sq = 0.0;
    std::optional<double> fixed_point;
    Vector monte_carlo;               // E[omega_i^2], i = 0..steps
    std::optional<Vector> analytic;   // empty without equilibrium
    double max_relative_error = 0.0;  // over i >= compare_from
    bool pass = true;
};

/// One Monte-Carlo trial: AdamW on a single vector with N(0, 1) gradients.
inline Vector converge_trial(const ConvergeConfig& cfg, double omega0_sq, std::size_t trial)
{
    RngStream rng(derive_seed(cfg.seed, trial));
    Vector p = sample_normal(rng, cfg.dim, 1.0);
    const double scale = std::sqrt(omega0_sq) / norm(p);
    for (double& x : p)
        x *= scale;
    const OptimizerConfig opt = cfg.optimizer();
    OptState state(cfg.dim);
    Vector g(cfg.dim);
    Vector curve(cfg.steps + 1);
    curve[0] = squared_norm(p);
    for (std::size_t i = 1; i <= cfg.steps; ++i) {
        rng.fill_normal(g, 1.0);
        apply_update(p, step_adamw(state, p, g, opt));
        curve[i] = squared_norm(p);
    }
    return curve;
}

/// Averages `trials` independent walks. Trial i always uses the same seed,
/// and sums run in trial order, so output does not depend on `jobs`.
inline ConvergeResult run_converge(const ConvergeConfig& cfg, std::size_t jobs = 1)
{
    cfg.validate();
    ConvergeResult out;
    const OptimizerConfig opt = cfg.optimizer();
    if (cfg.weight_decay > 0.0)
        out.fixed_point = adamw_norm_fixed_point_sq(cfg.lr, cfg.weight_decay, cfg.dim);
    out.omega0_sq = cfg.omega0_sq ? *cfg.omega0_sq : *cfg.omega0_sq_multiple * *out.fixed_point;

    std::vector<Vector> curves(cfg.trials);
    jobs = std::clamp<std::size_t>(jobs, 1, cfg.trials);
    if (jobs == 1) {
        for (std::size_t t = 0; t < cfg.trials; ++t)
            curves[t] = converge_trial(cfg, out.omega0_sq, t);
    } else {
        std::vector<std::jthread> workers;
        for (std::size_t j = 0; j < jobs; ++j)
            workers.emplace_back([&, j] {
                for (std::size_t t = j; t < cfg.trials; t += jobs)
                    curves[t] = converge_trial(cfg, out.omega0_sq, t);
            });
    }
    out.monte_carlo.assign(cfg.steps + 1, 0.0);
    for (const Vector& c : curves)
        axpy(1.0, c, out.monte_carlo);
    for (double& x : out.monte_carlo)
        x /= static_cast<double>(cfg.trials);

    if (out.fixed_point) {
        out.analytic = norm_convergence_curve(out.omega0_sq, opt, cfg.dim, cfg.steps);
        for (std::size_t i = cfg.compare_from; i <= cfg.steps; ++i) {
            const double rel = std::abs(out.monte_carlo[i] - (*out.analytic)[i]) / (*out.analytic)[i];
            out.max_relative_error = std::max(out.max_relative_error, rel);
        }
        out.pass = out.max_relative_error * 100.0 <= cfg.tolerance_pct;
    }
    return out;
}

inline std::string converge_csv(const ConvergeResult& r)
{
    std::string text = "step,monte_carlo,analytic,relative_error\n";
    for (std::size_t i = 0; i < r.monte_carlo.size(); ++i) {
        text += std::to_string(i);
        text += ',';
        append_double(text, r.monte_carlo[i]);
        if (r.analytic) {
            const double a = (*r.analytic)[i];
            text += ',';
            append_double(text, a);
            text += ',';
            append_double(text, (r.monte_carlo[i] - a) / a);
        } else {
            text += ",n/a,n/a";
        }
        text += '\n';
    }
    return text;
}

} // namespace rotlab
