#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rotlab/core_math.hpp"

namespace rotlab {

enum class Metric : std::size_t {
    WeightNorm = 0,
    AngularUpdate,
    RmsUpdate,
    RadialCoeff,
    GradSqNorm,
    UnitGradSqNorm,
    MomentumGradCos,
};

inline constexpr std::size_t kMetricCount = 7;

inline constexpr std::array<std::string_view, kMetricCount> kMetricNames = {
    "weight_norm", "angular_update", "rms_update", "radial_coeff", "grad_sq_norm", "unit_grad_sq_norm",
    "momentum_grad_cos"};

inline std::string_view to_string(Metric m) { return kMetricNames[static_cast<std::size_t>(m)]; }

/// One step of one unit. Missing values are empty optionals.
struct TelemetryRecord {
    std::size_t step = 0;
    std::string layer = "W";
    long neuron = -1;  // -1 marks the layer aggregate
    std::array<std::optional<double>, kMetricCount> values{};

    std::optional<double>& operator[](Metric m) { return values[static_cast<std::size_t>(m)]; }
    const std::optional<double>& operator[](Metric m) const { return values[static_cast<std::size_t>(m)]; }
};

/// Measurements for one unit's step from omega_prev to omega_next.
/// `gradient` is the gradient evaluated at omega_prev; `momentum` is the
/// momentum buffer before this step, when the optimizer has one.
inline TelemetryRecord record_step(std::size_t step, long neuron, ConstSpan omega_prev, ConstSpan omega_next,
                                   ConstSpan delta_g, ConstSpan gradient,
                                   std::optional<ConstSpan> momentum = std::nullopt)
{
    TelemetryRecord rec;
    rec.step = step;
    rec.neuron = neuron;
    const double prev_sq = squared_norm(omega_prev);
    const double next_norm = norm(omega_next);
    const double grad_sq = squared_norm(gradient);
    rec[Metric::WeightNorm] = next_norm;
    if (prev_sq > 0.0 && next_norm > 0.0) {
        rec[Metric::AngularUpdate] = angle_between(omega_prev, omega_next);
        rec[Metric::RadialCoeff] = dot(omega_prev, gradient) / prev_sq;
    }
    rec[Metric::RmsUpdate] = norm(delta_g);
    rec[Metric::GradSqNorm] = grad_sq;
    rec[Metric::UnitGradSqNorm] = prev_sq * grad_sq;
    if (momentum) {
        const double c = cosine(*momentum, gradient);
        if (std::isfinite(c))
            rec[Metric::MomentumGradCos] = c;
    }
    return rec;
}

enum class MeanKind { Arithmetic, Rms };

/// How a metric is averaged across neurons: RMS for update sizes,
/// arithmetic otherwise.
inline MeanKind layer_mean_kind(Metric m) { return m == Metric::RmsUpdate ? MeanKind::Rms : MeanKind::Arithmetic; }

inline std::optional<double> try_layer_mean(std::span<const TelemetryRecord> records, Metric metric)
{
    const MeanKind kind = layer_mean_kind(metric);
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& r : records) {
        if (!r[metric])
            continue;
        const double x = *r[metric];
        acc += kind == MeanKind::Rms ? x * x : x;
        ++n;
    }
    if (n == 0)
        return std::nullopt;
    const double mean = acc / static_cast<double>(n);
    return kind == MeanKind::Rms ? std::sqrt(mean) : mean;
}

inline double layer_mean(std::span<const TelemetryRecord> records, Metric metric)
{
    if (records.empty())
        throw DomainError("layer_mean: no neuron records");
    const auto m = try_layer_mean(records, metric);
    if (!m)
        throw DomainError("layer_mean: no record carries " + std::string(to_string(metric)));
    return *m;
}

/// Layer aggregate row (neuron = -1) for one step.
inline TelemetryRecord make_layer_record(std::span<const TelemetryRecord> records, std::size_t step,
                                         std::string layer = "W")
{
    TelemetryRecord agg;
    agg.step = step;
    agg.layer = std::move(layer);
    agg.neuron = -1;
    for (std::size_t i = 0; i < kMetricCount; ++i)
        agg.values[i] = try_layer_mean(records, static_cast<Metric>(i));
    return agg;
}

/// Mean of series[from, to); NaN entries (missing values) are skipped.
inline double window_mean(ConstSpan series, std::size_t from, std::size_t to, MeanKind kind)
{
    if (from >= to || to > series.size())
        throw DomainError("window_mean: empty or out-of-range window [" + std::to_string(from) + ", " +
                          std::to_string(to) + ") for series of length " + std::to_string(series.size()));
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = from; i < to; ++i) {
        const double x = series[i];
        if (std::isnan(x))
            continue;
        acc += kind == MeanKind::Rms ? x * x : x;
        ++n;
    }
    if (n == 0)
        throw DomainError("window_mean: window holds no values");
    const double mean = acc / static_cast<double>(n);
    return kind == MeanKind::Rms ? std::sqrt(mean) : mean;
}

// ---------------------------------------------------------------------------
// In-memory series

/// Raw per-step series for every metric of every unit. Unit index
/// `neurons()` is the layer aggregate. Missing values are NaN.
class TelemetryStore {
public:
    TelemetryStore() = default;
    explicit TelemetryStore(std::size_t neurons) : neurons_(neurons) {}

    std::size_t neurons() const noexcept { return neurons_; }
    std::size_t units() const noexcept { return neurons_ + 1; }
    std::size_t aggregate_unit() const noexcept { return neurons_; }
    std::size_t steps() const noexcept { return steps_; }

    /// Appends one step: `per_neuron` (may be empty when per-neuron
    /// recording is off) followed by the aggregate.
    void append(std::span<const TelemetryRecord> per_neuron, const TelemetryRecord& aggregate)
    {
        if (per_neuron.size() != neurons_)
            throw DomainError("TelemetryStore::append: expected " + std::to_string(neurons_) + " neuron records");
        for (std::size_t m = 0; m < kMetricCount; ++m) {
            auto& column = data_[m];
            for (const auto& r : per_neuron)
                column.push_back(r.values[m].value_or(std::nan("")));
            column.push_back(aggregate.values[m].value_or(std::nan("")));
        }
        ++steps_;
    }

    double at(Metric m, std::size_t unit, std::size_t step_index) const
    {
        return data_[static_cast<std::size_t>(m)][step_index * units() + unit];
    }

    /// Copy of one unit's series for a metric, indexed by step - 1.
    Vector series(Metric m, std::size_t unit) const
    {
        Vector out(steps_);
        for (std::size_t s = 0; s < steps_; ++s)
            out[s] = at(m, unit, s);
        return out;
    }

    bool operator==(const TelemetryStore& other) const
    {
        if (neurons_ != other.neurons_ || steps_ != other.steps_)
            return false;
        for (std::size_t m = 0; m < kMetricCount; ++m) {
            const auto& a = data_[m];
            const auto& b = other.data_[m];
            for (std::size_t i = 0; i < a.size(); ++i) {
                const bool both_nan = std::isnan(a[i]) && std::isnan(b[i]);
                if (!both_nan && a[i] != b[i])
                    return false;
            }
        }
        return true;
    }

private:
    std::size_t neurons_ = 0;
    std::size_t steps_ = 0;
    std::array<Vector, kMetricCount> data_{};
};

// ---------------------------------------------------------------------------
// CSV

inline constexpr std::string_view kTelemetryCsvHeader =
    "step,layer,neuron,weight_norm,angular_update,rms_update,radial_coeff,grad_sq_norm,unit_grad_sq_norm,"
    "momentum_grad_cos";

/// Shortest representation that round-trips exactly.
inline void append_double(std::string& out, double x)
{
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    out.append(buf, res.ptr);
}

inline void append_csv_row(std::string& out, const TelemetryRecord& r)
{
    out += std::to_string(r.step);
    out += ',';
    out += r.layer;
    out += ',';
    out += std::to_string(r.neuron);
    for (const auto& v : r.values) {
        out += ',';
        if (v)
            append_double(out, *v);
    }
    out += '\n';
}

/// Writes telemetry rows, flushing to disk every `flush_interval` steps.
class TelemetryCsvWriter {
public:
    TelemetryCsvWriter(const std::string& path, std::size_t flush_interval)
        : file_(path, std::ios::binary | std::ios::trunc), flush_interval_(flush_interval == 0 ? 1 : flush_interval)
    {
        if (!file_)
            throw std::runtime_error("cannot open " + path + " for writing");
        buffer_.append(kTelemetryCsvHeader);
        buffer_ += '\n';
    }

    TelemetryCsvWriter(const TelemetryCsvWriter&) = delete;
    TelemetryCsvWriter& operator=(const TelemetryCsvWriter&) = delete;

    ~TelemetryCsvWriter()
    {
        try {
            close();
        } catch (...) {
        }
    }

    void write_step(std::span<const TelemetryRecord> per_neuron, const TelemetryRecord& aggregate)
    {
        for (const auto& r : per_neuron)
            append_csv_row(buffer_, r);
        append_csv_row(buffer_, aggregate);
        if (++pending_steps_ >= flush_interval_)
            flush();
    }

    void flush()
    {
        file_.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
        file_.flush();
        if (!file_)
            throw std::runtime_error("telemetry write failed");
        buffer_.clear();
        pending_steps_ = 0;
    }

    void close()
    {
        if (file_.is_open()) {
            flush();
            file_.close();
        }
    }

private:
    std::ofstream file_;
    std::size_t flush_interval_;
    std::size_t pending_steps_ = 0;
    std::string buffer_;
};

namespace detail {

inline std::optional<double> parse_optional_double(std::string_view field, std::size_t line)
{
    if (field.empty())
        return std::nullopt;
    double x = 0.0;
    const auto res = std::from_chars(field.data(), field.data() + field.size(), x);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size())
        throw DomainError("telemetry CSV line " + std::to_string(line) + ": bad number '" + std::string(field) + "'");
    return x;
}

template <typename Int>
Int parse_int(std::string_view field, std::size_t line)
{
    Int x{};
    const auto res = std::from_chars(field.data(), field.data() + field.size(), x);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size())
        throw DomainError("telemetry CSV line " + std::to_string(line) + ": bad integer '" + std::string(field) + "'");
    return x;
}

} // namespace detail

/// Parses telemetry CSV text into a store. Rows must be grouped by step,
/// with the aggregate row (neuron = -1) last in each group.
inline TelemetryStore parse_telemetry_csv(std::string_view text)
{
    std::vector<TelemetryRecord> pending;
    std::optional<TelemetryStore> store;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool header_seen = false;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos)
            end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);
        if (line.empty())
            continue;
        if (!header_seen) {
            if (line != kTelemetryCsvHeader)
                throw DomainError("telemetry CSV: unexpected header");
            header_seen = true;
            continue;
        }
        std::array<std::string_view, 3 + kMetricCount> fields;
        std::size_t count = 0;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            if (count >= fields.size())
                throw DomainError("telemetry CSV line " + std::to_string(line_no) + ": too many fields");
            fields[count++] = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
            if (comma == std::string_view::npos)
                break;
            start = comma + 1;
        }
        if (count != fields.size())
            throw DomainError("telemetry CSV line " + std::to_string(line_no) + ": expected " +
                              std::to_string(fields.size()) + " fields");
        TelemetryRecord rec;
        rec.step = detail::parse_int<std::size_t>(fields[0], line_no);
        rec.layer = std::string(fields[1]);
        rec.neuron = detail::parse_int<long>(fields[2], line_no);
        for (std::size_t m = 0; m < kMetricCount; ++m)
            rec.values[m] = detail::parse_optional_double(fields[3 + m], line_no);
        if (rec.neuron >= 0) {
            if (static_cast<std::size_t>(rec.neuron) != pending.size())
                throw DomainError("telemetry CSV line " + std::to_string(line_no) + ": neurons out of order");
            pending.push_back(std::move(rec));
            continue;
        }
        if (!store)
            store.emplace(pending.size());
        store->append(pending, rec);
        pending.clear();
    }
    if (!header_seen)
        throw DomainError("telemetry CSV: missing header");
    if (!pending.empty())
        throw DomainError("telemetry CSV: trailing neuron rows without an aggregate row");
    return store ? std::move(*store) : TelemetryStore(0);
}

inline TelemetryStore read_telemetry_csv(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_telemetry_csv(ss.str());
}

} // namespace rotlab
