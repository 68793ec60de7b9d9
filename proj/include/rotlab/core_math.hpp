#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rotlab {

/// Raised for violated mathematical preconditions (zero norms, bad bounds,
/// dimension mismatches).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

using Vector = std::vector<double>;
using ConstSpan = std::span<const double>;
using MutSpan = std::span<double>;

inline void require_same_dim(ConstSpan a, ConstSpan b, const char* what)
{
    if (a.size() != b.size())
        throw DomainError(std::string(what) + ": dimension mismatch (" + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + ")");
}

inline double dot(ConstSpan a, ConstSpan b)
{
    require_same_dim(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

inline double squared_norm(ConstSpan a)
{
    double s = 0.0;
    for (double x : a)
        s += x * x;
    return s;
}

inline double norm(ConstSpan a) { return std::sqrt(squared_norm(a)); }

inline double sum(ConstSpan a)
{
    double s = 0.0;
    for (double x : a)
        s += x;
    return s;
}

inline bool all_finite(ConstSpan a)
{
    for (double x : a)
        if (!std::isfinite(x))
            return false;
    return true;
}

/// y += alpha * x
inline void axpy(double alpha, ConstSpan x, MutSpan y)
{
    require_same_dim(x, y, "axpy");
    for (std::size_t i = 0; i < x.size(); ++i)
        y[i] += alpha * x[i];
}

inline Vector scaled(ConstSpan a, double s)
{
    Vector out(a.begin(), a.end());
    for (double& x : out)
        x *= s;
    return out;
}

inline Vector added(ConstSpan a, ConstSpan b)
{
    require_same_dim(a, b, "added");
    Vector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        out[i] = a[i] + b[i];
    return out;
}

/// Cosine values further than this outside [-1, 1] are treated as bugs.
inline constexpr double kCosineClampTolerance = 1e-9;

/// Angle between two nonzero vectors in [0, pi].
inline double angle_between(ConstSpan a, ConstSpan b)
{
    require_same_dim(a, b, "angle_between");
    const double na = norm(a);
    const double nb = norm(b);
    if (!(na > 0.0))
        throw DomainError("angle_between: first argument has zero norm");
    if (!(nb > 0.0))
        throw DomainError("angle_between: second argument has zero norm");
    double c = dot(a, b) / (na * nb);
    if (c > 1.0 + kCosineClampTolerance || c < -1.0 - kCosineClampTolerance)
        throw DomainError("angle_between: cosine " + std::to_string(c) + " outside [-1, 1]");
    c = std::clamp(c, -1.0, 1.0);
    return std::acos(c);
}

/// Cosine of the angle between a and b; NaN when either is zero.
inline double cosine(ConstSpan a, ConstSpan b)
{
    const double na = norm(a);
    const double nb = norm(b);
    if (!(na > 0.0) || !(nb > 0.0))
        return std::nan("");
    return dot(a, b) / (na * nb);
}

/// v minus its component along basis.
inline Vector project_out(ConstSpan v, ConstSpan basis)
{
    require_same_dim(v, basis, "project_out");
    const double nb2 = squared_norm(basis);
    if (!(nb2 > 0.0))
        throw DomainError("project_out: basis has zero norm");
    const double coeff = dot(v, basis) / nb2;
    Vector out(v.begin(), v.end());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] -= coeff * basis[i];
    return out;
}

/// Removes the all-ones component (the mean) in place.
inline void remove_mean(MutSpan v)
{
    if (v.empty())
        return;
    const double mean = sum(v) / static_cast<double>(v.size());
    for (double& x : v)
        x -= mean;
}

/// Block-wise RMS; a trailing partial block is averaged over its own length.
inline Vector rms_downsample(ConstSpan series, std::size_t factor)
{
    if (factor < 1)
        throw DomainError("rms_downsample: factor must be >= 1");
    Vector out;
    out.reserve((series.size() + factor - 1) / factor);
    for (std::size_t start = 0; start < series.size(); start += factor) {
        const std::size_t end = std::min(series.size(), start + factor);
        double s = 0.0;
        for (std::size_t i = start; i < end; ++i)
            s += series[i] * series[i];
        out.push_back(std::sqrt(s / static_cast<double>(end - start)));
    }
    return out;
}

/// Seeded random stream.
///
/// Bits come from std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Uniforms use the top 53 bits; normals use the polar
/// Box-Muller method implemented here (std::normal_distribution is
/// implementation defined and therefore not used). Both normals of each pair
/// are consumed in order.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform()
    {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Marsaglia polar form of the Box-Muller transform.
    double standard_normal()
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u = 0.0;
        double v = 0.0;
        double s = 0.0;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    /// Fills out with i.i.d. N(0, std^2) draws.
    void fill_normal(MutSpan out, double std_dev)
    {
        for (double& x : out)
            x = std_dev * standard_normal();
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline Vector sample_normal(RngStream& rng, std::size_t n, double std_dev)
{
    if (n < 1)
        throw DomainError("sample_normal: n must be >= 1");
    if (!(std_dev >= 0.0))
        throw DomainError("sample_normal: negative standard deviation");
    Vector out(n);
    rng.fill_normal(out, std_dev);
    return out;
}

/// Running mean and mean-of-squares (Welford-style incremental means).
class StreamingMoments {
public:
    void add(double x)
    {
        ++count_;
        const double n = static_cast<double>(count_);
        mean_ += (x - mean_) / n;
        mean_sq_ += (x * x - mean_sq_) / n;
    }

    std::size_t count() const noexcept { return count_; }
    double mean() const noexcept { return mean_; }
    double mean_of_squares() const noexcept { return mean_sq_; }
    double rms() const noexcept { return std::sqrt(std::max(0.0, mean_sq_)); }
    double variance() const noexcept { return std::max(0.0, mean_sq_ - mean_ * mean_); }

    /// Standard error of the mean (population variance / n).
    double standard_error() const noexcept
    {
        return count_ > 1 ? std::sqrt(variance() / static_cast<double>(count_ - 1)) : 0.0;
    }

private:
    std::size_t count_ = 0;
    double mean_ = 0.0;
    double mean_sq_ = 0.0;
};

} // namespace rotlab
