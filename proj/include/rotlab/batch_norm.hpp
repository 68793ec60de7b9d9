#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>

#include "rotlab/core_math.hpp"

namespace rotlab {

/// Forward-pass quantities kept for the backward pass of one feature.
struct BatchNormCache {
    double mean = 0.0;
    double variance = 0.0;   // biased (1/B) batch variance
    double inv_std = 0.0;    // 1 / sqrt(variance + eps)
    Vector normalized;       // x_hat
    bool valid = false;
};

/// x_hat = (x - mean) / sqrt(var + eps) over the batch.
inline std::pair<Vector, BatchNormCache> bn_forward(ConstSpan x, double eps)
{
    if (x.empty())
        throw DomainError("bn_forward: empty batch");
    if (!(eps >= 0.0))
        throw DomainError("bn_forward: eps must be >= 0");
    const double b = static_cast<double>(x.size());
    BatchNormCache cache;
    cache.mean = sum(x) / b;
    double var = 0.0;
    for (double xi : x)
        var += (xi - cache.mean) * (xi - cache.mean);
    cache.variance = var / b;
    const double denom = cache.variance + eps;
    if (!(denom > 0.0))
        throw DomainError("bn_forward: zero batch variance with eps = 0");
    cache.inv_std = 1.0 / std::sqrt(denom);
    cache.normalized.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        cache.normalized[i] = (x[i] - cache.mean) * cache.inv_std;
    cache.valid = true;
    Vector out = cache.normalized;
    return {std::move(out), std::move(cache)};
}

/// Gradient with respect to x, treating the batch mean and variance as
/// functions of x:
///   inv_std * (up - mean(up) - x_hat * <x_hat, up> / B)
inline Vector bn_backward(const BatchNormCache& cache, ConstSpan upstream)
{
    if (!cache.valid)
        throw std::logic_error("bn_backward: cache was not produced by bn_forward");
    if (upstream.size() != cache.normalized.size())
        throw std::logic_error("bn_backward: upstream size does not match cached batch");
    const double b = static_cast<double>(upstream.size());
    const double up_mean = sum(upstream) / b;
    const double proj = dot(cache.normalized, upstream) / b;
    Vector out(upstream.size());
    for (std::size_t i = 0; i < upstream.size(); ++i)
        out[i] = cache.inv_std * (upstream[i] - up_mean - cache.normalized[i] * proj);
    return out;
}

} // namespace rotlab
