#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "rotlab/core_math.hpp"
#include "rotlab/equilibrium.hpp"
#include "rotlab/optimizers.hpp"

namespace rotlab {

/// Per-vector state of the rotational wrapper.
struct RotationalState {
    double nu = 0.0;             // EMA of squared projected update norm
    double initial_norm = 0.0;   // n_p, fixed after init
    double beta = 0.9;
    double eps = 1e-8;
    std::size_t t = 0;
    double target_eta_r = 0.0;
    double imbalance_scale = 1.0;
    bool center = true;
    std::size_t noop_steps = 0;
};

/// Records ||p|| and, when centering, replaces p by its mean-free direction
/// at the same norm.
inline RotationalState init_rotational(MutSpan p, bool center, double beta = 0.9, double eps = 1e-8)
{
    if (!(beta >= 0.0 && beta < 1.0))
        throw DomainError("init_rotational: beta must lie in [0, 1)");
    if (!(eps >= 0.0))
        throw DomainError("init_rotational: eps must be >= 0");
    RotationalState state;
    state.beta = beta;
    state.eps = eps;
    state.center = center;
    state.initial_norm = norm(p);
    if (!(state.initial_norm > 0.0))
        throw DomainError("init_rotational: parameter has zero norm");
    if (center) {
        remove_mean(p);
        const double centered = norm(p);
        if (!(centered > 0.0))
            throw DomainError("init_rotational: constant parameter cannot be centered");
        for (double& x : p)
            x *= state.initial_norm / centered;
    }
    return state;
}

struct WrappedStepResult {
    Vector increment;   // applied before renormalization
    bool noop = false;
};

/// One rotational update of p from the inner optimizer's decomposition.
/// The decay part of `inner` is discarded.
inline WrappedStepResult wrapped_step(RotationalState& state, MutSpan p, const UpdateDecomposition& inner, double lr,
                                      double eta_r)
{
    require_same_dim(p, inner.delta_g, "wrapped_step");
    if (!(lr > 0.0))
        throw DomainError("wrapped_step: learning rate must be > 0 to undo it");
    if (!(state.initial_norm > 0.0))
        throw DomainError("wrapped_step: state was not initialized");

    Vector delta = scaled(inner.delta_g, 1.0 / lr);
    if (state.center)
        remove_mean(delta);
    delta = project_out(delta, p);
    // The projection onto p can reintroduce a tiny mean component.
    if (state.center)
        remove_mean(delta);

    const double delta_sq = squared_norm(delta);
    state.nu = state.beta * state.nu + (1.0 - state.beta) * delta_sq;
    state.t += 1;
    state.target_eta_r = eta_r;

    WrappedStepResult result;
    if (state.nu == 0.0) {
        state.noop_steps += 1;
        result.increment.assign(p.size(), 0.0);
        result.noop = true;
        return result;
    }

    const double bias_correction = 1.0 - std::pow(state.beta, static_cast<double>(state.t));
    const double denom = std::sqrt(state.nu / bias_correction) + state.eps;
    const double coeff = eta_r * state.imbalance_scale * state.initial_norm / denom;
    result.increment = scaled(delta, coeff);
    axpy(1.0, result.increment, p);
    const double n = norm(p);
    for (double& x : p)
        x *= state.initial_norm / n;
    return result;
}

// ---------------------------------------------------------------------------
// Imbalance injection

enum class ImbalanceMode { Slow, Split };

inline std::string_view to_string(ImbalanceMode mode) { return mode == ImbalanceMode::Slow ? "slow" : "split"; }

struct ImbalanceSpec {
    double unaffected = 1.0;  // p: portion left at scale 1
    double factor = 1.0;      // f >= 1
    ImbalanceMode mode = ImbalanceMode::Slow;

    bool operator==(const ImbalanceSpec&) const = default;

    void validate() const
    {
        if (!(unaffected >= 0.0 && unaffected <= 1.0))
            throw DomainError("imbalance.p must lie in [0, 1]");
        if (!(factor >= 1.0) || !std::isfinite(factor))
            throw DomainError("imbalance.f must be >= 1");
    }
};

/// Per-neuron rotation multipliers. mode=slow: round((1-p) K) neurons get
/// 1/f. mode=split: round((1-p) K / 2) get f and as many get 1/f. Which
/// neurons are affected is a seeded random permutation.
inline Vector assign_imbalance(const ImbalanceSpec& spec, std::size_t neuron_count, std::uint64_t seed)
{
    spec.validate();
    Vector scales(neuron_count, 1.0);
    std::vector<std::size_t> order(neuron_count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream rng(seed);
    for (std::size_t i = neuron_count; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
        std::swap(order[i - 1], order[j]);
    }
    const double affected = (1.0 - spec.unaffected) * static_cast<double>(neuron_count);
    std::size_t next = 0;
    if (spec.mode == ImbalanceMode::Slow) {
        const auto n_slow = static_cast<std::size_t>(std::llround(affected));
        for (std::size_t i = 0; i < n_slow && next < neuron_count; ++i)
            scales[order[next++]] = 1.0 / spec.factor;
    } else {
        const auto n_each = static_cast<std::size_t>(std::llround(affected / 2.0));
        for (std::size_t i = 0; i < n_each && next < neuron_count; ++i)
            scales[order[next++]] = spec.factor;
        for (std::size_t i = 0; i < n_each && next < neuron_count; ++i)
            scales[order[next++]] = 1.0 / spec.factor;
    }
    return scales;
}

// ---------------------------------------------------------------------------
// Target rotation

struct TargetEtaROptions {
    std::optional<double> override_eta_r;
    /// Adam+l2 inside the wrapper, rotated at AdamW's rate.
    bool adamw_rate_for_adam_l2 = false;
    GradientStats stats;
};

inline double resolve_target_eta_r(const OptimizerConfig& inner, std::size_t dim, const TargetEtaROptions& options = {})
{
    if (options.override_eta_r) {
        if (!(*options.override_eta_r >= 0.0))
            throw DomainError("resolve_target_eta_r: override must be >= 0");
        return *options.override_eta_r;
    }
    if (!(inner.weight_decay > 0.0))
        throw DomainError("resolve_target_eta_r: weight decay is zero; set optimizer.weight_decay to define the "
                          "rotation rate or supply an explicit eta_r override");
    OptimizerConfig cfg = inner;
    if (cfg.kind == OptimizerKind::AdamL2 && options.adamw_rate_for_adam_l2)
        cfg.kind = OptimizerKind::AdamW;
    // SGDM's rotation rate does not depend on gradient statistics.
    const auto prediction =
        predict(cfg, dim, options.stats, PredictOptions{.exact = false, .allow_partial = cfg.kind == OptimizerKind::SGDM});
    if (!prediction.eta_r_hat)
        throw DomainError("resolve_target_eta_r: prediction has no eta_r");
    return *prediction.eta_r_hat;
}

} // namespace rotlab
