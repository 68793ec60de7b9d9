#pragma once

#include <cctype>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "rotlab/core_math.hpp"

namespace rotlab {

enum class OptimizerKind { SGDM, AdamW, AdamL2, Lion };

inline std::string_view to_string(OptimizerKind kind)
{
    switch (kind) {
    case OptimizerKind::SGDM: return "SGDM";
    case OptimizerKind::AdamW: return "AdamW";
    case OptimizerKind::AdamL2: return "AdamL2";
    case OptimizerKind::Lion: return "Lion";
    }
    return "?";
}

/// Case-insensitive; "adam_l2" is accepted for AdamL2.
inline std::optional<OptimizerKind> parse_optimizer_kind(std::string_view name)
{
    std::string lower(name);
    for (char& ch : lower)
        ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (lower == "sgdm") return OptimizerKind::SGDM;
    if (lower == "adamw") return OptimizerKind::AdamW;
    if (lower == "adaml2" || lower == "adam_l2") return OptimizerKind::AdamL2;
    if (lower == "lion") return OptimizerKind::Lion;
    return std::nullopt;
}

/// Hyperparameters for one optimizer. Fields a kind does not use are ignored.
struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::AdamW;
    double lr = 1e-3;           // eta
    double weight_decay = 0.0;  // lambda
    double momentum = 0.9;      // alpha, SGDM only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;          // AdamW / AdamL2 only

    bool operator==(const OptimizerConfig&) const = default;

    void validate() const
    {
        if (!(lr >= 0.0) || !std::isfinite(lr))
            throw DomainError("optimizer.lr must be finite and >= 0");
        if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay))
            throw DomainError("optimizer.weight_decay must be finite and >= 0");
        auto unit_interval = [](double x, const char* name) {
            if (!(x >= 0.0 && x < 1.0))
                throw DomainError(std::string("optimizer.") + name + " must lie in [0, 1)");
        };
        switch (kind) {
        case OptimizerKind::SGDM:
            unit_interval(momentum, "momentum");
            break;
        case OptimizerKind::AdamW:
        case OptimizerKind::AdamL2:
            unit_interval(beta1, "beta1");
            unit_interval(beta2, "beta2");
            if (!(eps >= 0.0))
                throw DomainError("optimizer.eps must be >= 0");
            break;
        case OptimizerKind::Lion:
            unit_interval(beta1, "beta1");
            unit_interval(beta2, "beta2");
            break;
        }
    }
};

/// Per-parameter optimizer state.
///
/// For SGDM `m` holds the gradient momentum and `m_decay` the momentum of the
/// weight-decay term; their sum is the usual coupled momentum buffer.
struct OptState {
    std::size_t t = 0;
    Vector m;
    Vector v;
    Vector m_decay;

    OptState() = default;
    explicit OptState(std::size_t dim) : m(dim, 0.0), v(dim, 0.0), m_decay(dim, 0.0) {}

    std::size_t dim() const noexcept { return m.size(); }
};

/// Parameter change split into its gradient-driven and decay-driven parts.
struct UpdateDecomposition {
    Vector delta_g;
    Vector delta_lambda;

    Vector total() const { return added(delta_g, delta_lambda); }
};

namespace detail {

inline void check_step_inputs(const OptState& state, ConstSpan p, ConstSpan g, const OptimizerConfig& cfg,
                              OptimizerKind expected, const char* what)
{
    if (cfg.kind != expected)
        throw DomainError(std::string(what) + ": config kind is " + std::string(to_string(cfg.kind)));
    require_same_dim(p, g, what);
    if (state.dim() != p.size())
        throw DomainError(std::string(what) + ": state dimension " + std::to_string(state.dim()) +
                          " does not match parameter dimension " + std::to_string(p.size()));
}

/// Shared Adam moment update and bias-corrected preconditioned step.
/// A coordinate whose numerator and denominator are both zero does not move.
inline Vector adam_step(OptState& state, ConstSpan effective_grad, const OptimizerConfig& cfg)
{
    state.t += 1;
    const double t = static_cast<double>(state.t);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    Vector delta(effective_grad.size());
    for (std::size_t i = 0; i < effective_grad.size(); ++i) {
        const double gi = effective_grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * gi;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * gi * gi;
        const double m_hat = state.m[i] / bc1;
        const double denom = std::sqrt(state.v[i] / bc2) + cfg.eps;
        delta[i] = (m_hat == 0.0 && denom == 0.0) ? 0.0 : -cfg.lr * m_hat / denom;
    }
    return delta;
}

inline double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

} // namespace detail

/// SGD with momentum; weight decay enters the momentum through a separate
/// accumulator so the two parts can be reported apart.
inline UpdateDecomposition step_sgdm(OptState& state, ConstSpan p, ConstSpan g, const OptimizerConfig& cfg)
{
    detail::check_step_inputs(state, p, g, cfg, OptimizerKind::SGDM, "step_sgdm");
    state.t += 1;
    UpdateDecomposition out{Vector(p.size()), Vector(p.size())};
    for (std::size_t i = 0; i < p.size(); ++i) {
        state.m[i] = cfg.momentum * state.m[i] + g[i];
        state.m_decay[i] = cfg.momentum * state.m_decay[i] + cfg.weight_decay * p[i];
        out.delta_g[i] = -cfg.lr * state.m[i];
        out.delta_lambda[i] = -cfg.lr * state.m_decay[i];
    }
    return out;
}

inline UpdateDecomposition step_adamw(OptState& state, ConstSpan p, ConstSpan g, const OptimizerConfig& cfg)
{
    detail::check_step_inputs(state, p, g, cfg, OptimizerKind::AdamW, "step_adamw");
    UpdateDecomposition out{detail::adam_step(state, g, cfg), Vector(p.size())};
    for (std::size_t i = 0; i < p.size(); ++i)
        out.delta_lambda[i] = -cfg.lr * cfg.weight_decay * p[i];
    return out;
}

/// Adam with l2 regularization. The decay term passes through the
/// preconditioner, so the whole step is reported in delta_g and
/// delta_lambda is zero.
inline UpdateDecomposition step_adam_l2(OptState& state, ConstSpan p, ConstSpan g, const OptimizerConfig& cfg)
{
    detail::check_step_inputs(state, p, g, cfg, OptimizerKind::AdamL2, "step_adam_l2");
    Vector effective(p.size());
    for (std::size_t i = 0; i < p.size(); ++i)
        effective[i] = g[i] + cfg.weight_decay * p[i];
    return {detail::adam_step(state, effective, cfg), Vector(p.size(), 0.0)};
}

/// Lion. The update direction uses the momentum from before this step's
/// moment update; sign(0) = 0.
inline UpdateDecomposition step_lion(OptState& state, ConstSpan p, ConstSpan g, const OptimizerConfig& cfg)
{
    detail::check_step_inputs(state, p, g, cfg, OptimizerKind::Lion, "step_lion");
    state.t += 1;
    UpdateDecomposition out{Vector(p.size()), Vector(p.size())};
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double direction = detail::sign_of(cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g[i]);
        state.m[i] = cfg.beta2 * state.m[i] + (1.0 - cfg.beta2) * g[i];
        out.delta_g[i] = -cfg.lr * direction;
        out.delta_lambda[i] = -cfg.lr * cfg.weight_decay * p[i];
    }
    return out;
}

inline UpdateDecomposition step(OptState& state, ConstSpan p, ConstSpan g, const OptimizerConfig& cfg)
{
    switch (cfg.kind) {
    case OptimizerKind::SGDM: return step_sgdm(state, p, g, cfg);
    case OptimizerKind::AdamW: return step_adamw(state, p, g, cfg);
    case OptimizerKind::AdamL2: return step_adam_l2(state, p, g, cfg);
    case OptimizerKind::Lion: return step_lion(state, p, g, cfg);
    }
    throw DomainError("step: unknown optimizer kind");
}

/// p += delta_g + delta_lambda
inline void apply_update(MutSpan p, const UpdateDecomposition& update)
{
    require_same_dim(p, update.delta_g, "apply_update");
    require_same_dim(p, update.delta_lambda, "apply_update");
    for (std::size_t i = 0; i < p.size(); ++i)
        p[i] += update.delta_g[i] + update.delta_lambda[i];
}

// ---------------------------------------------------------------------------
// Total update contributions

/// Total contribution of one gradient to all later SGDM updates:
/// -eta * sum_{k<horizon} alpha^k * g, or the closed form -eta/(1-alpha) * g
/// when no horizon is given.
inline Vector sgdm_gradient_tuc(const OptimizerConfig& cfg, ConstSpan g, std::optional<std::size_t> horizon = {})
{
    if (horizon && *horizon < 1)
        throw DomainError("sgdm_gradient_tuc: horizon must be >= 1");
    const double a = cfg.momentum;
    const double factor = horizon ? (1.0 - std::pow(a, static_cast<double>(*horizon))) / (1.0 - a) : 1.0 / (1.0 - a);
    return scaled(g, -cfg.lr * factor);
}

/// Total contribution of one step's weight decay term lambda * omega.
inline Vector sgdm_decay_tuc(const OptimizerConfig& cfg, ConstSpan omega, std::optional<std::size_t> horizon = {})
{
    return scaled(sgdm_gradient_tuc(cfg, omega, horizon), cfg.weight_decay);
}

/// AdamW gradient contribution summed against recorded second moments:
/// -eta * sum_k beta1^k (1 - beta1) g / (sqrt(v_k) + eps) for k < recorded_v.size().
inline Vector adamw_gradient_tuc(const OptimizerConfig& cfg, ConstSpan g, std::span<const Vector> recorded_v)
{
    if (recorded_v.empty())
        throw DomainError("adamw_gradient_tuc: horizon must be >= 1");
    Vector u(g.size(), 0.0);
    double weight = 1.0 - cfg.beta1;
    for (const Vector& v : recorded_v) {
        require_same_dim(g, v, "adamw_gradient_tuc");
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double denom = std::sqrt(v[i]) + cfg.eps;
            if (denom > 0.0)
                u[i] -= cfg.lr * weight * g[i] / denom;
        }
        weight *= cfg.beta1;
    }
    return u;
}

} // namespace rotlab
