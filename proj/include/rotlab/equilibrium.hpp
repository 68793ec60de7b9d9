#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "rotlab/core_math.hpp"
#include "rotlab/optimizers.hpp"

namespace rotlab {

/// Gradient statistics some predictions need. g_unit denotes the gradient
/// rescaled to a unit-norm weight, ||omega|| * g.
struct GradientStats {
    std::optional<double> expected_sq_norm;        // E[||g||^2]
    std::optional<double> unit_expected_sq_norm;   // E[||g_unit||^2]
    std::optional<Vector> per_coord_sqrt_second_moment; // sqrt(E[g_unit_k^2]) per coordinate
};

enum class EquilibriumStatus { Defined, NoEquilibrium };

/// Steady-state predictions for one optimizer. Equilibrium fields are empty
/// when there is no equilibrium (lambda <= 0) or when a required statistic
/// was not supplied (see `missing`).
struct EquilibriumPrediction {
    OptimizerKind kind = OptimizerKind::AdamW;
    EquilibriumStatus status = EquilibriumStatus::Defined;
    std::optional<double> eta_g_hat;
    std::optional<double> eta_r_hat;
    std::optional<double> omega_norm_hat;
    std::optional<double> tau_g_hat;
    std::optional<double> tau_r_hat;
    /// Lion's sign model assumes i.i.d. Gaussian pre-sign coordinates.
    bool loosest_approximation = false;
    /// Human-readable "requires ..." notes for fields left empty.
    std::vector<std::string> missing;

    bool has_equilibrium() const noexcept { return status == EquilibriumStatus::Defined; }
};

struct PredictOptions {
    /// Use the unsimplified denominators instead of the lambda*eta << 2 forms.
    bool exact = false;
    /// Leave fields empty (with a note) instead of throwing on missing stats.
    bool allow_partial = false;
};

/// ((1 - beta1)^2 + beta1^2 (1 - beta2)/(1 + beta2)), the second-moment
/// factor of Lion's pre-sign argument.
inline double lion_interpolation_factor(double beta1, double beta2)
{
    return (1.0 - beta1) * (1.0 - beta1) + beta1 * beta1 * (1.0 - beta2) / (1.0 + beta2);
}

/// <1, sqrt(E[g_unit^2])>, falling back to sqrt(C) * sqrt(E[||g_unit||^2])
/// for homogeneous coordinates.
inline std::optional<double> adam_l2_gradient_sum(std::size_t dim, const GradientStats& stats)
{
    if (stats.per_coord_sqrt_second_moment) {
        const Vector& s = *stats.per_coord_sqrt_second_moment;
        if (s.size() != dim)
            throw DomainError("per_coord_sqrt_second_moment has length " + std::to_string(s.size()) +
                              ", expected " + std::to_string(dim));
        for (double x : s)
            if (!(x >= 0.0))
                throw DomainError("per_coord_sqrt_second_moment entries must be >= 0");
        return sum(s);
    }
    if (stats.unit_expected_sq_norm)
        return std::sqrt(static_cast<double>(dim)) * std::sqrt(*stats.unit_expected_sq_norm);
    return std::nullopt;
}

inline EquilibriumPrediction predict(const OptimizerConfig& cfg, std::size_t dim, const GradientStats& stats = {},
                                     PredictOptions options = {})
{
    if (dim < 1)
        throw DomainError("predict: dimension must be >= 1");
    if (!(cfg.lr >= 0.0))
        throw DomainError("predict: lr must be >= 0");
    if (stats.expected_sq_norm && !(*stats.expected_sq_norm >= 0.0))
        throw DomainError("predict: expected_sq_norm must be >= 0");
    if (stats.unit_expected_sq_norm && !(*stats.unit_expected_sq_norm >= 0.0))
        throw DomainError("predict: unit_expected_sq_norm must be >= 0");

    EquilibriumPrediction out;
    out.kind = cfg.kind;
    const double eta = cfg.lr;
    const double lambda = cfg.weight_decay;
    const double c = static_cast<double>(dim);
    const bool decays = lambda > 0.0;
    if (!decays) {
        out.status = EquilibriumStatus::NoEquilibrium;
        out.missing.emplace_back("no equilibrium: lambda is zero");
    }

    auto need = [&](const char* field) {
        if (!options.allow_partial)
            throw DomainError(std::string("predict: ") + std::string(to_string(cfg.kind)) + " requires " + field);
        out.missing.emplace_back(std::string("requires ") + field);
    };

    switch (cfg.kind) {
    case OptimizerKind::SGDM: {
        const double alpha = cfg.momentum;
        if (!stats.expected_sq_norm)
            need("E[‖g‖²]");
        if (decays && !stats.unit_expected_sq_norm)
            need("E[‖g̃‖²]");
        if (stats.expected_sq_norm) {
            out.eta_g_hat = eta * std::sqrt(*stats.expected_sq_norm / (1.0 - alpha * alpha));
            out.tau_g_hat = eta / (1.0 - alpha) * std::sqrt(*stats.expected_sq_norm);
        }
        if (decays) {
            const double denom = options.exact ? 2.0 * lambda * (1.0 - alpha) - eta * lambda * lambda
                                               : 2.0 * lambda * (1.0 - alpha);
            out.eta_r_hat = options.exact ? std::sqrt(eta * denom / (1.0 - alpha * alpha))
                                          : std::sqrt(2.0 * eta * lambda / (1.0 + alpha));
            out.tau_r_hat = std::sqrt(2.0 * eta * lambda / (1.0 - alpha));
            if (stats.unit_expected_sq_norm)
                out.omega_norm_hat = std::pow(eta * *stats.unit_expected_sq_norm / denom, 0.25);
        }
        break;
    }
    case OptimizerKind::AdamW: {
        const double q = (1.0 - cfg.beta1) / (1.0 + cfg.beta1);
        out.eta_g_hat = eta * std::sqrt(c * q);
        out.tau_g_hat = eta * std::sqrt(c);
        if (decays) {
            const double denom = options.exact ? 2.0 * lambda - eta * lambda * lambda : 2.0 * lambda;
            out.omega_norm_hat = std::sqrt(eta * c / denom);
            out.eta_r_hat = options.exact ? *out.eta_g_hat / *out.omega_norm_hat : std::sqrt(2.0 * eta * lambda * q);
            out.tau_r_hat = std::sqrt(2.0 * eta * lambda);
        }
        break;
    }
    case OptimizerKind::AdamL2: {
        const double q = (1.0 - cfg.beta1) / (1.0 + cfg.beta1);
        out.eta_g_hat = eta * std::sqrt(c * q);
        const auto grad_sum = adam_l2_gradient_sum(dim, stats);
        if (decays && !grad_sum)
            need("sqrt(E[g̃²]) per coordinate or E[‖g̃‖²]");
        if (decays && grad_sum) {
            if (!(*grad_sum > 0.0))
                throw DomainError("predict: AdamL2 gradient statistics must not all be zero");
            out.omega_norm_hat = std::cbrt(eta / (2.0 * lambda) * *grad_sum);
            out.eta_r_hat = std::cbrt(2.0 * eta * eta * lambda / *grad_sum) * std::sqrt(q * c);
        }
        break;
    }
    case OptimizerKind::Lion: {
        const double k = lion_interpolation_factor(cfg.beta1, cfg.beta2);
        out.loosest_approximation = true;
        out.eta_g_hat = eta * std::sqrt(c);
        if (decays) {
            if (options.exact) {
                out.omega_norm_hat =
                    std::sqrt(2.0 * eta * c / (std::numbers::pi * (2.0 * lambda - eta * lambda * lambda))) /
                    std::sqrt(k);
                out.eta_r_hat = *out.eta_g_hat / *out.omega_norm_hat;
            } else {
                out.omega_norm_hat = std::sqrt(eta * c / (std::numbers::pi * lambda)) / std::sqrt(k);
                out.eta_r_hat = std::sqrt(std::numbers::pi * eta * lambda) * std::sqrt(k);
            }
        }
        break;
    }
    }
    return out;
}

/// Squared fixed point of the AdamW norm recurrence, eta^2 C / (2 eta lambda - eta^2 lambda^2).
inline double adamw_norm_fixed_point_sq(double lr, double weight_decay, std::size_t dim)
{
    const double el = lr * weight_decay;
    return lr * lr * static_cast<double>(dim) / (2.0 * el - el * el);
}

/// Expected squared weight norm E[omega_i^2] for i = 0..steps under the
/// AdamW total-update-contribution recurrence.
inline Vector norm_convergence_curve(double omega0_sq, const OptimizerConfig& cfg, std::size_t dim, std::size_t steps)
{
    if (cfg.kind != OptimizerKind::AdamW)
        throw DomainError("norm_convergence_curve: only defined for AdamW");
    const double el = cfg.lr * cfg.weight_decay;
    if (!(el > 0.0) || !(el < 1.0))
        throw DomainError("norm_convergence_curve: requires 0 < lr * weight_decay < 1");
    if (!(omega0_sq >= 0.0))
        throw DomainError("norm_convergence_curve: omega0_sq must be >= 0");
    const double a = 1.0 - 2.0 * el + el * el;
    const double fixed = adamw_norm_fixed_point_sq(cfg.lr, cfg.weight_decay, dim);
    Vector curve(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i) {
        const double ai = std::pow(a, static_cast<double>(i));
        curve[i] = omega0_sq * ai + fixed * (1.0 - ai);
    }
    return curve;
}

/// Radial gradient coefficient and the resulting effective weight decay.
struct RadialStats {
    double lambda_u = 0.0;
    double lambda_e = 0.0;
};

inline RadialStats effective_decay(double weight_decay, double lambda_u)
{
    if (!(weight_decay >= 0.0))
        throw DomainError("effective_decay: weight decay must be >= 0");
    return {lambda_u, weight_decay + lambda_u};
}

/// Sample mean of <omega, g> / ||omega||^2 over gradient samples taken at omega.
inline double estimate_lambda_u(ConstSpan omega, const std::vector<Vector>& gradients)
{
    const double w2 = squared_norm(omega);
    if (!(w2 > 0.0))
        throw DomainError("estimate_lambda_u: omega has zero norm");
    if (gradients.empty())
        throw DomainError("estimate_lambda_u: at least one gradient sample is required");
    double total = 0.0;
    for (const Vector& g : gradients)
        total += dot(omega, g) / w2;
    return total / static_cast<double>(gradients.size());
}

} // namespace rotlab
