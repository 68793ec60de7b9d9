#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rotlab/batch_norm.hpp"
#include "rotlab/core_math.hpp"

namespace rotlab {

/// Dense row-major matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vector data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    MutSpan row(std::size_t r) { return MutSpan(data).subspan(r * cols, cols); }
    ConstSpan row(std::size_t r) const { return ConstSpan(data).subspan(r * cols, cols); }

    bool operator==(const Matrix&) const = default;
};

struct SystemShape {
    std::size_t batch = 32;     // B
    std::size_t inputs = 128;   // C
    std::size_t neurons = 128;  // K
};

/// One batch-normalized linear layer f(X) = gamma_out * N(W (gamma_in * X)),
/// with only W trainable. Rows of W are neurons.
struct SimpleSystem {
    SystemShape shape;
    Matrix weights;        // K x C
    Vector gamma_in;       // C
    Vector gamma_out;      // K
    double eps_bn = 1e-5;
    double loss_scale = 1.0;
    RngStream rng;
    std::optional<Matrix> targets;  // K x B, synthetic mode only
};

/// W ~ U[-1/sqrt(C), 1/sqrt(C)], gamma_in, gamma_out ~ N(0, 1), drawn in
/// that order from the seeded stream.
inline SimpleSystem init_system(SystemShape shape, double loss_scale, std::uint64_t seed, double eps_bn = 1e-5)
{
    if (shape.batch < 1 || shape.inputs < 1 || shape.neurons < 1)
        throw DomainError("init_system: B, C and K must be >= 1");
    if (!(loss_scale > 0.0))
        throw DomainError("init_system: loss_scale must be > 0");
    if (!(eps_bn >= 0.0))
        throw DomainError("init_system: eps_bn must be >= 0");
    SimpleSystem sys{shape, Matrix(shape.neurons, shape.inputs), Vector(shape.inputs), Vector(shape.neurons),
                     eps_bn, loss_scale, RngStream(seed), std::nullopt};
    const double bound = 1.0 / std::sqrt(static_cast<double>(shape.inputs));
    for (double& w : sys.weights.data)
        w = sys.rng.uniform(-bound, bound);
    sys.rng.fill_normal(sys.gamma_in, 1.0);
    sys.rng.fill_normal(sys.gamma_out, 1.0);
    return sys;
}

/// Draws fixed N(0, 1) regression targets for the synthetic-loss mode.
inline void init_synthetic_targets(SimpleSystem& sys)
{
    Matrix targets(sys.shape.neurons, sys.shape.batch);
    sys.rng.fill_normal(targets.data, 1.0);
    sys.targets = std::move(targets);
}

/// Everything the backward pass needs from one forward evaluation.
struct ForwardPass {
    Matrix scaled_inputs;                  // C x B, gamma_in * X
    Matrix pre_norm;                       // K x B, W (gamma_in * X)
    std::vector<BatchNormCache> norm;      // per neuron
    Matrix outputs;                        // K x B
};

inline ForwardPass forward(const Matrix& weights, ConstSpan gamma_in, ConstSpan gamma_out, const Matrix& inputs,
                           double eps_bn)
{
    const std::size_t k_count = weights.rows;
    const std::size_t c_count = weights.cols;
    const std::size_t b_count = inputs.cols;
    if (inputs.rows != c_count || gamma_in.size() != c_count || gamma_out.size() != k_count)
        throw DomainError("forward: shape mismatch");

    ForwardPass fp{Matrix(c_count, b_count), Matrix(k_count, b_count), {}, Matrix(k_count, b_count)};
    for (std::size_t c = 0; c < c_count; ++c) {
        const double gi = gamma_in[c];
        for (std::size_t b = 0; b < b_count; ++b)
            fp.scaled_inputs(c, b) = gi * inputs(c, b);
    }
    for (std::size_t k = 0; k < k_count; ++k) {
        double* __restrict x = fp.pre_norm.data.data() + k * b_count;
        for (std::size_t c = 0; c < c_count; ++c) {
            const double w = weights(k, c);
            const double* __restrict z = fp.scaled_inputs.data.data() + c * b_count;
            for (std::size_t b = 0; b < b_count; ++b)
                x[b] += w * z[b];
        }
    }
    fp.norm.reserve(k_count);
    for (std::size_t k = 0; k < k_count; ++k) {
        auto [normalized, cache] = bn_forward(fp.pre_norm.row(k), eps_bn);
        for (std::size_t b = 0; b < b_count; ++b)
            fp.outputs(k, b) = gamma_out[k] * normalized[b];
        fp.norm.push_back(std::move(cache));
    }
    return fp;
}

/// dL/dW given dL/df for a completed forward pass.
inline Matrix backward(const ForwardPass& fp, ConstSpan gamma_out, const Matrix& output_grad)
{
    const std::size_t k_count = fp.pre_norm.rows;
    const std::size_t b_count = fp.pre_norm.cols;
    const std::size_t c_count = fp.scaled_inputs.rows;
    if (output_grad.rows != k_count || output_grad.cols != b_count)
        throw DomainError("backward: output gradient shape mismatch");
    Matrix inputs_t(b_count, c_count);
    for (std::size_t c = 0; c < c_count; ++c)
        for (std::size_t b = 0; b < b_count; ++b)
            inputs_t(b, c) = fp.scaled_inputs(c, b);
    Matrix grad(k_count, c_count);
    Vector upstream(b_count);
    for (std::size_t k = 0; k < k_count; ++k) {
        for (std::size_t b = 0; b < b_count; ++b)
            upstream[b] = gamma_out[k] * output_grad(k, b);
        const Vector dx = bn_backward(fp.norm[k], upstream);
        double* __restrict g = grad.data.data() + k * c_count;
        for (std::size_t b = 0; b < b_count; ++b) {
            const double d = dx[b];
            const double* __restrict z = inputs_t.data.data() + b * c_count;
            for (std::size_t c = 0; c < c_count; ++c)
                g[c] += d * z[c];
        }
    }
    return grad;
}

/// Inputs and output gradients for one random-walk step.
struct Batch {
    Matrix inputs;        // C x B
    Matrix output_grad;   // K x B
};

/// X ~ N(0, 1); dL/df ~ N(0, (loss_scale / (K B))^2).
inline Batch sample_batch(SimpleSystem& sys)
{
    Batch batch{Matrix(sys.shape.inputs, sys.shape.batch), Matrix(sys.shape.neurons, sys.shape.batch)};
    sys.rng.fill_normal(batch.inputs.data, 1.0);
    const double std_dev =
        sys.loss_scale / static_cast<double>(sys.shape.neurons * sys.shape.batch);
    sys.rng.fill_normal(batch.output_grad.data, std_dev);
    return batch;
}

struct GradientSample {
    Matrix grad;          // dL/dW, K x C
    double loss = 0.0;    // synthetic mode only
};

/// Random-walk gradient: fresh inputs and output gradients pushed back
/// through the network.
inline GradientSample forward_backward(SimpleSystem& sys)
{
    const Batch batch = sample_batch(sys);
    const ForwardPass fp = forward(sys.weights, sys.gamma_in, sys.gamma_out, batch.inputs, sys.eps_bn);
    return {backward(fp, sys.gamma_out, batch.output_grad), 0.0};
}

/// L = loss_scale / (2 K B) * sum (f(X) - T)^2 for given inputs.
inline GradientSample synthetic_gradient(const SimpleSystem& sys, const Matrix& inputs, const Matrix& targets)
{
    const ForwardPass fp = forward(sys.weights, sys.gamma_in, sys.gamma_out, inputs, sys.eps_bn);
    if (targets.rows != fp.outputs.rows || targets.cols != fp.outputs.cols)
        throw DomainError("synthetic_gradient: target shape mismatch");
    const double scale = sys.loss_scale / static_cast<double>(sys.shape.neurons * sys.shape.batch);
    Matrix output_grad(targets.rows, targets.cols);
    double loss = 0.0;
    for (std::size_t i = 0; i < targets.data.size(); ++i) {
        const double r = fp.outputs.data[i] - targets.data[i];
        output_grad.data[i] = scale * r;
        loss += 0.5 * scale * r * r;
    }
    return {backward(fp, sys.gamma_out, output_grad), loss};
}

/// Synthetic-loss gradient with fresh inputs and the system's fixed targets.
inline GradientSample forward_backward_synthetic(SimpleSystem& sys)
{
    if (!sys.targets)
        throw DomainError("forward_backward_synthetic: targets were not initialized");
    Matrix inputs(sys.shape.inputs, sys.shape.batch);
    sys.rng.fill_normal(inputs.data, 1.0);
    return synthetic_gradient(sys, inputs, *sys.targets);
}

} // namespace rotlab
