#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>

#include "rotlab/batch_norm.hpp"
#include "rotlab/optimizers.hpp"
#include "rotlab/simple_system.hpp"

using namespace rotlab;

namespace {

double probe(const Vector& x, const Vector& up, double eps)
{
    return dot(up, bn_forward(x, eps).first);
}

double max_rel(const Vector& a, const Vector& b)
{
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(std::abs(a[i]), std::abs(b[i])));
    return worst;
}

// Probe loss <U, f(X)> of the whole system for a fixed batch.
double system_probe(const SimpleSystem& sys, const Matrix& w, const Matrix& x, const Matrix& u)
{
    const ForwardPass fp = forward(w, sys.gamma_in, sys.gamma_out, x, sys.eps_bn);
    return dot(u.data, fp.outputs.data);
}

Matrix system_grad(const SimpleSystem& sys, const Matrix& w, const Matrix& x, const Matrix& u)
{
    const ForwardPass fp = forward(w, sys.gamma_in, sys.gamma_out, x, sys.eps_bn);
    return backward(fp, sys.gamma_out, u);
}

template <typename F>
Vector central_difference(Vector w, F f, double h)
{
    Vector g(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double keep = w[i];
        const double step = h * std::max(1.0, std::abs(keep));
        w[i] = keep + step;
        const double up = f(w);
        w[i] = keep - step;
        const double down = f(w);
        w[i] = keep;
        g[i] = (up - down) / (2 * step);
    }
    return g;
}

} // namespace

TEST(BatchNorm, ForwardExamples)
{
    const auto [y, cache] = bn_forward(Vector{1, 2, 3}, 0.0);
    EXPECT_NEAR(y[0], -1.2247449, 1e-7);
    EXPECT_NEAR(y[1], 0.0, 1e-15);
    EXPECT_NEAR(y[2], 1.2247449, 1e-7);
    EXPECT_NEAR(cache.mean, 2.0, 1e-15);
    EXPECT_NEAR(cache.variance, 2.0 / 3.0, 1e-15);

    EXPECT_EQ(bn_forward(Vector{4, 4, 4}, 1e-5).first, (Vector{0, 0, 0}));
    EXPECT_THROW(bn_forward(Vector{4, 4, 4}, 0.0), DomainError);
    EXPECT_EQ(bn_forward(Vector{7}, 1e-5).first, (Vector{0}));

    const Vector a = bn_forward(Vector{0.3, -1, 2.5, 4}, 0.0).first;
    const Vector b = bn_forward(Vector{0.6, -2, 5.0, 8}, 0.0).first;
    for (std::size_t i = 0; i < a.size(); ++i)
        EXPECT_NEAR(a[i], b[i], 1e-15);
}

TEST(BatchNorm, CacheStatistics)
{
    RngStream rng(1);
    const Vector x = sample_normal(rng, 64, 3.0);
    const auto [y, cache] = bn_forward(x, 0.0);
    EXPECT_NEAR(sum(y) / 64.0, 0.0, 1e-10);
    EXPECT_NEAR(squared_norm(y) / 64.0, 1.0, 1e-10);
    EXPECT_GE(cache.variance, 0.0);
}

TEST(BatchNorm, BackwardCancellations)
{
    const auto [y, cache] = bn_forward(Vector{0.5, -1.0, 2.0, 3.5, 0.0}, 0.0);
    for (double v : bn_backward(cache, cache.normalized))
        EXPECT_NEAR(v, 0.0, 1e-15);
    for (double v : bn_backward(cache, Vector(5, 2.5)))
        EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(BatchNorm, BackwardIdentities)
{
    RngStream rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const Vector x = sample_normal(rng, 2 + trial % 30, 2.0);
        const Vector up = sample_normal(rng, x.size(), 1.0);
        const auto [y, cache] = bn_forward(x, 0.0);
        const Vector dx = bn_backward(cache, up);
        const double scale = norm(dx) * std::sqrt(static_cast<double>(x.size()));
        EXPECT_LE(std::abs(sum(dx)), 1e-10 * std::max(1.0, scale));
        EXPECT_LE(std::abs(dot(dx, y)), 1e-10 * std::max(1.0, scale));
    }
}

TEST(BatchNorm, BackwardMatchesFiniteDifferences)
{
    RngStream rng(3);
    const Vector x = sample_normal(rng, 8, 1.5);
    const Vector up = sample_normal(rng, 8, 1.0);
    const auto [y, cache] = bn_forward(x, 1e-5);
    const Vector analytic = bn_backward(cache, up);
    const Vector numeric = central_difference(x, [&](const Vector& v) { return probe(v, up, 1e-5); }, 1e-5);
    EXPECT_LE(max_rel(analytic, numeric), 1e-6);
}

TEST(BatchNorm, StaleCacheRejected)
{
    BatchNormCache empty;
    EXPECT_THROW(bn_backward(empty, Vector{1, 2}), std::logic_error);
    const auto [y, cache] = bn_forward(Vector{1, 2, 3}, 0.0);
    EXPECT_THROW(bn_backward(cache, Vector{1, 2}), std::logic_error);
}

TEST(SimpleSystem, InitBoundsAndDeterminism)
{
    const auto a = init_system({4, 4, 6}, 1.0, 9);
    for (double w : a.weights.data) {
        EXPECT_GE(w, -0.5);
        EXPECT_LE(w, 0.5);
    }
    const auto b = init_system({4, 4, 6}, 1.0, 9);
    EXPECT_EQ(a.weights, b.weights);
    EXPECT_EQ(a.gamma_in, b.gamma_in);
    EXPECT_EQ(a.gamma_out, b.gamma_out);
    EXPECT_NE(init_system({4, 4, 6}, 1.0, 10).weights, a.weights);
    EXPECT_THROW(init_system({0, 4, 6}, 1.0, 1), DomainError);
}

TEST(SimpleSystem, DefaultSizeWeightMean)
{
    const auto sys = init_system({32, 128, 128}, 1.0, 1);
    EXPECT_NEAR(sum(sys.weights.data) / sys.weights.data.size(), 0.0, 0.002);
}

TEST(SimpleSystem, GradientDeterministic)
{
    auto a = init_system({8, 6, 5}, 1.0, 4);
    auto b = init_system({8, 6, 5}, 1.0, 4);
    EXPECT_EQ(forward_backward(a).grad, forward_backward(b).grad);
    EXPECT_EQ(forward_backward(a).grad, forward_backward(b).grad);
}

TEST(SimpleSystem, FullGradientMatchesFiniteDifferences)
{
    auto sys = init_system({8, 6, 5}, 1.0, 5);
    const Batch batch = sample_batch(sys);
    Matrix u(5, 8);
    sys.rng.fill_normal(u.data, 1.0);
    const Matrix analytic = system_grad(sys, sys.weights, batch.inputs, u);
    const Vector numeric = central_difference(
        sys.weights.data,
        [&](const Vector& w) {
            Matrix m = sys.weights;
            m.data = w;
            return system_probe(sys, m, batch.inputs, u);
        },
        1e-5);
    EXPECT_LE(max_rel(analytic.data, numeric), 1e-6);
}

TEST(SimpleSystem, SyntheticGradientMatchesFiniteDifferences)
{
    auto sys = init_system({8, 6, 5}, 2.0, 6);
    init_synthetic_targets(sys);
    Matrix x(6, 8);
    sys.rng.fill_normal(x.data, 1.0);
    const Matrix analytic = synthetic_gradient(sys, x, *sys.targets).grad;
    const Vector numeric = central_difference(
        sys.weights.data,
        [&](const Vector& w) {
            SimpleSystem copy = sys;
            copy.weights.data = w;
            return synthetic_gradient(copy, x, *sys.targets).loss;
        },
        1e-5);
    EXPECT_LE(max_rel(analytic.data, numeric), 1e-6);
}

TEST(SimpleSystem, SyntheticZeroAtTargets)
{
    auto sys = init_system({8, 6, 5}, 1.0, 7);
    Matrix x(6, 8);
    sys.rng.fill_normal(x.data, 1.0);
    const Matrix targets = forward(sys.weights, sys.gamma_in, sys.gamma_out, x, sys.eps_bn).outputs;
    const auto gs = synthetic_gradient(sys, x, targets);
    EXPECT_EQ(gs.loss, 0.0);
    for (double g : gs.grad.data)
        EXPECT_EQ(g, 0.0);
}

TEST(SimpleSystem, RowScalingLeavesOutputsUnchanged)
{
    auto sys = init_system({16, 12, 6}, 1.0, 8, 1e-12);
    const Batch batch = sample_batch(sys);
    const Matrix base = forward(sys.weights, sys.gamma_in, sys.gamma_out, batch.inputs, 1e-12).outputs;
    for (double r : {0.5, 2.0, 10.0}) {
        Matrix w = sys.weights;
        for (double& v : w.row(2))
            v *= r;
        const Matrix out = forward(w, sys.gamma_in, sys.gamma_out, batch.inputs, 1e-12).outputs;
        for (std::size_t i = 0; i < out.data.size(); ++i)
            EXPECT_NEAR(out.data[i], base.data[i], 1e-10);
    }
}

// With eps > 0 a scaled row sees eps / r^2 in place of eps.
TEST(SimpleSystem, RowScalingWithPositiveEpsMatchesClosedForm)
{
    const double eps = 1e-5;
    auto sys = init_system({16, 12, 6}, 1.0, 8, eps);
    const Batch batch = sample_batch(sys);
    const auto fp = forward(sys.weights, sys.gamma_in, sys.gamma_out, batch.inputs, eps);
    const double var = fp.norm[2].variance;
    for (double r : {0.5, 2.0, 10.0}) {
        Matrix w = sys.weights;
        for (double& v : w.row(2))
            v *= r;
        const Matrix out = forward(w, sys.gamma_in, sys.gamma_out, batch.inputs, eps).outputs;
        const double ratio = std::sqrt((var + eps) / (var + eps / (r * r)));
        for (std::size_t k = 0; k < 6; ++k)
            for (std::size_t b = 0; b < 16; ++b) {
                const double expect = k == 2 ? fp.outputs(k, b) * ratio : fp.outputs(k, b);
                EXPECT_NEAR(out(k, b), expect, 1e-13 * std::max(1.0, std::abs(expect)));
            }
        // Relative deviation stays below 1e-6 once var >= 5 eps |1 - 1/r^2| / 1e-6.
        const double big_var = 5.0 * eps * std::abs(1.0 - 1.0 / (r * r)) / 1e-6;
        EXPECT_LE(std::abs(std::sqrt((big_var + eps) / (big_var + eps / (r * r))) - 1.0), 1e-6);
    }
}

TEST(SimpleSystem, GradientOrthogonalToRowsEveryStep)
{
    auto sys = init_system({32, 64, 16}, 1.0, 9, 0.0);
    OptimizerConfig opt;
    opt.kind = OptimizerKind::AdamW;
    opt.lr = 1e-2;
    opt.weight_decay = 0.1;
    OptState st(sys.weights.data.size());
    double worst = 0.0;
    for (int s = 0; s < 200; ++s) {
        const Matrix g = forward_backward(sys).grad;
        for (std::size_t k = 0; k < 16; ++k)
            worst = std::max(worst, std::abs(cosine(g.row(k), sys.weights.row(k))));
        apply_update(sys.weights.data, step(st, sys.weights.data, g.data, opt));
    }
    EXPECT_LE(worst, 1e-10);
}

TEST(SimpleSystem, InverseProportionality)
{
    auto sys = init_system({16, 12, 6}, 1.0, 10, 1e-12);
    const Batch batch = sample_batch(sys);
    const Matrix base = system_grad(sys, sys.weights, batch.inputs, batch.output_grad);
    for (double r : {0.5, 2.0, 10.0}) {
        Matrix w = sys.weights;
        for (double& v : w.data)
            v *= r;
        const Matrix scaled_grad = system_grad(sys, w, batch.inputs, batch.output_grad);
        for (std::size_t k = 0; k < 6; ++k)
            EXPECT_NEAR(norm(scaled_grad.row(k)) * r / norm(base.row(k)), 1.0, 1e-8);
    }
}

TEST(SimpleSystem, SuccessiveGradientsUncorrelated)
{
    auto sys = init_system({32, 32, 8}, 1.0, 11);
    StreamingMoments cos_moments;
    Matrix prev = forward_backward(sys).grad;
    for (int i = 0; i < 10000; ++i) {
        Matrix next = forward_backward(sys).grad;
        cos_moments.add(cosine(prev.data, next.data));
        prev = std::move(next);
    }
    EXPECT_LE(std::abs(cos_moments.mean()), 5 * cos_moments.standard_error());
}

TEST(SimpleSystem, OutputGradientScale)
{
    auto sys = init_system({16, 8, 4}, 3.0, 12);
    StreamingMoments m;
    for (int i = 0; i < 200; ++i)
        for (double v : sample_batch(sys).output_grad.data)
            m.add(v);
    const double expected = 3.0 / (4 * 16);
    EXPECT_NEAR(std::sqrt(m.mean_of_squares()), expected, 0.03 * expected);
}

TEST(SimpleSystem, SyntheticModeHasRadialGradient)
{
    auto sys = init_system({32, 128, 128}, 1.0, 13);
    init_synthetic_targets(sys);
    std::vector<StreamingMoments> radial(128);
    for (int s = 0; s < 500; ++s) {
        const Matrix g = forward_backward_synthetic(sys).grad;
        for (std::size_t k = 0; k < 128; ++k)
            radial[k].add(dot(sys.weights.row(k), g.row(k)) / squared_norm(sys.weights.row(k)));
    }
    double best = 0.0;
    for (const auto& m : radial)
        best = std::max(best, std::abs(m.mean()) / m.standard_error());
    EXPECT_GT(best, 10.0);
}
