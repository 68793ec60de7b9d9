#include <gtest/gtest.h>

#include <cmath>

#include "rotlab/optimizers.hpp"

using namespace rotlab;

namespace {

OptimizerConfig make(OptimizerKind kind, double lr, double wd)
{
    OptimizerConfig c;
    c.kind = kind;
    c.lr = lr;
    c.weight_decay = wd;
    return c;
}

// Textbook single-buffer implementations, written independently of the
// decomposed steps.
struct RefSgdm {
    Vector buf;
    void step(Vector& p, const Vector& g, const OptimizerConfig& c)
    {
        if (buf.empty())
            buf.assign(p.size(), 0.0);
        for (std::size_t i = 0; i < p.size(); ++i) {
            buf[i] = c.momentum * buf[i] + g[i] + c.weight_decay * p[i];
            p[i] -= c.lr * buf[i];
        }
    }
};

struct RefAdam {
    Vector m, v;
    int t = 0;
    bool l2 = false;
    void step(Vector& p, const Vector& g, const OptimizerConfig& c)
    {
        if (m.empty()) {
            m.assign(p.size(), 0.0);
            v.assign(p.size(), 0.0);
        }
        ++t;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = l2 ? g[i] + c.weight_decay * p[i] : g[i];
            m[i] = c.beta1 * m[i] + (1 - c.beta1) * gi;
            v[i] = c.beta2 * v[i] + (1 - c.beta2) * gi * gi;
            const double mh = m[i] / (1 - std::pow(c.beta1, t));
            const double vh = v[i] / (1 - std::pow(c.beta2, t));
            const double upd = c.lr * mh / (std::sqrt(vh) + c.eps);
            p[i] = l2 ? p[i] - upd : p[i] - upd - c.lr * c.weight_decay * p[i];
        }
    }
};

struct RefLion {
    Vector m;
    void step(Vector& p, const Vector& g, const OptimizerConfig& c)
    {
        if (m.empty())
            m.assign(p.size(), 0.0);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double u = c.beta1 * m[i] + (1 - c.beta1) * g[i];
            const double s = u > 0 ? 1.0 : (u < 0 ? -1.0 : 0.0);
            p[i] -= c.lr * (s + c.weight_decay * p[i]);
            m[i] = c.beta2 * m[i] + (1 - c.beta2) * g[i];
        }
    }
};

template <typename Ref>
double max_trajectory_gap(OptimizerConfig cfg, Ref ref, std::uint64_t seed)
{
    RngStream rng(seed);
    Vector p = sample_normal(rng, 16, 1.0);
    Vector q = p;
    OptState st(p.size());
    double gap = 0.0;
    for (int s = 0; s < 1000; ++s) {
        const Vector g = sample_normal(rng, p.size(), 0.3);
        apply_update(p, step(st, p, g, cfg));
        ref.step(q, g, cfg);
        for (std::size_t i = 0; i < p.size(); ++i)
            gap = std::max(gap, std::abs(p[i] - q[i]) / std::max(1.0, std::abs(q[i])));
    }
    return gap;
}

} // namespace

TEST(Sgdm, Examples)
{
    auto c = make(OptimizerKind::SGDM, 0.1, 0.0);
    OptState st(2);
    auto d = step_sgdm(st, Vector{1, 0}, Vector{1, 0}, c);
    EXPECT_NEAR(d.delta_g[0], -0.1, 1e-15);
    EXPECT_EQ(d.delta_g[1], 0.0);
    EXPECT_EQ(d.delta_lambda, (Vector{0, 0}));
    d = step_sgdm(st, Vector{1, 0}, Vector{1, 0}, c);
    EXPECT_NEAR(d.delta_g[0], -0.19, 1e-15);

    auto c2 = make(OptimizerKind::SGDM, 0.1, 0.5);
    OptState st2(2);
    d = step_sgdm(st2, Vector{1, 0}, Vector{0, 0}, c2);
    EXPECT_NEAR(d.delta_lambda[0], -0.05, 1e-15);
    EXPECT_EQ(d.delta_lambda[1], 0.0);
}

TEST(Sgdm, SplitEqualsCoupled)
{
    auto c = make(OptimizerKind::SGDM, 0.05, 0.01);
    EXPECT_LE(max_trajectory_gap(c, RefSgdm{}, 1), 1e-13);
}

TEST(AdamW, Examples)
{
    auto c = make(OptimizerKind::AdamW, 1e-3, 0.0);
    c.eps = 0.0;
    OptState st(1);
    auto d = step_adamw(st, Vector{1}, Vector{0.5}, c);
    EXPECT_NEAR(d.delta_g[0], -1e-3, 1e-18);

    auto c2 = make(OptimizerKind::AdamW, 1e-3, 0.1);
    OptState st2(1);
    d = step_adamw(st2, Vector{2.0}, Vector{-7.0}, c2);
    EXPECT_NEAR(d.delta_lambda[0], -2e-4, 1e-18);
}

TEST(AdamW, ZeroGradientDoesNotMove)
{
    for (double eps : {1e-8, 0.0}) {
        auto c = make(OptimizerKind::AdamW, 1e-3, 0.0);
        c.eps = eps;
        OptState st(1);
        for (int i = 0; i < 5; ++i) {
            auto d = step_adamw(st, Vector{1}, Vector{0}, c);
            EXPECT_EQ(d.delta_g[0], 0.0);
            EXPECT_FALSE(std::isnan(d.delta_g[0]));
        }
    }
}

TEST(AdamW, MatchesReference)
{
    auto c = make(OptimizerKind::AdamW, 1e-2, 0.1);
    EXPECT_LE(max_trajectory_gap(c, RefAdam{}, 2), 1e-13);
}

TEST(AdamL2, Examples)
{
    auto c = make(OptimizerKind::AdamL2, 1e-3, 0.1);
    c.eps = 0.0;
    OptState st(1);
    auto d = step_adam_l2(st, Vector{1}, Vector{0}, c);
    EXPECT_NEAR(d.delta_g[0], -1e-3, 1e-18);
    EXPECT_EQ(d.delta_lambda, (Vector{0}));
}

TEST(AdamL2, MatchesReference)
{
    auto c = make(OptimizerKind::AdamL2, 1e-2, 0.1);
    RefAdam ref;
    ref.l2 = true;
    EXPECT_LE(max_trajectory_gap(c, ref, 3), 1e-13);
}

TEST(AdamL2, EqualsAdamWBitwiseWithoutDecay)
{
    auto cw = make(OptimizerKind::AdamW, 1e-3, 0.0);
    auto cl = make(OptimizerKind::AdamL2, 1e-3, 0.0);
    RngStream rng(4);
    Vector pw = sample_normal(rng, 8, 1.0);
    Vector pl = pw;
    OptState sw(8), sl(8);
    for (int s = 0; s < 1000; ++s) {
        const Vector g = sample_normal(rng, 8, 1.0);
        apply_update(pw, step(sw, pw, g, cw));
        apply_update(pl, step(sl, pl, g, cl));
    }
    EXPECT_EQ(pw, pl);
}

TEST(AdamL2, DecayCouplingChangesUpdateSize)
{
    // Single coordinate random walk at lambda = 0.1: the preconditioned decay
    // term makes the l2 variant's mean step differ from AdamW's.
    auto cw = make(OptimizerKind::AdamW, 1e-3, 0.1);
    auto cl = make(OptimizerKind::AdamL2, 1e-3, 0.1);
    RngStream rng(6);
    Vector pw{1.0}, pl{1.0};
    OptState sw(1), sl(1);
    double aw = 0, al = 0;
    for (int s = 0; s < 2000; ++s) {
        const Vector g = sample_normal(rng, 1, 1e-3);
        auto dw = step(sw, pw, g, cw);
        auto dl = step(sl, pl, g, cl);
        aw += std::abs(dw.delta_g[0]);
        al += std::abs(dl.delta_g[0]);
        apply_update(pw, dw);
        apply_update(pl, dl);
    }
    EXPECT_GT(std::abs(aw - al) / aw, 0.01);
}

TEST(Lion, Examples)
{
    auto c = make(OptimizerKind::Lion, 1e-3, 0.0);
    OptState st(4);
    auto d = step_lion(st, Vector{1, 1, 1, 1}, Vector{1, 2, 3, 4}, c);
    EXPECT_EQ(d.delta_g, (Vector{-1e-3, -1e-3, -1e-3, -1e-3}));
    EXPECT_NEAR(norm(d.delta_g), 1e-3 * 2.0, 1e-18);

    OptState zero(3);
    d = step_lion(zero, Vector{1, 1, 1}, Vector{0, 0, 0}, c);
    EXPECT_EQ(d.delta_g, (Vector{0, 0, 0}));

    auto c2 = make(OptimizerKind::Lion, 5e-4, 1.0);
    OptState st2(2);
    d = step_lion(st2, Vector{1, 0}, Vector{0.3, -0.2}, c2);
    EXPECT_NEAR(d.delta_lambda[0], -5e-4, 1e-18);
    EXPECT_EQ(d.delta_lambda[1], 0.0);
}

TEST(Lion, UsesMomentumBeforeUpdate)
{
    auto c = make(OptimizerKind::Lion, 1.0, 0.0);
    OptState st(1);
    st.m = {1.0};
    // 0.9 * 1 + 0.1 * (-5) = 0.4 > 0, whereas the updated moment would be negative.
    auto d = step_lion(st, Vector{0}, Vector{-5}, c);
    EXPECT_EQ(d.delta_g[0], -1.0);
    EXPECT_NEAR(st.m[0], 0.999 - 0.005, 1e-15);
}

TEST(Lion, EntriesAreSignValued)
{
    auto c = make(OptimizerKind::Lion, 5e-4, 0.3);
    RngStream rng(9);
    Vector p = sample_normal(rng, 32, 1.0);
    OptState st(32);
    for (int s = 0; s < 200; ++s) {
        Vector g = sample_normal(rng, 32, 1.0);
        g[s % 32] = 0.0;
        auto d = step(st, p, g, c);
        for (double x : d.delta_g)
            EXPECT_TRUE(x == -5e-4 || x == 0.0 || x == 5e-4);
        apply_update(p, d);
    }
}

TEST(Lion, MatchesReference)
{
    auto c = make(OptimizerKind::Lion, 5e-4, 1.0);
    EXPECT_LE(max_trajectory_gap(c, RefLion{}, 5), 1e-13);
}

TEST(Optimizers, StateCounterAndShapes)
{
    for (auto kind : {OptimizerKind::SGDM, OptimizerKind::AdamW, OptimizerKind::AdamL2, OptimizerKind::Lion}) {
        auto c = make(kind, 1e-2, 0.1);
        OptState st(3);
        for (std::size_t s = 1; s <= 5; ++s) {
            auto d = step(st, Vector{1, 2, 3}, Vector{0.1, -0.2, 0.3}, c);
            EXPECT_EQ(st.t, s);
            EXPECT_EQ(d.delta_g.size(), 3u);
            EXPECT_EQ(d.delta_lambda.size(), 3u);
            for (double v : st.v)
                EXPECT_GE(v, 0.0);
        }
        EXPECT_THROW(step(st, Vector{1, 2}, Vector{1, 2}, c), DomainError);
        EXPECT_THROW(step(st, Vector{1, 2, 3}, Vector{1, 2}, c), DomainError);
    }
}

TEST(Optimizers, DecompositionSumsToStep)
{
    for (auto kind : {OptimizerKind::SGDM, OptimizerKind::AdamW, OptimizerKind::AdamL2, OptimizerKind::Lion}) {
        auto c = make(kind, 1e-2, 0.1);
        OptState st(4);
        Vector p{1, -2, 3, 0.5};
        Vector q = p;
        auto d = step(st, p, Vector{0.3, 0.1, -0.2, 0.0}, c);
        apply_update(p, d);
        const Vector total = d.total();
        for (std::size_t i = 0; i < q.size(); ++i)
            q[i] += total[i];
        EXPECT_EQ(p, q);
    }
}

TEST(Optimizers, ParseKind)
{
    EXPECT_EQ(parse_optimizer_kind("AdamW"), OptimizerKind::AdamW);
    EXPECT_EQ(parse_optimizer_kind("adam_l2"), OptimizerKind::AdamL2);
    EXPECT_EQ(parse_optimizer_kind("SGDM"), OptimizerKind::SGDM);
    EXPECT_EQ(parse_optimizer_kind("lion"), OptimizerKind::Lion);
    EXPECT_FALSE(parse_optimizer_kind("rmsprop"));
}

TEST(Optimizers, ValidateBounds)
{
    auto c = make(OptimizerKind::SGDM, 0.1, 0.0);
    c.momentum = 1.0;
    EXPECT_THROW(c.validate(), DomainError);
    c = make(OptimizerKind::AdamW, -1.0, 0.0);
    EXPECT_THROW(c.validate(), DomainError);
    c = make(OptimizerKind::Lion, 0.1, -0.1);
    EXPECT_THROW(c.validate(), DomainError);
}

TEST(Tuc, SgdmClosedForms)
{
    auto c = make(OptimizerKind::SGDM, 0.5, 1e-4);
    const Vector g{1.0, -2.0};
    const Vector u = sgdm_gradient_tuc(c, g);
    EXPECT_NEAR(u[0], -0.5 / 0.1, 1e-12);
    EXPECT_NEAR(u[1], 1.0 / 0.1, 1e-12);
    const Vector d = sgdm_decay_tuc(c, Vector{3.0, 0.0});
    EXPECT_NEAR(d[0], -0.5 * 1e-4 * 3.0 / 0.1, 1e-15);
}

TEST(Tuc, SgdmTruncationWithinTailBound)
{
    auto c = make(OptimizerKind::SGDM, 0.1, 0.0);
    const Vector g{1.0};
    const double closed = sgdm_gradient_tuc(c, g)[0];
    for (std::size_t h : {1u, 10u, 50u, 200u}) {
        const double trunc = sgdm_gradient_tuc(c, g, h)[0];
        EXPECT_LE(std::abs(trunc - closed), c.lr * std::pow(c.momentum, h) / (1 - c.momentum) + 1e-15);
    }
    EXPECT_THROW(sgdm_gradient_tuc(c, g, 0), DomainError);
}

TEST(Tuc, SgdmSumMatchesSimulatedMomentum)
{
    // Feed one gradient followed by zeros and sum the updates it causes.
    auto c = make(OptimizerKind::SGDM, 0.1, 0.0);
    OptState st(2);
    const Vector g{0.7, -0.3};
    Vector total{0, 0};
    for (int k = 0; k < 200; ++k) {
        auto d = step_sgdm(st, Vector{0, 0}, k == 0 ? g : Vector{0, 0}, c);
        axpy(1.0, d.delta_g, total);
    }
    const Vector u = sgdm_gradient_tuc(c, g, 200);
    EXPECT_NEAR(total[0], u[0], 1e-13);
    EXPECT_NEAR(total[1], u[1], 1e-13);
}

TEST(Tuc, AdamWAgainstRecordedSecondMoments)
{
    auto c = make(OptimizerKind::AdamW, 1e-3, 0.0);
    c.eps = 0.0;
    const Vector g{2.0};
    std::vector<Vector> v{{4.0}, {1.0}};
    // -eta * (0.1 * 2 / 2 + 0.09 * 2 / 1)
    EXPECT_NEAR(adamw_gradient_tuc(c, g, v)[0], -1e-3 * (0.1 + 0.18), 1e-18);
    EXPECT_THROW(adamw_gradient_tuc(c, g, {}), DomainError);
}
