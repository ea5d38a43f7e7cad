#include <gtest/gtest.h>

#include "grad_suite.hpp"

using namespace relight;
using namespace relight::testing;

namespace {

/// Direct convolution loop.
Tensor<double> conv_reference(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, int stride, int pad)
{
    const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3), co = w.dim(0), k = w.dim(2);
    const int oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
    Tensor<double> out({n, co, oh, ow});
    for (int s = 0; s < n; ++s)
        for (int o = 0; o < co; ++o)
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx) {
                    double acc = b[static_cast<std::size_t>(o)];
                    for (int c = 0; c < ci; ++c)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int iy = y * stride - pad + ky, ix = xx * stride - pad + kx;
                                if (iy >= 0 && ix >= 0 && iy < h && ix < wd)
                                    acc += w.at(o, c, ky, kx) * x.at(s, c, iy, ix);
                            }
                    out.at(s, o, y, xx) = acc;
                }
    return out;
}

/// Scatter form of the transposed convolution.
Tensor<double> deconv_reference(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, int stride, int pad)
{
    const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3), co = w.dim(1), k = w.dim(2);
    const int oh = (h - 1) * stride - 2 * pad + k, ow = (wd - 1) * stride - 2 * pad + k;
    Tensor<double> out({n, co, oh, ow});
    for (int s = 0; s < n; ++s)
        for (int o = 0; o < co; ++o)
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx)
                    out.at(s, o, y, xx) = b[static_cast<std::size_t>(o)];
    for (int s = 0; s < n; ++s)
        for (int c = 0; c < ci; ++c)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < wd; ++xx)
                    for (int o = 0; o < co; ++o)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int oy = y * stride - pad + ky, ox = xx * stride - pad + kx;
                                if (oy >= 0 && ox >= 0 && oy < oh && ox < ow)
                                    out.at(s, o, oy, ox) += w.at(c, o, ky, kx) * x.at(s, c, y, xx);
                            }
    return out;
}

} // namespace

class GradientSuite : public ::testing::TestWithParam<std::size_t> {};

TEST_P(GradientSuite, MatchesCentralDifferences)
{
    const GradCase c = gradient_cases().at(GetParam());
    for (int seed = 1; seed <= kGradSeeds; ++seed) {
        const GradCheckReport r = c.run(static_cast<std::uint64_t>(seed));
        EXPECT_TRUE(r.passed(kGradTol)) << c.name << " seed " << seed << ": rel " << r.max_rel_error << " at " << r.worst;
        EXPECT_GT(r.coordinates, 0u);
        EXPECT_LE(10 * r.skipped, r.coordinates + r.skipped) << c.name << " seed " << seed << " skipped " << r.skipped;
    }
}

INSTANTIATE_TEST_SUITE_P(AllCases, GradientSuite, ::testing::Range<std::size_t>(0, gradient_cases().size()),
    [](const ::testing::TestParamInfo<std::size_t>& info) { return gradient_cases().at(info.param).name; });

TEST(GradCheck, ConstantFunctionHasZeroGradient)
{
    Rng rng(3);
    const Tensor<double> c = random_tensor({2, 2}, rng);
    const auto r = grad_check([&](Tape<double>& t, std::span<const Var>) { return t.constant(c); }, {random_tensor({3}, rng)});
    EXPECT_TRUE(r.passed(kGradTol));
    EXPECT_EQ(r.max_abs_error, 0.0);
}

TEST(GradCheck, MnrLayerOnSmallFeature)
{
    Rng rng(11);
    const auto r = grad_check([](Tape<double>& t, std::span<const Var> v) { return ops::modulate(t, v[0], v[1], 0, 4); },
        {random_tensor({1, 4, 2, 2}, rng), random_tensor({1, 8}, rng)});
    EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(GradCheck, FlagsNonFiniteOutput)
{
    const auto r = grad_check([](Tape<double>& t, std::span<const Var> v) { return ops::scale(t, v[0], std::numeric_limits<double>::infinity()); },
        {Tensor<double>({2}, 1.0)});
    EXPECT_FALSE(r.finite);
    EXPECT_FALSE(r.passed(kGradTol));
}

TEST(GradCheck, DetectsWrongGradient)
{
    // relu evaluated exactly at its kink: the one-sided analytic gradient
    // disagrees with the symmetric difference.
    const auto r = grad_check([](Tape<double>& t, std::span<const Var> v) { return ops::relu(t, v[0]); }, {Tensor<double>({1}, 0.0)});
    EXPECT_FALSE(r.passed(kGradTol));
}

TEST(GradCheck, KinkSkippingKeepsSmoothErrors)
{
    // x^2 with a backward closure that reports 3x instead of 2x.
    const CheckedOp wrong = [](Tape<double>& t, std::span<const Var> v) {
        Tensor<double> y = t.value(v[0]);
        for (auto& e : y.values())
            e *= e;
        const int id = static_cast<int>(t.size());
        const Var x = v[0];
        return t.record(std::move(y), {x}, [=](Tape<double>& tp) {
            for (std::size_t i = 0; i < tp.value(x).size(); ++i)
                tp.grad(x)[i] += 3.0 * tp.value(x)[i] * tp.grad(Var{id})[i];
        });
    };
    GradCheckOptions opt;
    opt.skip_kinks = true;
    Rng rng(4);
    const auto r = grad_check(wrong, {away_from_zero({6}, rng)}, opt);
    EXPECT_EQ(r.skipped, 0u);
    EXPECT_FALSE(r.passed(kGradTol));
}

TEST(GradCheck, KinkSkippingSkipsOnlyKinks)
{
    GradCheckOptions opt;
    opt.skip_kinks = true;
    const auto r = grad_check([](Tape<double>& t, std::span<const Var> v) { return ops::relu(t, v[0]); },
        {Tensor<double>({3}, std::vector<double>{0.0, 0.5, -0.5})}, opt);
    EXPECT_EQ(r.skipped, 1u);
    EXPECT_EQ(r.coordinates, 2u);
    EXPECT_TRUE(r.passed(kGradTol));
}

TEST(Conv2d, MatchesLoopReference)
{
    for (int seed = 1; seed <= 10; ++seed) {
        Rng rng(static_cast<std::uint64_t>(seed));
        const int k = 1 + static_cast<int>(rng.below(4)), s = 1 + static_cast<int>(rng.below(2)), p = static_cast<int>(rng.below(2));
        const Tensor<double> x = random_tensor({2, 3, 7, 6}, rng), w = random_tensor({4, 3, k, k}, rng), b = random_tensor({4}, rng);
        Tape<double> t(false);
        const Var y = ops::conv2d(t, t.constant(x), t.constant(w), t.constant(b), s, p);
        EXPECT_LT(max_abs_diff(t.value(y), conv_reference(x, w, b, s, p)), 1e-12);
    }
}

TEST(ConvTranspose2d, MatchesScatterReference)
{
    for (int seed = 1; seed <= 10; ++seed) {
        Rng rng(static_cast<std::uint64_t>(seed));
        const int k = 2 + static_cast<int>(rng.below(3)), s = 1 + static_cast<int>(rng.below(2)), p = static_cast<int>(rng.below(2));
        const Tensor<double> x = random_tensor({2, 3, 4, 5}, rng), w = random_tensor({3, 2, k, k}, rng), b = random_tensor({2}, rng);
        Tape<double> t(false);
        const Var y = ops::conv_transpose2d(t, t.constant(x), t.constant(w), t.constant(b), s, p);
        EXPECT_LT(max_abs_diff(t.value(y), deconv_reference(x, w, b, s, p)), 1e-12);
    }
}

TEST(Conv2d, StrideTwoHalvesAndZeroInputGivesZero)
{
    Rng rng(5);
    ParameterSet<double> set;
    LayerFactory<double> f(set, rng);
    const auto conv = Conv2d<double>::make(f, "down", 3, 8, 4, 2, 1);
    Tape<double> t(false);
    const Var y = conv(t, t.constant(Tensor<double>({1, 3, 16, 16}, 0.0)));
    EXPECT_EQ(t.shape(y), (Shape{1, 8, 8, 8}));
    for (double v : t.value(y).values())
        EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, RejectsChannelMismatch)
{
    Tape<double> t(false);
    EXPECT_THROW(ops::conv2d(t, t.constant(Tensor<double>({1, 2, 4, 4})), t.constant(Tensor<double>({3, 3, 3, 3})),
                     t.constant(Tensor<double>({3})), 1, 1),
        ConfigError);
}

TEST(ConvTranspose2d, DoublesSpatialSize)
{
    Rng rng(2);
    ParameterSet<double> set;
    LayerFactory<double> f(set, rng);
    const auto up = ConvTranspose2d<double>::make(f, "up", 4, 2, 4, 2, 1);
    Tape<double> t(false);
    EXPECT_EQ(t.shape(up(t, t.constant(random_tensor({1, 4, 5, 3}, rng)))), (Shape{1, 2, 10, 6}));
}

TEST(GlobalAvgPool, ConstantMapGivesConstant)
{
    Tape<double> t(false);
    const Var y = ops::global_avg_pool(t, t.constant(Tensor<double>({2, 3, 5, 4}, 0.375)));
    EXPECT_EQ(t.shape(y), (Shape{2, 3}));
    for (double v : t.value(y).values())
        EXPECT_DOUBLE_EQ(v, 0.375);
}

TEST(ResidualBlock, ZeroFinalConvIsIdentity)
{
    Rng rng(9);
    ParameterSet<double> set;
    LayerFactory<double> f(set, rng);
    const auto block = ResidualBlock<double>::make(f, "block", 3, false);
    block.second.weight->value.fill(0.0);
    const Tensor<double> x = random_tensor({2, 3, 4, 4}, rng);
    Tape<double> t(false);
    EXPECT_EQ(t.value(block(t, t.constant(x))), x);
}

TEST(Linear, MatchesExplicitDotProducts)
{
    const Tensor<double> w({3, 4}, std::vector<double>{1, 2, 3, 4, -1, 0.5, 0, 2, 0.25, -3, 1, 1});
    const Tensor<double> b({3}, std::vector<double>{0.5, -1, 2});
    const Tensor<double> x({1, 4}, std::vector<double>{2, -1, 0.5, 3});
    Tape<double> t(false);
    const Tensor<double> y = t.value(ops::linear(t, t.constant(x), t.constant(w), t.constant(b)));
    for (int r = 0; r < 3; ++r) {
        double acc = b[static_cast<std::size_t>(r)];
        for (int c = 0; c < 4; ++c)
            acc += w[static_cast<std::size_t>(r * 4 + c)] * x[static_cast<std::size_t>(c)];
        EXPECT_DOUBLE_EQ(y[static_cast<std::size_t>(r)], acc);
    }
}

TEST(Initialization, SeededAndBitReproducible)
{
    ModelConfig cfg;
    RelightModel<float> a(cfg), b(cfg);
    auto pa = a.params().begin();
    for (const auto& p : b.params()) {
        EXPECT_EQ(pa->name, p.name);
        EXPECT_EQ(pa->value, p.value);
        ++pa;
    }
    cfg.seed = 2;
    RelightModel<float> c(cfg);
    EXPECT_NE(a.params().find("render.out.weight")->value, c.params().find("render.out.weight")->value);
}

TEST(Initialization, FloatAndDoubleAgreeAfterRounding)
{
    const ModelConfig cfg = tiny_config(4);
    RelightModel<float> f(cfg);
    RelightModel<double> d(cfg);
    auto pd = d.params().begin();
    for (const auto& p : f.params()) {
        EXPECT_EQ(p.value, pd->value.cast<float>());
        ++pd;
    }
}

TEST(Initialization, BiasesStartAtZeroAndConvsUseFanInScaling)
{
    RelightModel<double> m(ModelConfig{});
    const auto& w = m.params().find("subject.down2.weight")->value;
    double ss = 0;
    for (double v : w.values())
        ss += v * v;
    const double fan_in = 32.0 * 4 * 4;
    EXPECT_NEAR(std::sqrt(ss / static_cast<double>(w.size())), std::sqrt(kInitGain / fan_in), 0.01);
    for (double v : m.params().find("subject.down2.bias")->value.values())
        EXPECT_EQ(v, 0.0);
}

TEST(Initialization, DeskParameterCountIsDocumentedConstant)
{
    EXPECT_EQ(RelightModel<float>(ModelConfig{}).params().element_count(), 219195u);
}

TEST(Forward, FixedSeedGivesIdenticalOutputs)
{
    const ModelConfig cfg;
    RelightModel<float> a(cfg), b(cfg);
    Rng rng(1);
    const Tensor<float> img = random_tensor({1, 3, 64, 64}, rng, 0, 1).cast<float>();
    Tape<float> ta(false), tb(false);
    EXPECT_EQ(ta.value(a.encode_subject(ta, ta.constant(img))), tb.value(b.encode_subject(tb, tb.constant(img))));
}

TEST(Tape, ParameterGradientsAccumulate)
{
    ParameterSet<double> set;
    auto& p = set.add("p", Tensor<double>({2}, std::vector<double>{1.0, -2.0}));
    for (int i = 0; i < 2; ++i) {
        Tape<double> t;
        const Var v = t.param(p);
        t.backward(ops::dot_constant(t, ops::add(t, v, v), Tensor<double>({2}, std::vector<double>{1.0, 3.0})));
    }
    EXPECT_EQ(p.grad[0], 4.0);
    EXPECT_EQ(p.grad[1], 12.0);
}

TEST(Tape, NonRecordingTapeStoresNoGradients)
{
    ParameterSet<double> set;
    auto& p = set.add("p", Tensor<double>({1}, 2.0));
    Tape<double> t(false);
    const Var v = ops::scale(t, t.param(p), 3.0);
    EXPECT_EQ(t.value(v)[0], 6.0);
    EXPECT_FALSE(t.requires_grad(v));
    EXPECT_THROW(t.backward(v), ConfigError);
}
