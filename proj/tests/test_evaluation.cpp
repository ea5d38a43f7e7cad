#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "oracles.hpp"

using namespace relight;
using namespace relight::testing;

namespace {

PortraitImage constant_image(int w, int h, float v)
{
    PortraitImage im(w, h);
    for (float& x : im.values())
        x = v;
    return im;
}

SegMask soft_mask(int w, int h, Rng& rng)
{
    SegMask m(w, h);
    for (float& v : m.values())
        v = static_cast<float>(rng.uniform());
    m.at(0, 0) = 1.0f;
    return m;
}

std::vector<std::string> split(const std::string& line, char sep)
{
    std::vector<std::string> out;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, sep);)
        out.push_back(cell);
    return out;
}

class EvaluationTest : public ::testing::Test {
protected:
    static void SetUpTestSuite()
    {
        DatasetConfig d;
        d.subjects = 2;
        d.envs = 2;
        d.test_subjects = 1;
        d.test_envs = 2;
        d.resolution = 16;
        d.env_width = 32;
        const auto manifests = generate_dataset(d, scratch_dir("evaluation_data"));
        train_ = new SceneStore(manifests[0]);
        test_ = new SceneStore(manifests[1]);
    }

    static void TearDownTestSuite()
    {
        delete train_;
        delete test_;
        train_ = test_ = nullptr;
    }

    static ModelConfig model_config()
    {
        ModelConfig c = tiny_config(31);
        c.resolution = 16;
        return c;
    }

    static TrainingConfig training_config()
    {
        TrainingConfig c;
        c.model = model_config();
        c.steps = 2;
        c.seed = 3;
        return c;
    }

    static SceneStore* train_;
    static SceneStore* test_;
};

SceneStore* EvaluationTest::train_ = nullptr;
SceneStore* EvaluationTest::test_ = nullptr;

} // namespace

TEST(Metrics, MatchNestedLoopReferencesOnSmallImages)
{
    Rng rng(1);
    for (int trial = 0; trial < 40; ++trial) {
        const int w = 1 + static_cast<int>(rng.below(5)), h = 1 + static_cast<int>(rng.below(5));
        const PortraitImage a = random_image(w, h, rng), b = random_image(w, h, rng);
        SegMask m = trial % 2 ? soft_mask(w, h, rng) : random_binary_mask(w, h, rng);
        m.at(0, 0) = 1.0f;
        EXPECT_NEAR(rmse(a, b, m), rmse_loop(a, b, m), 1e-9);
        EXPECT_NEAR(ssim(a, b, m), ssim_loop(a, b, m), 1e-9);
        EXPECT_NEAR(psnr(a, b, m), -20.0 * std::log10(rmse_loop(a, b, m)), 1e-9);
    }
}

TEST(Metrics, IdenticalImagesHitTheIdealValues)
{
    Rng rng(2);
    const PortraitImage a = random_image(5, 5, rng);
    const SegMask m = random_binary_mask(5, 5, rng, 0.7);
    SegMask full(5, 5, 1.0f);
    for (const SegMask* mask : std::initializer_list<const SegMask*>{&m, &full}) {
        if (mask->sum() == 0)
            continue;
        EXPECT_EQ(rmse(a, a, *mask), 0.0);
        EXPECT_EQ(psnr(a, a, *mask), kPsnrCap);
        EXPECT_NEAR(ssim(a, a, *mask), 1.0, 1e-12);
    }
}

TEST(Metrics, ConstantImagesHaveClosedFormSsim)
{
    const SegMask m(4, 3, 1.0f);
    for (const auto& [x, y] : {std::pair{0.2f, 0.7f}, std::pair{0.5f, 0.5f}, std::pair{0.0f, 1.0f}, std::pair{0.9f, 0.1f}}) {
        const PortraitImage a = constant_image(4, 3, x), b = constant_image(4, 3, y);
        EXPECT_NEAR(ssim(a, b, m), ssim_constants(x, y), 1e-9);
        EXPECT_NEAR(rmse(a, b, m), std::abs(static_cast<double>(x) - y), 1e-7);
    }
}

TEST(Metrics, AreSymmetricAndBounded)
{
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const PortraitImage a = random_image(5, 4, rng), b = random_image(5, 4, rng);
        const SegMask m = soft_mask(5, 4, rng);
        EXPECT_NEAR(rmse(a, b, m), rmse(b, a, m), 1e-12);
        EXPECT_NEAR(ssim(a, b, m), ssim(b, a, m), 1e-12);
        EXPECT_LE(ssim(a, b, m), 1.0);
        EXPECT_GE(ssim(a, b, m), -1.0);
    }
}

TEST(Metrics, PsnrFollowsRmseAndIsCapped)
{
    EXPECT_NEAR(psnr_from_rmse(0.1), 20.0, 1e-12);
    EXPECT_NEAR(psnr_from_rmse(0.01), 40.0, 1e-12);
    EXPECT_EQ(psnr_from_rmse(0.0), kPsnrCap);
    EXPECT_EQ(psnr_from_rmse(1e-9), kPsnrCap);
}

TEST(Metrics, RejectEmptyMasksAndSizeMismatch)
{
    const PortraitImage a(4, 4);
    EXPECT_THROW(rmse(a, a, SegMask(4, 4)), ConfigError);
    EXPECT_THROW(ssim(a, a, SegMask(4, 4)), ConfigError);
    EXPECT_THROW(rmse(a, PortraitImage(4, 5), SegMask(4, 4, 1.0f)), ConfigError);
    EXPECT_THROW(ssim(a, a, SegMask(3, 4, 1.0f)), ConfigError);
}

TEST(Metrics, RecordAveragesPerImage)
{
    const SegMask m(2, 2, 1.0f);
    MetricRecord r;
    r.add(constant_image(2, 2, 0.5f), constant_image(2, 2, 0.4f), m);
    r.add(constant_image(2, 2, 0.5f), constant_image(2, 2, 0.2f), m);
    EXPECT_EQ(r.count, 2u);
    EXPECT_NEAR(r.rmse, 0.2, 1e-7);
    EXPECT_NEAR(r.psnr, 0.5 * (psnr_from_rmse(0.1) + psnr_from_rmse(0.3)), 1e-5);
}

TEST_F(EvaluationTest, SingleProtocolIsDeterministicAndCountsSources)
{
    const RelightModel<float> model(model_config());
    EvalOptions opt;
    opt.max_sources = 5;
    const EvalReport a = eval_single(model, *test_, opt);
    const EvalReport b = eval_single(model, *test_, opt);
    EXPECT_EQ(a.model.count, 5u);
    EXPECT_EQ(a.model.rmse, b.model.rmse);
    EXPECT_EQ(a.model.ssim, b.model.ssim);
    EXPECT_EQ(a.identity.rmse, b.identity.rmse);
    opt.seed = 2;
    EXPECT_NE(eval_single(model, *test_, opt).identity.rmse, a.identity.rmse);
    opt.max_sources = 0;
    EXPECT_EQ(eval_single(model, *test_, opt).model.count, test_->size());
}

TEST_F(EvaluationTest, SequentialProtocolSweepsTwelveOffsets)
{
    const RelightModel<float> model(model_config());
    EvalOptions opt;
    opt.max_sources = 2;
    opt.strip_dir = scratch_dir("evaluation_strips");
    opt.strip_count = 1;
    const SequentialReport r = eval_sequential(model, *test_, opt);
    EXPECT_EQ(r.metrics.model.count, 24u);
    ASSERT_EQ(r.step_l1.size(), 12u);
    for (double s : r.step_l1)
        EXPECT_GE(s, 0.0);
    EXPECT_GE(r.max_step_ratio, 1.0);
    std::size_t strips = 0;
    for (const auto& e : std::filesystem::directory_iterator(opt.strip_dir)) {
        ++strips;
        EXPECT_EQ(read_image(e.path()).width(), 13 * 16);
    }
    EXPECT_EQ(strips, 1u);
    EXPECT_EQ(sweep_offsets(), (std::vector<double>{-180, -150, -120, -90, -60, -30, 0, 30, 60, 90, 120, 150}));

    ModelConfig single = model_config();
    single.ot3 = false;
    EXPECT_THROW(eval_sequential(RelightModel<float>(single), *test_, opt), ConfigError);
}

TEST_F(EvaluationTest, ReportsAreFiniteAndBounded)
{
    const RelightModel<float> model(model_config());
    EvalOptions opt;
    opt.max_sources = 0;
    const EvalReport r = eval_single(model, *test_, opt);
    EXPECT_GE(r.identity.rmse, 0.0);
    EXPECT_LE(r.identity.ssim, 1.0);
    EXPECT_TRUE(std::isfinite(r.model.rmse));
    EXPECT_LE(r.model.psnr, kPsnrCap);
}

TEST(Ablations, NamedVariantsToggleOneSetting)
{
    const TrainingConfig base = TrainingConfig::desk();
    std::set<std::string> hashes;
    for (const auto& name : ablation_names())
        hashes.insert(config_hash(make_ablation(name, base).config));
    EXPECT_EQ(hashes.size(), 7u);
    EXPECT_EQ(make_ablation("Full", base).config, base);
    EXPECT_FALSE(make_ablation("w/o BG", base).config.model.background_encoder);
    EXPECT_FALSE(make_ablation("w/o OT3", base).config.model.ot3);
    EXPECT_FALSE(make_ablation("w/o L_feat", base).config.feat);
    EXPECT_FALSE(make_ablation("w/o L_cons", base).config.cons);
    EXPECT_EQ(make_ablation("Concat", base).config.model.mode, RenderMode::kConcat);
    EXPECT_EQ(make_ablation("Mul", base).config.model.mode, RenderMode::kMul);
    EXPECT_THROW(make_ablation("w/o everything", base), ConfigError);
    EXPECT_EQ(config_hash(base), config_hash(TrainingConfig::desk()));
    EXPECT_EQ(config_hash(base).size(), 16u);
}

TEST(Ablations, CsvHasOneColumnPerVariant)
{
    std::vector<AblationRow> rows;
    for (const auto& name : ablation_names()) {
        AblationRow r{name, config_hash(make_ablation(name, TrainingConfig::desk()).config), {}, 0.0};
        r.single.model.rmse = 0.125;
        rows.push_back(r);
    }
    std::ostringstream os;
    write_ablation_csv(os, rows);
    std::istringstream is(os.str());
    std::vector<std::vector<std::string>> table;
    for (std::string line; std::getline(is, line);)
        table.push_back(split(line, ','));
    ASSERT_EQ(table.size(), 5u);
    const std::vector<std::string> labels{"measurement", "RMSE", "PSNR", "SSIM", "config_hash"};
    for (std::size_t i = 0; i < table.size(); ++i) {
        ASSERT_EQ(table[i].size(), 8u);
        EXPECT_EQ(table[i][0], labels[i]);
    }
    EXPECT_EQ(table[0][2], "w/o BG");
    EXPECT_EQ(table[1][1], "0.125000");
}

TEST(Ablations, EvalCsvListsModelAndIdentity)
{
    EvalReport r;
    r.model.count = r.identity.count = 3;
    std::ostringstream os;
    write_eval_csv(os, {{"single", r}, {"sequential", r}});
    std::istringstream is(os.str());
    std::vector<std::string> lines;
    for (std::string line; std::getline(is, line);)
        lines.push_back(line);
    ASSERT_EQ(lines.size(), 5u);
    EXPECT_EQ(lines[0], "protocol,output,rmse,psnr,ssim,count");
    EXPECT_EQ(split(lines[1], ',')[1], "model");
    EXPECT_EQ(split(lines[2], ',')[1], "identity");
    EXPECT_EQ(split(lines[4], ',')[0], "sequential");
    EXPECT_EQ(split(lines[4], ',')[5], "3");
}

TEST_F(EvaluationTest, AblationRunTrainsAndEvaluatesEachVariant)
{
    std::vector<AblationVariant> variants;
    for (const char* name : {"Full", "Mul"})
        variants.push_back(make_ablation(name, training_config()));
    EvalOptions opt;
    opt.max_sources = 2;
    int steps = 0;
    const auto rows = eval_ablations(variants, *train_, *test_, opt, [&](const std::string&, const StepResult&) { ++steps; });
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(steps, 4);
    EXPECT_EQ(rows[1].variant, "Mul");
    EXPECT_NE(rows[0].config_hash, rows[1].config_hash);
    for (const auto& r : rows) {
        EXPECT_EQ(r.single.model.count, 2u);
        EXPECT_GT(r.final_relight, 0.0);
    }
}

TEST_F(EvaluationTest, ConsistencyComparesTrueAndMismatchedRotations)
{
    const RelightModel<float> model(model_config());
    EvalOptions opt;
    opt.max_sources = 3;
    const ConsistencyReport a = eval_consistency(model, *test_, opt);
    const ConsistencyReport b = eval_consistency(model, *test_, opt);
    EXPECT_EQ(a.count, 3u);
    EXPECT_EQ(a.matched, b.matched);
    EXPECT_EQ(a.mismatched, b.mismatched);
    for (std::size_t k = 0; k < 5; ++k) {
        EXPECT_GT(a.matched[k], 0.0);
        EXPECT_GT(a.mismatched[k], 0.0);
    }
    EXPECT_NEAR(a.matched_mean(), (a.matched[0] + a.matched[1] + a.matched[2] + a.matched[3] + a.matched[4]) / 5, 1e-15);

    ModelConfig single = model_config();
    single.ot3 = false;
    EXPECT_THROW(eval_consistency(RelightModel<float>(single), *test_, opt), ConfigError);
    EXPECT_THROW(eval_consistency(model, test_->subset({2}, {2}), opt), ConfigError);
}
