#ifndef RELIGHT_EVALUATION_HPP
#define RELIGHT_EVALUATION_HPP

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "relight/inference.hpp"
#include "relight/losses.hpp"
#include "relight/metrics.hpp"
#include "relight/training.hpp"

namespace relight {

struct EvalOptions {
    std::uint64_t seed = 1;
    std::size_t max_sources = 0;  ///< 0: every record of the split is a source once
    bool composite = true;
    PseudoAnchorInversion inversion = PseudoAnchorInversion::kZeroHeadAtMinus90;
    std::filesystem::path strip_dir;  ///< when set, writes source | target | output | truth strips
    std::size_t strip_count = 4;
};

/// Metrics of the model and of the identity baseline (output = source).
struct EvalReport {
    MetricRecord model;
    MetricRecord identity;
};

struct SequentialReport {
    EvalReport metrics;
    /// Mean masked L1 between outputs 30 degrees apart; entry k compares
    /// offset -180 + 30k with the next offset (the last wraps to -180).
    std::vector<double> step_l1;
    /// Largest ratio of a step to the median step of its own sweep.
    double max_step_ratio = 0.0;
};

namespace detail {

inline std::vector<std::size_t> eval_sources(const SceneStore& store, const EvalOptions& opt, Rng& rng)
{
    std::vector<std::size_t> idx(store.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
        idx[i] = i;
    if (opt.max_sources > 0 && opt.max_sources < idx.size()) {
        for (std::size_t i = 0; i < opt.max_sources; ++i)
            std::swap(idx[i], idx[i + static_cast<std::size_t>(rng.below(idx.size() - i))]);
        idx.resize(opt.max_sources);
    }
    return idx;
}

inline void write_strip(const EvalOptions& opt, std::size_t n, const std::string& name, std::vector<PortraitImage> tiles)
{
    if (opt.strip_dir.empty() || n >= opt.strip_count)
        return;
    std::filesystem::create_directories(opt.strip_dir);
    write_image(opt.strip_dir / name, hstack(tiles));
}

inline double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace detail

/// Single-image protocol: every source is relit with a target drawn
/// uniformly from the split and compared with the rendered ground truth on
/// the source's subject mask.
template <class T>
EvalReport eval_single(const RelightModel<T>& model, const SceneStore& test, const EvalOptions& opt = {})
{
    Rng rng(derive_seed(opt.seed, {0x73696e676cULL}));
    const Relighter<T> relighter(model);
    EvalReport report;
    const auto sources = detail::eval_sources(test, opt, rng);
    std::size_t n = 0;
    for (std::size_t x : sources) {
        const std::size_t y = static_cast<std::size_t>(rng.below(test.size()));
        const auto& rx = test.record(x);
        const auto& ry = test.record(y);
        const std::size_t gt = test.index_of(rx.subject_id, ry.env_id, ry.rotation);
        RelightOptions ro;
        ro.composite = opt.composite;
        ro.inversion = opt.inversion;
        const PortraitImage out = relighter.relight(test.image(x), test.mask(x), test.image(y), test.mask(y), ro);
        report.model.add(out, test.image(gt), test.mask(x));
        report.identity.add(test.image(x), test.image(gt), test.mask(x));
        detail::write_strip(opt, n++, "single_" + record_stem(rx.subject_id, rx.env_id, rx.rotation) + ".png",
            {test.image(x), test.image(y), out, test.image(gt)});
    }
    return report;
}

inline std::vector<double> sweep_offsets()
{
    std::vector<double> v;
    for (int k = 0; k < kRotationSteps; ++k)
        v.push_back(-180.0 + kRotationStepDegrees * k);
    return v;
}

/// Sequential protocol: each source is relit with a random target at the 12
/// offsets -180, -150, ..., 150 and compared with the true rotated renders.
template <class T>
SequentialReport eval_sequential(const RelightModel<T>& model, const SceneStore& test, const EvalOptions& opt = {})
{
    detail::require(model.config().ot3, "sequential evaluation needs a three-head lighting decoder");
    Rng rng(derive_seed(opt.seed, {0x7365717565ULL}));
    const Relighter<T> relighter(model);
    const auto offsets = sweep_offsets();
    SequentialReport report;
    report.step_l1.assign(offsets.size(), 0.0);
    const auto sources = detail::eval_sources(test, opt, rng);
    std::size_t n = 0;
    for (std::size_t x : sources) {
        const std::size_t y = static_cast<std::size_t>(rng.below(test.size()));
        const auto& rx = test.record(x);
        const auto& ry = test.record(y);
        RelightOptions ro;
        ro.composite = opt.composite;
        ro.inversion = opt.inversion;
        const auto outs = relighter.sweep(test.image(x), test.mask(x), test.image(y), test.mask(y), offsets, ro);
        std::vector<double> steps;
        for (std::size_t k = 0; k < offsets.size(); ++k) {
            const int d = ry.rotation + static_cast<int>(offsets[k]) / kRotationStepDegrees;
            const std::size_t gt = test.index_of(rx.subject_id, ry.env_id, d);
            report.metrics.model.add(outs[k], test.image(gt), test.mask(x));
            report.metrics.identity.add(test.image(x), test.image(gt), test.mask(x));
            steps.push_back(masked_l1(outs[k], outs[(k + 1) % outs.size()], test.mask(x)));
        }
        const double med = detail::median(steps);
        for (std::size_t k = 0; k < steps.size(); ++k) {
            report.step_l1[k] += steps[k] / static_cast<double>(sources.size());
            if (med > 0)
                report.max_step_ratio = std::max(report.max_step_ratio, steps[k] / med);
        }
        if (!opt.strip_dir.empty() && n < opt.strip_count) {
            std::vector<PortraitImage> tiles{test.image(x)};
            tiles.insert(tiles.end(), outs.begin(), outs.end());
            detail::write_strip(opt, n, "sequential_" + record_stem(rx.subject_id, rx.env_id, rx.rotation) + ".png", tiles);
        }
        ++n;
    }
    return report;
}

/// Mean L1 residuals of the five anchor overlap identities (see
/// loss_cons_terms), once with the true +-90 degree renders of each scene and
/// once with the +-90 degree renders of a scene under another environment.
struct ConsistencyReport {
    std::array<double, 5> matched{};
    std::array<double, 5> mismatched{};
    std::size_t count = 0;

    static double mean(const std::array<double, 5>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / 5.0; }
    double matched_mean() const { return mean(matched); }
    double mismatched_mean() const { return mean(mismatched); }
};

template <class T>
ConsistencyReport eval_consistency(const RelightModel<T>& model, const SceneStore& test, const EvalOptions& opt = {})
{
    detail::require(model.config().ot3, "consistency evaluation needs a three-head lighting decoder");
    detail::require(test.manifest().env_ids.size() >= 2, "consistency evaluation needs at least two environments");
    Rng rng(derive_seed(opt.seed, {0x636f6e73ULL}));
    const auto sources = detail::eval_sources(test, opt, rng);
    auto image = [&](std::size_t i) { return to_tensor<T>(std::span<const PortraitImage>(&test.image(i), 1)); };
    auto mask = [&](std::size_t i) { return to_tensor<T>(std::span<const SegMask>(&test.mask(i), 1)); };
    auto residuals = [&](std::size_t y, std::size_t partner, std::array<double, 5>& acc) {
        LossBatch<T> b;
        b.y_plus90_image = image(test.rotated(partner, kRotationSteps / 4));
        b.y_plus90_mask = mask(test.rotated(partner, kRotationSteps / 4));
        b.y_minus90_image = image(test.rotated(partner, -kRotationSteps / 4));
        b.y_minus90_mask = mask(test.rotated(partner, -kRotationSteps / 4));
        Tape<T> t(false);
        const AnchorVars codes = model.decode_ot3(t, model.encode_illumination(t, image(y), mask(y)));
        const auto terms = loss_cons_terms(t, model, codes, b);
        for (std::size_t k = 0; k < terms.size(); ++k)
            acc[k] += static_cast<double>(t.value(terms[k])[0]);
    };

    ConsistencyReport report;
    for (std::size_t y : sources) {
        std::size_t z = y;
        while (test.record(z).env_id == test.record(y).env_id)
            z = static_cast<std::size_t>(rng.below(test.size()));
        residuals(y, y, report.matched);
        residuals(y, z, report.mismatched);
        ++report.count;
    }
    for (std::size_t k = 0; k < 5; ++k) {
        report.matched[k] /= static_cast<double>(report.count);
        report.mismatched[k] /= static_cast<double>(report.count);
    }
    return report;
}

/// FNV-1a over the JSON form of a training configuration.
inline std::string config_hash(const TrainingConfig& cfg)
{
    const std::string s = nlohmann::ordered_json(cfg).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

struct AblationVariant {
    std::string name;  ///< column label
    TrainingConfig config;
};

/// Variant names accepted by make_ablation: Full, w/o BG, w/o OT3,
/// w/o L_feat, w/o L_cons, Concat, Mul.
inline const std::vector<std::string>& ablation_names()
{
    static const std::vector<std::string> names{"Full", "w/o BG", "w/o OT3", "w/o L_feat", "w/o L_cons", "Concat", "Mul"};
    return names;
}

/// Applies one named ablation to a base configuration. Concat and Mul run
/// with a single lighting code, like the w/o OT3 variant.
inline AblationVariant make_ablation(const std::string& name, const TrainingConfig& base)
{
    TrainingConfig c = base;
    if (name == "Full") {
    } else if (name == "w/o BG") {
        c.model.background_encoder = false;
    } else if (name == "w/o OT3") {
        c.model.ot3 = false;
    } else if (name == "w/o L_feat") {
        c.feat = false;
    } else if (name == "w/o L_cons") {
        c.cons = false;
    } else if (name == "Concat") {
        c.model.mode = RenderMode::kConcat;
        c.model.ot3 = false;
    } else if (name == "Mul") {
        c.model.mode = RenderMode::kMul;
        c.model.ot3 = false;
    } else {
        throw ConfigError("unknown ablation '" + name + "'");
    }
    return {name, c};
}

struct AblationRow {
    std::string variant;
    std::string config_hash;
    EvalReport single;
    double final_relight = 0.0;  ///< L_relight of the last training step
};

/// Trains each variant on `train` and evaluates it on `test` with the
/// single-image protocol.
inline std::vector<AblationRow> eval_ablations(const std::vector<AblationVariant>& variants, const SceneStore& train, const SceneStore& test,
    const EvalOptions& opt = {}, const std::function<void(const std::string&, const StepResult&)>& progress = {})
{
    std::vector<AblationRow> rows;
    for (const auto& v : variants) {
        Trainer trainer(v.config, train);
        AblationRow row{v.name, config_hash(v.config), {}, 0.0};
        TrainOptions to;
        to.on_step = [&](const StepResult& r) {
            row.final_relight = r.losses.relight;
            if (progress)
                progress(v.name, r);
        };
        run_training(trainer, to);
        row.single = eval_single(trainer.model(), test, opt);
        rows.push_back(std::move(row));
    }
    return rows;
}

/// Table with one column per variant and rows RMSE, PSNR, SSIM, config_hash.
inline void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows)
{
    auto line = [&](const std::string& label, auto cell) {
        os << label;
        for (const auto& r : rows)
            os << ',' << cell(r);
        os << '\n';
    };
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", v);
        return std::string(buf);
    };
    line("measurement", [](const AblationRow& r) { return r.variant; });
    line("RMSE", [&](const AblationRow& r) { return num(r.single.model.rmse); });
    line("PSNR", [&](const AblationRow& r) { return num(r.single.model.psnr); });
    line("SSIM", [&](const AblationRow& r) { return num(r.single.model.ssim); });
    line("config_hash", [](const AblationRow& r) { return r.config_hash; });
}

/// Long-form report: protocol,output,rmse,psnr,ssim,count.
inline void write_eval_csv(std::ostream& os, const std::vector<std::pair<std::string, EvalReport>>& reports)
{
    os << "protocol,output,rmse,psnr,ssim,count\n";
    for (const auto& [protocol, r] : reports) {
        for (const auto& [label, m] : {std::pair{"model", &r.model}, std::pair{"identity", &r.identity}}) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%zu", m->rmse, m->psnr, m->ssim, m->count);
            os << protocol << ',' << label << ',' << buf << '\n';
        }
    }
}

} // namespace relight

#endif // RELIGHT_EVALUATION_HPP
