#ifndef RELIGHT_TRAINING_HPP
#define RELIGHT_TRAINING_HPP

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "relight/checkpoint.hpp"
#include "relight/losses.hpp"
#include "relight/synthdata.hpp"

namespace relight {

struct TrainingConfig {
    ModelConfig model;
    double learning_rate = 1.5e-5;
    int batch_size = 2;
    int epochs = 5;
    std::int64_t steps = 0;  ///< when positive, overrides epochs
    std::uint64_t seed = 1;  ///< drives initialization, pair sampling and L_feat noise
    LossWeights weights;
    bool feat = true;
    bool cons = true;
    std::int64_t checkpoint_every = 0;  ///< 0: only the final checkpoint

    /// Settings sized for a single CPU core: 64x64 images, 32-channel
    /// features, 2000 steps at a larger step size.
    static TrainingConfig desk()
    {
        TrainingConfig c;
        c.learning_rate = 5e-4;
        c.steps = 2000;
        return c;
    }

    static TrainingConfig full_scale()
    {
        TrainingConfig c;
        c.model = ModelConfig::full_scale();
        return c;
    }

    /// Model configuration with the run seed applied.
    ModelConfig model_config() const
    {
        ModelConfig m = model;
        m.seed = seed;
        return m;
    }

    LossFlags loss_flags() const { return {model.ot3, feat, model.ot3 && cons}; }

    std::int64_t total_steps(std::size_t records) const
    {
        if (steps > 0)
            return steps;
        const auto per_epoch = static_cast<std::int64_t>((records + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size));
        return static_cast<std::int64_t>(epochs) * per_epoch;
    }

    void validate() const
    {
        model.validate();
        weights.validate();
        detail::require(learning_rate > 0 && std::isfinite(learning_rate), "learning rate must be positive");
        detail::require(batch_size > 0, "batch size must be positive");
        detail::require(epochs >= 0 && steps >= 0, "epochs and steps must be non-negative");
        detail::require(checkpoint_every >= 0, "checkpoint interval must be non-negative");
    }

    friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

inline void to_json(nlohmann::ordered_json& j, const TrainingConfig& c)
{
    j = nlohmann::ordered_json{
        {"model", c.model},
        {"learning_rate", c.learning_rate},
        {"batch_size", c.batch_size},
        {"epochs", c.epochs},
        {"steps", c.steps},
        {"seed", c.seed},
        {"weights", {{"auglight", c.weights.auglight}, {"feat", c.weights.feat}, {"cons", c.weights.cons}}},
        {"feat", c.feat},
        {"cons", c.cons},
        {"checkpoint_every", c.checkpoint_every},
    };
}

inline void from_json(const nlohmann::ordered_json& j, TrainingConfig& c)
{
    if (j.contains("model"))
        c.model = j.at("model").get<ModelConfig>();
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.steps = j.value("steps", c.steps);
    c.seed = j.value("seed", c.seed);
    if (j.contains("weights")) {
        const auto& w = j.at("weights");
        c.weights.auglight = w.value("auglight", c.weights.auglight);
        c.weights.feat = w.value("feat", c.weights.feat);
        c.weights.cons = w.value("cons", c.weights.cons);
    }
    c.feat = j.value("feat", c.feat);
    c.cons = j.value("cons", c.cons);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
}

/// Adam with bias correction.
template <class T>
class Adam {
public:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEpsilon = 1e-8;

    Adam() = default;

    Adam(const ParameterSet<T>& params, double lr) : lr_(lr)
    {
        for (const auto& p : params) {
            m_.emplace_back(p.value.shape(), T(0));
            v_.emplace_back(p.value.shape(), T(0));
        }
    }

    std::int64_t steps() const noexcept { return t_; }
    void set_steps(std::int64_t t) noexcept { t_ = t; }
    std::vector<Tensor<T>>& first_moments() noexcept { return m_; }
    std::vector<Tensor<T>>& second_moments() noexcept { return v_; }
    const std::vector<Tensor<T>>& first_moments() const noexcept { return m_; }
    const std::vector<Tensor<T>>& second_moments() const noexcept { return v_; }

    void step(ParameterSet<T>& params)
    {
        ++t_;
        const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
        const T b1 = static_cast<T>(kBeta1), b2 = static_cast<T>(kBeta2);
        const T step_size = static_cast<T>(lr_ / c1);
        const T inv_c2 = static_cast<T>(1.0 / c2);
        const T eps = static_cast<T>(kEpsilon);
        std::size_t k = 0;
        for (auto& p : params) {
            auto& m = m_[k];
            auto& v = v_[k];
            ++k;
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                const T g = p.grad[i];
                m[i] = b1 * m[i] + (T(1) - b1) * g;
                v[i] = b2 * v[i] + (T(1) - b2) * g * g;
                p.value[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
            }
        }
    }

private:
    double lr_ = 0.0;
    std::int64_t t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

/// Store indices of one training pair and its ground truths.
struct PairSample {
    std::size_t x = 0, y = 0;
    std::size_t gt_zero = 0, gt_plus90 = 0, gt_minus90 = 0;  ///< subject x under env y at rot_y, rot_y +- 3
    std::size_t y_plus90 = 0, y_minus90 = 0;                 ///< scene y at rot_y +- 3
};

inline constexpr int kQuarterTurnSteps = 90 / kRotationStepDegrees;

/// Uniform source and target records with ground truths resolved through the
/// full cross product.
inline PairSample sample_pair(const SceneStore& store, Rng& rng)
{
    detail::require(store.size() > 0, "sample_pair: empty dataset");
    PairSample p;
    p.x = static_cast<std::size_t>(rng.below(store.size()));
    p.y = static_cast<std::size_t>(rng.below(store.size()));
    const auto& x = store.record(p.x);
    const auto& y = store.record(p.y);
    p.gt_zero = store.index_of(x.subject_id, y.env_id, y.rotation);
    p.gt_plus90 = store.index_of(x.subject_id, y.env_id, y.rotation + kQuarterTurnSteps);
    p.gt_minus90 = store.index_of(x.subject_id, y.env_id, y.rotation - kQuarterTurnSteps);
    p.y_plus90 = store.rotated(p.y, kQuarterTurnSteps);
    p.y_minus90 = store.rotated(p.y, -kQuarterTurnSteps);
    return p;
}

template <class T>
LossBatch<T> assemble_batch(const SceneStore& store, const std::vector<PairSample>& pairs, Rng& rng)
{
    auto images = [&](auto member) {
        std::vector<PortraitImage> v;
        for (const auto& p : pairs)
            v.push_back(store.image(p.*member));
        return to_tensor<T>(std::span<const PortraitImage>(v));
    };
    auto masks = [&](auto member) {
        std::vector<SegMask> v;
        for (const auto& p : pairs)
            v.push_back(store.mask(p.*member));
        return to_tensor<T>(std::span<const SegMask>(v));
    };
    LossBatch<T> b;
    b.x_image = images(&PairSample::x);
    b.x_mask = masks(&PairSample::x);
    b.y_image = images(&PairSample::y);
    b.y_mask = masks(&PairSample::y);
    b.gt_zero = images(&PairSample::gt_zero);
    b.gt_plus90 = images(&PairSample::gt_plus90);
    b.gt_minus90 = images(&PairSample::gt_minus90);
    b.y_plus90_image = images(&PairSample::y_plus90);
    b.y_plus90_mask = masks(&PairSample::y_plus90);
    b.y_minus90_image = images(&PairSample::y_minus90);
    b.y_minus90_mask = masks(&PairSample::y_minus90);
    b.feat_noise = Tensor<T>({static_cast<int>(pairs.size()), ModelConfig::kIllumDims});
    for (auto& v : b.feat_noise.values())
        v = static_cast<T>(rng.normal());
    return b;
}

/// Per-step random stream; a pure function of (seed, step) so a resumed run
/// draws the same pairs and noise as an uninterrupted one.
inline Rng step_rng(std::uint64_t seed, std::int64_t step)
{
    return Rng(derive_seed(seed, {0x73746570ULL, static_cast<std::uint64_t>(step)}));
}

inline constexpr const char* kLossCsvHeader = "step,recon,relight,auglight,feat,cons,total";

inline std::string loss_csv_row(std::int64_t step, const LossValues& v)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<long long>(step), v.recon, v.relight, v.auglight,
        v.feat, v.cons, v.total);
    return buf;
}

inline constexpr const char* kCheckpointFormat = "relight-checkpoint";
inline const std::string kAdamFirstPrefix = "adam.m/";
inline const std::string kAdamSecondPrefix = "adam.v/";

/// Training configuration stored in a checkpoint.
inline TrainingConfig checkpoint_training_config(const Checkpoint& c)
{
    if (c.config.value("format", std::string()) != kCheckpointFormat || !c.config.contains("training"))
        throw CheckpointMismatch("checkpoint config does not describe a relighting model");
    try {
        TrainingConfig cfg = c.config.at("training").get<TrainingConfig>();
        cfg.validate();
        return cfg;
    } catch (const ConfigError& e) {
        throw CheckpointMismatch(std::string("checkpoint config is invalid: ") + e.what());
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointMismatch(std::string("checkpoint config is malformed: ") + e.what());
    }
}

template <class T>
void load_parameters(ParameterSet<T>& params, const Checkpoint& c)
{
    for (auto& p : params) {
        const NamedArray& a = c.at(p.name);
        if (a.shape != p.value.shape())
            throw CheckpointMismatch("array " + p.name + " has shape " + shape_string(a.shape) + ", model expects " + shape_string(p.value.shape()));
        p.value = a.to<T>();
    }
}

/// Float model rebuilt from a checkpoint's configuration and arrays.
inline RelightModel<float> load_model(const Checkpoint& c)
{
    RelightModel<float> m(checkpoint_training_config(c).model_config());
    load_parameters(m.params(), c);
    return m;
}

struct StepResult {
    std::int64_t step = 0;
    LossValues losses;
};

/// One training run over an in-memory split: forward, backward and Adam
/// update per step, in single precision.
class Trainer {
public:
    Trainer(TrainingConfig cfg, const SceneStore& data)
        : cfg_(std::move(cfg)), data_(&data), model_((cfg_.validate(), cfg_.model_config())), adam_(model_.params(), cfg_.learning_rate)
    {
        check_data();
    }

    /// Continues a run from a checkpoint: same configuration, parameters,
    /// optimizer moments and step counter.
    Trainer(const Checkpoint& c, const SceneStore& data)
        : cfg_(checkpoint_training_config(c)), data_(&data), model_(cfg_.model_config()), adam_(model_.params(), cfg_.learning_rate)
    {
        load_parameters(model_.params(), c);
        std::size_t k = 0;
        for (const auto& p : model_.params()) {
            adam_.first_moments()[k] = c.at(kAdamFirstPrefix + p.name).to<float>();
            adam_.second_moments()[k] = c.at(kAdamSecondPrefix + p.name).to<float>();
            if (adam_.first_moments()[k].shape() != p.value.shape() || adam_.second_moments()[k].shape() != p.value.shape())
                throw CheckpointMismatch("optimizer state for " + p.name + " does not match the parameter shape");
            ++k;
        }
        adam_.set_steps(c.step);
        step_ = c.step;
        check_data();
    }

    const TrainingConfig& config() const noexcept { return cfg_; }
    const RelightModel<float>& model() const noexcept { return model_; }
    std::int64_t step_count() const noexcept { return step_; }
    std::int64_t total_steps() const { return cfg_.total_steps(data_->size()); }

    /// Losses of the batch that step `step` (1-based) draws, without updating.
    LossValues evaluate_step_batch(std::int64_t step) const
    {
        Rng rng = step_rng(cfg_.seed, step);
        const auto batch = draw_batch(rng);
        Tape<float> t(false);
        return compute_losses(t, model_, batch, cfg_.weights, cfg_.loss_flags()).values(t);
    }

    StepResult step()
    {
        const std::int64_t next = step_ + 1;
        Rng rng = step_rng(cfg_.seed, next);
        std::vector<PairSample> pairs;
        const auto batch = draw_batch(rng, &pairs);
        Tape<float> t;
        const LossVars vars = compute_losses(t, model_, batch, cfg_.weights, cfg_.loss_flags());
        const LossValues values = vars.values(t);
        if (!std::isfinite(values.total))
            throw NumericError(nan_diagnostic(next, pairs, values));
        model_.params().zero_grad();
        t.backward(vars.total);
        adam_.step(model_.params());
        step_ = next;
        return {step_, values};
    }

    Checkpoint checkpoint() const
    {
        Checkpoint c;
        c.config = nlohmann::ordered_json{{"format", kCheckpointFormat}, {"training", cfg_}};
        c.step = step_;
        for (const auto& p : model_.params())
            c.arrays.push_back(NamedArray::from(p.name, p.value));
        std::size_t k = 0;
        for (const auto& p : model_.params()) {
            c.arrays.push_back(NamedArray::from(kAdamFirstPrefix + p.name, adam_.first_moments()[k]));
            c.arrays.push_back(NamedArray::from(kAdamSecondPrefix + p.name, adam_.second_moments()[k]));
            ++k;
        }
        return c;
    }

private:
    void check_data() const
    {
        detail::require(data_->size() > 0, "training data is empty");
        detail::require(data_->manifest().resolution == cfg_.model.resolution,
            "dataset resolution " + std::to_string(data_->manifest().resolution) + " does not match model resolution " +
                std::to_string(cfg_.model.resolution));
    }

    LossBatch<float> draw_batch(Rng& rng, std::vector<PairSample>* out = nullptr) const
    {
        std::vector<PairSample> pairs;
        for (int i = 0; i < cfg_.batch_size; ++i)
            pairs.push_back(sample_pair(*data_, rng));
        auto b = assemble_batch<float>(*data_, pairs, rng);
        if (out)
            *out = std::move(pairs);
        return b;
    }

    std::string nan_diagnostic(std::int64_t step, const std::vector<PairSample>& pairs, const LossValues& v) const
    {
        nlohmann::ordered_json j;
        j["step"] = step;
        j["losses"] = {{"recon", v.recon}, {"relight", v.relight}, {"auglight", v.auglight}, {"feat", v.feat}, {"cons", v.cons}, {"total", v.total}};
        for (const auto& p : pairs) {
            const auto& x = data_->record(p.x);
            const auto& y = data_->record(p.y);
            j["pairs"].push_back({{"source", x.image}, {"target", y.image}, {"ground_truth", data_->record(p.gt_zero).image}});
        }
        return "non-finite loss at step " + std::to_string(step) + ": " + j.dump();
    }

    TrainingConfig cfg_;
    const SceneStore* data_;
    RelightModel<float> model_;
    Adam<float> adam_;
    std::int64_t step_ = 0;
};

struct TrainOptions {
    std::ostream* log = nullptr;                  ///< CSV loss log (header written when starting at step 0)
    std::filesystem::path checkpoint_path;        ///< final (and periodic) checkpoint, if non-empty
    std::filesystem::path nan_dump_path;          ///< diagnostic JSON written before aborting on a non-finite loss
    std::function<void(const StepResult&)> on_step;
};

/// Runs the trainer to its configured step count.
inline void run_training(Trainer& trainer, const TrainOptions& opt = {})
{
    if (opt.log && trainer.step_count() == 0)
        *opt.log << kLossCsvHeader << '\n';
    const std::int64_t total = trainer.total_steps();
    const std::int64_t every = trainer.config().checkpoint_every;
    while (trainer.step_count() < total) {
        StepResult r;
        try {
            r = trainer.step();
        } catch (const NumericError& e) {
            if (!opt.nan_dump_path.empty()) {
                std::ofstream os(opt.nan_dump_path);
                os << e.what() << '\n';
            }
            throw;
        }
        if (opt.log)
            *opt.log << loss_csv_row(r.step, r.losses) << '\n';
        if (opt.on_step)
            opt.on_step(r);
        if (every > 0 && !opt.checkpoint_path.empty() && r.step % every == 0 && r.step < total)
            trainer.checkpoint().save(opt.checkpoint_path);
    }
    if (opt.log)
        opt.log->flush();
    if (!opt.checkpoint_path.empty())
        trainer.checkpoint().save(opt.checkpoint_path);
}

} // namespace relight

#endif // RELIGHT_TRAINING_HPP
