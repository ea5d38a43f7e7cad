// relight: dataset generation, training, inference and evaluation.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "relight/relight.hpp"

namespace fs = std::filesystem;
using namespace relight;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kIo = 3, kNumeric = 4, kCheckpoint = 5 };

constexpr const char* kDataRootEnv = "RELIGHT_DATA_ROOT";

std::string default_data_root()
{
    if (const char* v = std::getenv(kDataRootEnv); v && *v)
        return v;
    return "data";
}

/// Accepts either a split directory (with manifest.json) or a dataset root
/// holding `<split>/manifest.json`.
fs::path resolve_split(const fs::path& dir, const std::string& split)
{
    if (fs::exists(dir / "manifest.json"))
        return dir;
    if (fs::exists(dir / split / "manifest.json"))
        return dir / split;
    throw IoError("no manifest.json in " + dir.string() + " or " + (dir / split).string());
}

std::vector<double> parse_angles(const std::string& s)
{
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty())
            continue;
        std::size_t used = 0;
        double v = 0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size())
            throw ConfigError("invalid angle '" + item + "'");
        out.push_back(v);
    }
    detail::require(!out.empty(), "no angles given");
    return out;
}

std::vector<int> parse_ids(const std::string& s)
{
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty())
            out.push_back(std::stoi(item));
    return out;
}

std::vector<std::string> parse_names(const std::string& s)
{
    if (s == "all")
        return ablation_names();
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty())
            out.push_back(item);
    detail::require(!out.empty(), "no ablation variants given");
    return out;
}

nlohmann::ordered_json read_config_file(const std::string& path)
{
    if (path.empty())
        return nlohmann::ordered_json::object();
    std::ifstream is(path);
    if (!is)
        throw IoError("cannot open config file " + path);
    try {
        return nlohmann::ordered_json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
}

std::string angle_label(double a)
{
    std::ostringstream os;
    os << a;
    return os.str();
}

struct Images {
    PortraitImage source, target;
    SegMask source_mask, target_mask;
};

struct InferenceArgs {
    std::string ckpt, source, source_mask, target, target_mask;
    bool no_composite = false;
    std::string inversion = "zero";

    void add_to(CLI::App* cmd)
    {
        cmd->add_option("--ckpt", ckpt, "Trained checkpoint")->required();
        cmd->add_option("--source", source, "Source portrait (PNG)")->required();
        cmd->add_option("--source-mask", source_mask, "Source subject mask (PNG)")->required();
        cmd->add_option("--target", target, "Target portrait providing the lighting (PNG)")->required();
        cmd->add_option("--target-mask", target_mask, "Target subject mask (PNG)")->required();
        cmd->add_flag("--no-composite", no_composite, "Write the raw renderer output instead of compositing over the target background");
        cmd->add_option("--inversion", inversion, "Head inverted for the -180 degree anchor: zero (fc_0 at l^-90) or plus90 (fc_90 at l^0)")
            ->check(CLI::IsMember({"zero", "plus90"}));
    }

    Images load() const
    {
        return {read_image(source), read_image(target), read_mask(source_mask), read_mask(target_mask)};
    }

    RelightOptions options() const
    {
        RelightOptions o;
        o.composite = !no_composite;
        o.inversion = inversion == "plus90" ? PseudoAnchorInversion::kPlus90HeadAtZero : PseudoAnchorInversion::kZeroHeadAtMinus90;
        return o;
    }
};

int fail(ExitCode code, const std::string& kind, const std::string& message)
{
    nlohmann::json msg = message;
    std::cerr << "error kind=" << kind << " code=" << code << " message=" << msg.dump() << '\n';
    return code;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Portrait relighting: synthetic data, training, relighting and evaluation"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "JSON file with \"training\" and/or \"dataset\" sections; flags override it");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Render the synthetic train/test dataset");
    std::string gen_out = default_data_root();
    DatasetConfig dcfg;
    gen->add_option("--out", gen_out, "Output root (train/ and test/ are created)")->capture_default_str();
    auto* o_subjects = gen->add_option("--subjects", dcfg.subjects, "Training subjects")->check(CLI::PositiveNumber);
    auto* o_envs = gen->add_option("--envs", dcfg.envs, "Training environments")->check(CLI::PositiveNumber);
    auto* o_tsub = gen->add_option("--test-subjects", dcfg.test_subjects, "Held-out subjects (0 disables the test split)")->check(CLI::NonNegativeNumber);
    auto* o_tenv = gen->add_option("--test-envs", dcfg.test_envs, "Held-out environments")->check(CLI::NonNegativeNumber);
    auto* o_res = gen->add_option("--res", dcfg.resolution, "Image resolution")->check(CLI::PositiveNumber);
    auto* o_envw = gen->add_option("--env-width", dcfg.env_width, "Environment map width (height is half)")->check(CLI::PositiveNumber);
    std::uint64_t gen_seed = 1;
    auto* o_gseed = gen->add_option("--seed", gen_seed, "Dataset seed");

    // train
    auto* train = app.add_subcommand("train", "Train a model on a generated split");
    std::string train_data = default_data_root(), train_out, train_log, resume_path, subset_subjects, subset_envs;
    std::string mode_name;
    std::int64_t steps = 0, checkpoint_every = 0;
    int epochs = 0, batch = 0, channels = 0;
    double lr = 0;
    std::uint64_t train_seed = 1;
    bool no_ot3 = false, no_bg = false, no_feat = false, no_cons = false, desk = false, quiet = false;
    train->add_option("--data", train_data, "Dataset root or train split directory")->capture_default_str();
    train->add_option("--out", train_out, "Checkpoint path")->required();
    train->add_option("--log", train_log, "Loss CSV (default: <out>.csv)");
    auto* o_steps = train->add_option("--steps", steps, "Optimization steps (overrides --epochs)")->check(CLI::PositiveNumber);
    auto* o_epochs = train->add_option("--epochs", epochs, "Epochs over the split")->check(CLI::NonNegativeNumber);
    auto* o_batch = train->add_option("--batch", batch, "Batch size")->check(CLI::PositiveNumber);
    auto* o_lr = train->add_option("--lr", lr, "Adam learning rate")->check(CLI::PositiveNumber);
    auto* o_channels = train->add_option("--channels", channels, "Subject feature channels C_s")->check(CLI::PositiveNumber);
    auto* o_mode = train->add_option("--mode", mode_name, "Renderer: MNR, Concat or Mul")->check(CLI::IsMember({"MNR", "Concat", "Mul"}));
    auto* o_tseed = train->add_option("--seed", train_seed, "Run seed");
    auto* o_every = train->add_option("--checkpoint-every", checkpoint_every, "Write the checkpoint every N steps")->check(CLI::NonNegativeNumber);
    train->add_flag("--no-ot3", no_ot3, "Single lighting code (disables L_auglight and L_cons)");
    train->add_flag("--no-bg", no_bg, "No background encoder; E_f emits all 8 dims");
    train->add_flag("--no-feat", no_feat, "Disable L_feat");
    train->add_flag("--no-cons", no_cons, "Disable L_cons");
    train->add_flag("--desk", desk, "Start from the single-core preset (lr 5e-4, 2000 steps)");
    train->add_option("--resume", resume_path, "Continue from this checkpoint (configuration flags are ignored)");
    train->add_option("--subset-subjects", subset_subjects, "Train only on these subject ids (comma-separated)");
    train->add_option("--subset-envs", subset_envs, "Train only on these environment ids (comma-separated)");
    train->add_flag("--quiet", quiet, "No progress output");

    // relight
    auto* relight_cmd = app.add_subcommand("relight", "Relight a source portrait with a target's lighting");
    InferenceArgs rargs;
    rargs.add_to(relight_cmd);
    std::string relight_out;
    std::optional<double> relight_angle;
    relight_cmd->add_option("--out", relight_out, "Output PNG")->required();
    relight_cmd->add_option("--angle", relight_angle, "Rotate the target lighting by this many degrees");

    // rotate
    auto* rotate = app.add_subcommand("rotate", "Render the source under rotated target lighting");
    InferenceArgs oargs;
    oargs.add_to(rotate);
    std::string angles_text, rotate_dir;
    int sweep_step = 0;
    auto* o_angles = rotate->add_option("--angles", angles_text, "Comma-separated angles in degrees");
    auto* o_sweep = rotate->add_option("--sweep", sweep_step, "Full turn in steps of this many degrees, starting at -180")->check(CLI::Range(1, 360));
    o_angles->excludes(o_sweep);
    rotate->add_option("--out-dir", rotate_dir, "Output directory")->required();

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a held-out split");
    std::string eval_ckpt, eval_data = default_data_root(), eval_out, ablation_list, eval_train_data, strip_dir;
    bool sequential = false;
    std::uint64_t eval_seed = 1;
    std::size_t max_sources = 0;
    std::int64_t ablation_steps = 0;
    eval->add_option("--ckpt", eval_ckpt, "Trained checkpoint (also the base configuration for ablations)")->required();
    eval->add_option("--data", eval_data, "Dataset root or test split directory")->capture_default_str();
    eval->add_flag("--sequential", sequential, "Also run the 12-offset rotation protocol");
    eval->add_option("--ablation-table", ablation_list,
        "Train and evaluate variants: 'all' or a comma list of Full, w/o BG, w/o OT3, w/o L_feat, w/o L_cons, Concat, Mul");
    eval->add_option("--train-data", eval_train_data, "Training split for ablations (default: train/ next to the test split)");
    eval->add_option("--ablation-steps", ablation_steps, "Training steps per ablation variant (default: checkpoint's)")->check(CLI::PositiveNumber);
    eval->add_option("--out", eval_out, "Output CSV")->required();
    eval->add_option("--seed", eval_seed, "Evaluation seed (target sampling)");
    eval->add_option("--max-sources", max_sources, "Evaluate at most this many sources (0: all)");
    eval->add_option("--strips", strip_dir, "Write source | target | output | truth strips here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(kUsage, "usage", e.what());
    }

    try {
        const auto file_cfg = read_config_file(config_path);

        if (*gen) {
            if (file_cfg.contains("dataset"))
                dcfg = file_cfg.at("dataset").get<DatasetConfig>();
            // Explicit flags win over the file.
            if (o_subjects->count())
                dcfg.subjects = o_subjects->as<int>();
            if (o_envs->count())
                dcfg.envs = o_envs->as<int>();
            if (o_tsub->count())
                dcfg.test_subjects = o_tsub->as<int>();
            if (o_tenv->count())
                dcfg.test_envs = o_tenv->as<int>();
            if (o_res->count())
                dcfg.resolution = o_res->as<int>();
            if (o_envw->count())
                dcfg.env_width = o_envw->as<int>();
            if (o_gseed->count())
                dcfg.seed = gen_seed;
            const auto manifests = generate_dataset(dcfg, gen_out);
            for (const auto& m : manifests)
                std::cout << m.split << ": " << m.records.size() << " images in " << m.directory.string() << '\n';
            return kOk;
        }

        if (*train) {
            const fs::path split = resolve_split(train_data, "train");
            SceneStore store(load_manifest(split));
            if (!subset_subjects.empty() || !subset_envs.empty()) {
                const auto s = subset_subjects.empty() ? store.manifest().subject_ids : parse_ids(subset_subjects);
                const auto e = subset_envs.empty() ? store.manifest().env_ids : parse_ids(subset_envs);
                store = store.subset(s, e);
            }
            const std::string log_path = train_log.empty() ? train_out + ".csv" : train_log;
            std::optional<Trainer> trainer;
            if (!resume_path.empty()) {
                trainer.emplace(Checkpoint::load(resume_path), store);
            } else {
                TrainingConfig cfg = desk ? TrainingConfig::desk() : TrainingConfig{};
                if (file_cfg.contains("training"))
                    cfg = file_cfg.at("training").get<TrainingConfig>();
                cfg.model.resolution = store.manifest().resolution;
                if (o_steps->count())
                    cfg.steps = steps;
                if (o_epochs->count()) {
                    cfg.epochs = epochs;
                    if (!o_steps->count())
                        cfg.steps = 0;
                }
                if (o_batch->count())
                    cfg.batch_size = batch;
                if (o_lr->count())
                    cfg.learning_rate = lr;
                if (o_channels->count())
                    cfg.model.subject_channels = channels;
                if (o_mode->count())
                    cfg.model.mode = parse_render_mode(mode_name);
                if (o_tseed->count())
                    cfg.seed = train_seed;
                if (o_every->count())
                    cfg.checkpoint_every = checkpoint_every;
                if (no_ot3)
                    cfg.model.ot3 = false;
                if (no_bg)
                    cfg.model.background_encoder = false;
                if (no_feat)
                    cfg.feat = false;
                if (no_cons)
                    cfg.cons = false;
                cfg.validate();
                trainer.emplace(cfg, store);
            }
            std::ofstream log(log_path, trainer->step_count() == 0 ? std::ios::trunc : std::ios::app);
            if (!log)
                throw IoError("cannot write loss log " + log_path);
            TrainOptions opt;
            opt.log = &log;
            opt.checkpoint_path = train_out;
            opt.nan_dump_path = train_out + ".nan_dump.txt";
            const std::int64_t total = trainer->total_steps();
            if (!quiet)
                opt.on_step = [total](const StepResult& r) {
                    if (r.step % 50 == 0 || r.step == total)
                        std::cerr << "step " << r.step << '/' << total << " total " << r.losses.total << " relight " << r.losses.relight << '\n';
                };
            run_training(*trainer, opt);
            if (!log)
                throw IoError("failed writing loss log " + log_path);
            return kOk;
        }

        if (*relight_cmd) {
            const auto model = load_model(Checkpoint::load(rargs.ckpt));
            const Images im = rargs.load();
            RelightOptions opt = rargs.options();
            opt.angle = relight_angle;
            write_image(relight_out, Relighter<float>(model).relight(im.source, im.source_mask, im.target, im.target_mask, opt));
            return kOk;
        }

        if (*rotate) {
            detail::require(o_angles->count() || o_sweep->count(), "rotate needs --angles or --sweep");
            std::vector<double> angles;
            if (o_sweep->count()) {
                for (int a = -180; a < 180; a += sweep_step)
                    angles.push_back(a);
            } else {
                angles = parse_angles(angles_text);
            }
            const auto model = load_model(Checkpoint::load(oargs.ckpt));
            const Images im = oargs.load();
            const auto frames = Relighter<float>(model).sweep(im.source, im.source_mask, im.target, im.target_mask, angles, oargs.options());
            fs::create_directories(rotate_dir);
            for (std::size_t i = 0; i < frames.size(); ++i)
                write_image(fs::path(rotate_dir) / ("angle_" + angle_label(angles[i]) + ".png"), frames[i]);
            write_image(fs::path(rotate_dir) / "strip.png", hstack(frames));
            return kOk;
        }

        if (*eval) {
            const Checkpoint ckpt = Checkpoint::load(eval_ckpt);
            const fs::path test_split = resolve_split(eval_data, "test");
            const SceneStore test(load_manifest(test_split));
            EvalOptions opt;
            opt.seed = eval_seed;
            opt.max_sources = max_sources;
            opt.strip_dir = strip_dir;
            std::ofstream os(eval_out);
            if (!os)
                throw IoError("cannot write " + eval_out);
            if (!ablation_list.empty()) {
                TrainingConfig base = checkpoint_training_config(ckpt);
                if (ablation_steps > 0)
                    base.steps = ablation_steps;
                const fs::path train_split =
                    resolve_split(eval_train_data.empty() ? test_split.parent_path() / "train" : fs::path(eval_train_data), "train");
                const SceneStore train_store(load_manifest(train_split));
                std::vector<AblationVariant> variants;
                for (const auto& name : parse_names(ablation_list))
                    variants.push_back(make_ablation(name, base));
                write_ablation_csv(os, eval_ablations(variants, train_store, test, opt, [](const std::string& v, const StepResult& r) {
                    if (r.step % 200 == 0)
                        std::cerr << v << " step " << r.step << " relight " << r.losses.relight << '\n';
                }));
            } else {
                const auto model = load_model(ckpt);
                std::vector<std::pair<std::string, EvalReport>> reports{{"single", eval_single(model, test, opt)}};
                if (sequential)
                    reports.emplace_back("sequential", eval_sequential(model, test, opt).metrics);
                write_eval_csv(os, reports);
            }
            if (!os)
                throw IoError("failed writing " + eval_out);
            return kOk;
        }
    } catch (const CheckpointMismatch& e) {
        return fail(kCheckpoint, "checkpoint", e.what());
    } catch (const IoError& e) {
        return fail(kIo, "io", e.what());
    } catch (const NumericError& e) {
        return fail(kNumeric, "numeric", e.what());
    } catch (const ConfigError& e) {
        return fail(kUsage, "usage", e.what());
    } catch (const nlohmann::json::exception& e) {
        return fail(kUsage, "usage", e.what());
    } catch (const fs::filesystem_error& e) {
        return fail(kIo, "io", e.what());
    }
    return kOk;
}
