#ifndef RELIGHT_MODEL_CONFIG_HPP
#define RELIGHT_MODEL_CONFIG_HPP

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "relight/errors.hpp"

namespace relight {

/// How lighting codes are injected into subject features.
enum class RenderMode {
    kMnr,     ///< four channelwise (mul, add) modulations interleaved with residual blocks
    kConcat,  ///< code broadcast and concatenated to the subject features
    kMul,     ///< a single channelwise multiplication of the subject features
};

inline std::string to_string(RenderMode m)
{
    switch (m) {
    case RenderMode::kMnr: return "MNR";
    case RenderMode::kConcat: return "Concat";
    case RenderMode::kMul: return "Mul";
    }
    return "?";
}

inline RenderMode parse_render_mode(const std::string& s)
{
    if (s == "MNR" || s == "mnr")
        return RenderMode::kMnr;
    if (s == "Concat" || s == "concat")
        return RenderMode::kConcat;
    if (s == "Mul" || s == "mul")
        return RenderMode::kMul;
    throw ConfigError("unknown render mode '" + s + "' (expected MNR, Concat or Mul)");
}

/// Architecture of the encoders, lighting decoder and renderer.
struct ModelConfig {
    static constexpr int kRenderLayers = 4;
    static constexpr int kForegroundDims = 6;
    static constexpr int kBackgroundDims = 2;
    static constexpr int kIllumDims = kForegroundDims + kBackgroundDims;

    int resolution = 64;
    int subject_channels = 32;  // channels of the subject feature map
    int trunk_width = 64;       // hidden width of the lighting MLP
    int trunk_layers = 2;
    RenderMode mode = RenderMode::kMnr;
    bool ot3 = true;                 // three anchor heads instead of one
    bool background_encoder = true;  // false: one foreground encoder emits all 8 dims
    std::uint64_t seed = 1;

    /// 512x512 input, 128-channel features, 1024-dim codes.
    static ModelConfig full_scale()
    {
        ModelConfig c;
        c.resolution = 512;
        c.subject_channels = 128;
        return c;
    }

    int feature_size() const { return resolution / 4; }

    int code_dim() const
    {
        return mode == RenderMode::kMnr ? 2 * kRenderLayers * subject_channels : subject_channels;
    }

    int anchor_count() const { return ot3 ? 3 : 1; }

    int foreground_dims() const { return background_encoder ? kForegroundDims : kIllumDims; }

    void validate() const
    {
        detail::require(resolution >= 8 && resolution % 8 == 0, "resolution must be a positive multiple of 8");
        detail::require(subject_channels >= 4 && subject_channels % 4 == 0, "subject_channels must be a positive multiple of 4");
        detail::require(trunk_width >= kIllumDims, "trunk_width must be at least 8");
        detail::require(trunk_layers >= 1, "trunk_layers must be at least 1");
        detail::require(!ot3 || trunk_width <= code_dim(),
            "trunk_width " + std::to_string(trunk_width) + " exceeds the code dimension " + std::to_string(code_dim()) +
                "; the -180 degree anchor needs an invertible head");
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::ordered_json& j, const ModelConfig& c)
{
    j = nlohmann::ordered_json{
        {"resolution", c.resolution},
        {"subject_channels", c.subject_channels},
        {"trunk_width", c.trunk_width},
        {"trunk_layers", c.trunk_layers},
        {"mode", to_string(c.mode)},
        {"ot3", c.ot3},
        {"background_encoder", c.background_encoder},
        {"seed", c.seed},
    };
}

inline void from_json(const nlohmann::ordered_json& j, ModelConfig& c)
{
    c.resolution = j.value("resolution", c.resolution);
    c.subject_channels = j.value("subject_channels", c.subject_channels);
    c.trunk_width = j.value("trunk_width", c.trunk_width);
    c.trunk_layers = j.value("trunk_layers", c.trunk_layers);
    if (j.contains("mode"))
        c.mode = parse_render_mode(j.at("mode").get<std::string>());
    c.ot3 = j.value("ot3", c.ot3);
    c.background_encoder = j.value("background_encoder", c.background_encoder);
    c.seed = j.value("seed", c.seed);
}

} // namespace relight

#endif // RELIGHT_MODEL_CONFIG_HPP
