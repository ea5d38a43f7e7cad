#ifndef RELIGHT_MODEL_HPP
#define RELIGHT_MODEL_HPP

#include <array>
#include <optional>

#include "relight/encoders.hpp"
#include "relight/lighting_codec.hpp"
#include "relight/renderer.hpp"

namespace relight {

/// Anchor codes on a tape, with the shared trunk output. Missing heads
/// (single-code models) hold an invalid Var.
struct AnchorVars {
    Var trunk;
    std::array<Var, 3> codes{};

    Var operator[](Anchor a) const { return codes[static_cast<std::size_t>(a)]; }
};

/// E_s, E_f, E_b, the lighting decoder and the renderer, with every parameter
/// owned by one ParameterSet.
template <class T>
class RelightModel {
public:
    using Scalar = T;

    explicit RelightModel(const ModelConfig& cfg) : cfg_(cfg)
    {
        cfg_.validate();
        Rng rng(derive_seed(cfg_.seed, {0x696e6974ULL}));
        LayerFactory<T> f(params_, rng);
        const int c = cfg_.subject_channels;
        subject_ = SubjectEncoder<T>(f, cfg_);
        foreground_ = IlluminationEncoder<T>(f, "illum_fg", c, cfg_.foreground_dims());
        if (cfg_.background_encoder)
            background_ = IlluminationEncoder<T>(f, "illum_bg", c, ModelConfig::kBackgroundDims);
        decoder_ = LightingDecoder<T>(f, cfg_);
        renderer_ = NeuralRenderer<T>(f, cfg_);
    }

    RelightModel(const RelightModel&) = delete;
    RelightModel& operator=(const RelightModel&) = delete;
    RelightModel(RelightModel&&) noexcept = default;
    RelightModel& operator=(RelightModel&&) noexcept = default;

    const ModelConfig& config() const noexcept { return cfg_; }
    ParameterSet<T>& params() noexcept { return params_; }
    const ParameterSet<T>& params() const noexcept { return params_; }
    const LightingDecoder<T>& decoder() const noexcept { return decoder_; }
    const NeuralRenderer<T>& renderer() const noexcept { return renderer_; }

    /// s = E_s(I_f) for a masked foreground [N,3,R,R].
    Var encode_subject(Tape<T>& t, Var foreground) const
    {
        check_image(t, foreground, "encode_subject");
        return subject_(t, foreground);
    }

    /// i = (i_b, i_f) = (E_b(I * (1 - M)), E_f(I * M)), [N,8]. Without the
    /// background encoder E_f alone sees I * M and emits all 8 dims.
    Var encode_illumination(Tape<T>& t, const Tensor<T>& images, const Tensor<T>& masks) const
    {
        const Var fg = t.constant(apply_mask(images, masks));
        check_image(t, fg, "encode_illumination");
        const Var i_f = foreground_(t, fg);
        if (!cfg_.background_encoder)
            return i_f;
        const Var i_b = background_(t, t.constant(apply_mask(images, masks, true)));
        return ops::concat_features(t, i_b, i_f);
    }

    /// The i_f part of an illumination feature.
    Var foreground_part(Tape<T>& t, Var illum) const
    {
        return cfg_.background_encoder ? ops::slice_features(t, illum, ModelConfig::kBackgroundDims, ModelConfig::kForegroundDims) : illum;
    }

    /// E_f applied to an already-masked foreground.
    Var encode_foreground(Tape<T>& t, Var foreground) const { return foreground_(t, foreground); }

    /// Shared trunk followed by every available head.
    AnchorVars decode_ot3(Tape<T>& t, Var illum) const
    {
        AnchorVars a;
        a.trunk = decoder_.trunk(t, illum);
        for (Anchor k : kAnchors)
            if (decoder_.has_head(k))
                a.codes[static_cast<std::size_t>(k)] = decoder_.head(t, a.trunk, k);
        return a;
    }

    /// D^a(i) for a single anchor.
    Var decode(Tape<T>& t, Var illum, Anchor a) const { return decoder_.head(t, decoder_.trunk(t, illum), a); }

    Var render(Tape<T>& t, Var code, Var subject) const { return renderer_(t, code, subject); }

private:
    void check_image(Tape<T>& t, Var x, const char* op) const
    {
        const Shape& s = t.shape(x);
        detail::require(s.size() == 4 && s[1] == 3 && s[2] == cfg_.resolution && s[3] == cfg_.resolution,
            std::string(op) + ": expected [N,3," + std::to_string(cfg_.resolution) + "," + std::to_string(cfg_.resolution) +
                "] input, got " + shape_string(s));
    }

    ModelConfig cfg_;
    ParameterSet<T> params_;
    SubjectEncoder<T> subject_;
    IlluminationEncoder<T> foreground_;
    IlluminationEncoder<T> background_;
    LightingDecoder<T> decoder_;
    NeuralRenderer<T> renderer_;
};

} // namespace relight

#endif // RELIGHT_MODEL_HPP
