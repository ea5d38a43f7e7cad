#ifndef RELIGHT_INFERENCE_HPP
#define RELIGHT_INFERENCE_HPP

#include <cmath>
#include <optional>
#include <vector>

#include "relight/inpaint.hpp"
#include "relight/model.hpp"

namespace relight {

struct RelightOptions {
    std::optional<double> angle;  ///< environment rotation in degrees; none means the 0 degree code
    bool composite = true;        ///< paste the relit subject over the inpainted target background
    PseudoAnchorInversion inversion = PseudoAnchorInversion::kZeroHeadAtMinus90;
    int inpaint_radius = kDefaultInpaintRadius;
};

/// Read-only inference with a trained model, one image at a time.
template <class T>
class Relighter {
public:
    explicit Relighter(const RelightModel<T>& model) : model_(&model) {}

    const ModelConfig& config() const { return model_->config(); }

    /// s = E_s(I * M) as a [1,C,F,F] tensor.
    Tensor<T> subject_feature(const PortraitImage& image, const SegMask& mask) const
    {
        check(image, mask);
        Tape<T> t(false);
        const auto [img, msk] = single(image, mask);
        return t.value(model_->encode_subject(t, t.constant(apply_mask(img, msk))));
    }

    OT3Codes anchors(const PortraitImage& image, const SegMask& mask) const
    {
        check(image, mask);
        Tape<T> t(false);
        const auto [img, msk] = single(image, mask);
        const AnchorVars a = model_->decode_ot3(t, model_->encode_illumination(t, img, msk));
        auto read = [&](Anchor k) {
            if (!a[k].valid())
                return LightingCode{};
            const auto v = t.value(a[k]).values();
            return LightingCode(v.begin(), v.end());
        };
        return {read(Anchor::kPlus90), read(Anchor::kZero), read(Anchor::kMinus90)};
    }

    /// Pseudo -180 degree anchor from the decoder heads.
    LightingCode pseudo_anchor(const OT3Codes& anchors, PseudoAnchorInversion inversion = PseudoAnchorInversion::kZeroHeadAtMinus90) const
    {
        detail::require(config().ot3, "the -180 degree anchor needs a three-head lighting decoder");
        return pseudo_anchor_minus180(anchors, decoder_heads(model_->decoder()), inversion).code;
    }

    /// l^0 when no angle is given, otherwise the interpolated code.
    LightingCode code_at(const OT3Codes& anchors, std::optional<double> angle,
        PseudoAnchorInversion inversion = PseudoAnchorInversion::kZeroHeadAtMinus90) const
    {
        if (!angle)
            return anchors.zero;
        double a = std::fmod(*angle, 360.0);
        if (a > 180.0)
            a -= 360.0;
        if (a <= -180.0)
            a += 360.0;
        if (!config().ot3) {
            detail::require(a == 0.0, "a single-code model can only render the 0 degree lighting");
            return anchors.zero;
        }
        const bool on_anchor = a == 0.0 || a == 90.0 || a == -90.0;
        return interpolate(anchors, on_anchor ? LightingCode{} : pseudo_anchor(anchors, inversion), a);
    }

    /// Renderer output (full frame, no masking) for a subject feature and code.
    PortraitImage render(const Tensor<T>& subject, const LightingCode& code) const
    {
        detail::require(static_cast<int>(code.size()) == config().code_dim(), "lighting code length does not match the model");
        Tape<T> t(false);
        const int dim = static_cast<int>(code.size());
        const Var c = t.constant(Tensor<T>({1, dim}, std::vector<T>(code.begin(), code.end())));
        return image_from_tensor(t.value(model_->render(t, c, t.constant(subject))));
    }

    /// Relit source subject under the target's lighting (rotated by `angle`).
    PortraitImage relight(const PortraitImage& source, const SegMask& source_mask, const PortraitImage& target, const SegMask& target_mask,
        const RelightOptions& opt = {}) const
    {
        const Tensor<T> s = subject_feature(source, source_mask);
        const OT3Codes a = anchors(target, target_mask);
        const PortraitImage fg = render(s, code_at(a, opt.angle, opt.inversion));
        return finish(fg, source_mask, target, target_mask, opt);
    }

    /// Relit source at several angles, sharing the encoder passes.
    std::vector<PortraitImage> sweep(const PortraitImage& source, const SegMask& source_mask, const PortraitImage& target,
        const SegMask& target_mask, const std::vector<double>& angles, const RelightOptions& opt = {}) const
    {
        const Tensor<T> s = subject_feature(source, source_mask);
        const OT3Codes a = anchors(target, target_mask);
        std::optional<PortraitImage> background;
        std::vector<PortraitImage> out;
        for (double angle : angles) {
            const PortraitImage fg = render(s, code_at(a, angle, opt.inversion));
            if (!opt.composite) {
                out.push_back(fg);
                continue;
            }
            if (!background)
                background = inpaint_fast_marching(target, target_mask, opt.inpaint_radius);
            out.push_back(composite(fg, source_mask, *background));
        }
        return out;
    }

private:
    PortraitImage finish(const PortraitImage& fg, const SegMask& source_mask, const PortraitImage& target, const SegMask& target_mask,
        const RelightOptions& opt) const
    {
        if (!opt.composite)
            return fg;
        return composite(fg, source_mask, inpaint_fast_marching(target, target_mask, opt.inpaint_radius));
    }

    void check(const PortraitImage& image, const SegMask& mask) const
    {
        const int r = config().resolution;
        if (image.width() != r || image.height() != r)
            throw CheckpointMismatch("image is " + std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                " but the model expects " + std::to_string(r) + "x" + std::to_string(r));
        detail::require_same_size(image, mask.width(), mask.height(), "relight");
    }

    static std::pair<Tensor<T>, Tensor<T>> single(const PortraitImage& image, const SegMask& mask)
    {
        return {to_tensor<T>(std::span<const PortraitImage>(&image, 1)), to_tensor<T>(std::span<const SegMask>(&mask, 1))};
    }

    const RelightModel<T>* model_;
};

} // namespace relight

#endif // RELIGHT_INFERENCE_HPP
