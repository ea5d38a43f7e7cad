#ifndef RELIGHT_RENDERER_HPP
#define RELIGHT_RENDERER_HPP

#include <array>
#include <string>

#include "relight/backbone/layers.hpp"
#include "relight/model_config.hpp"

namespace relight {

/// Initial weight scale of the output conv, so tanh starts near its linear range.
inline constexpr double kOutputInitScale = 0.1;

/// Neural renderer R(l, s): subject feature [N,C,F,F] and lighting code [N,D]
/// to an image [N,3,4F,4F] in [0,1].
///
/// All modes share four unnormalized residual blocks and the upsampling tail
/// (two 4x4 stride-2 transposed convs, a 3x3 conv, tanh mapped to [0,1]).
/// They differ only in where the code enters:
///   MNR    - before block k, x <- l^k_mul * x + l^k_add per channel
///   Concat - code broadcast over space and concatenated, then a 1x1 projection
///   Mul    - one channelwise multiplication of s by the code
template <class T>
class NeuralRenderer {
public:
    NeuralRenderer() = default;

    NeuralRenderer(LayerFactory<T>& f, const ModelConfig& cfg)
        : mode_(cfg.mode), channels_(cfg.subject_channels), code_dim_(cfg.code_dim())
    {
        const int c = channels_;
        if (mode_ == RenderMode::kConcat)
            projection_ = Conv2d<T>::make(f, "render.concat_proj", c + code_dim_, c, 1, 1, 0);
        for (int k = 0; k < ModelConfig::kRenderLayers; ++k)
            blocks_[static_cast<std::size_t>(k)] = ResidualBlock<T>::make(f, "render.block" + std::to_string(k + 1), c, false);
        up1_ = ConvTranspose2d<T>::make(f, "render.up1", c, c, 4, 2, 1);
        up2_ = ConvTranspose2d<T>::make(f, "render.up2", c, c / 2, 4, 2, 1);
        out_ = Conv2d<T>::make(f, "render.out", c / 2, 3, 3, 1, 1, kOutputInitScale);
    }

    RenderMode mode() const { return mode_; }
    int code_dim() const { return code_dim_; }

    /// Channels entering the first residual block's input (before projection for Concat).
    int input_channels() const { return mode_ == RenderMode::kConcat ? channels_ + code_dim_ : channels_; }

    /// Layer k (1-based): channelwise affine modulation then residual block.
    Var render_layer(Tape<T>& t, Var x, Var code, int k) const
    {
        detail::require(mode_ == RenderMode::kMnr, "render_layer is only defined for MNR");
        detail::require(k >= 1 && k <= ModelConfig::kRenderLayers, "render layer index must be in 1..4");
        const int off = (k - 1) * 2 * channels_;
        Var m = ops::modulate(t, x, code, off, off + channels_);
        return blocks_[static_cast<std::size_t>(k - 1)](t, m);
    }

    Var operator()(Tape<T>& t, Var code, Var subject) const
    {
        const Shape& ss = t.shape(subject);
        const Shape& cs = t.shape(code);
        detail::require(ss.size() == 4 && ss[1] == channels_, "render: subject feature has " +
            (ss.size() == 4 ? std::to_string(ss[1]) : std::string("?")) + " channels, expected " + std::to_string(channels_));
        detail::require(cs.size() == 2 && cs[1] == code_dim_ && cs[0] == ss[0],
            "render: lighting code shape " + shape_string(cs) + " does not match code dimension " + std::to_string(code_dim_));

        Var x = subject;
        switch (mode_) {
        case RenderMode::kMnr:
            for (int k = 1; k <= ModelConfig::kRenderLayers; ++k)
                x = render_layer(t, x, code, k);
            return tail(t, x);
        case RenderMode::kConcat:
            x = projection_(t, ops::concat_broadcast(t, x, code));
            break;
        case RenderMode::kMul:
            x = ops::modulate(t, x, code, 0, -1);
            break;
        }
        for (const auto& block : blocks_)
            x = block(t, x);
        return tail(t, x);
    }

    /// Upsampling tail shared by every mode.
    Var tail(Tape<T>& t, Var x) const
    {
        Var h = ops::relu(t, up1_(t, x));
        h = ops::relu(t, up2_(t, h));
        return ops::tanh_unit(t, out_(t, h));
    }

    /// Blocks followed by the tail, without any lighting injection.
    Var unlit(Tape<T>& t, Var x) const
    {
        for (const auto& block : blocks_)
            x = block(t, x);
        return tail(t, x);
    }

private:
    RenderMode mode_ = RenderMode::kMnr;
    int channels_ = 0;
    int code_dim_ = 0;
    Conv2d<T> projection_;
    std::array<ResidualBlock<T>, ModelConfig::kRenderLayers> blocks_;
    ConvTranspose2d<T> up1_, up2_;
    Conv2d<T> out_;
};

} // namespace relight

#endif // RELIGHT_RENDERER_HPP
