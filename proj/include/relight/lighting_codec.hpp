#ifndef RELIGHT_LIGHTING_CODEC_HPP
#define RELIGHT_LIGHTING_CODEC_HPP

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "relight/backbone/layers.hpp"
#include "relight/model_config.hpp"

namespace relight {

/// The three heads of the overcomplete lighting representation. The value is
/// the rotation (degrees) of the environment the head's code stands for.
enum class Anchor : int { kPlus90 = 0, kZero = 1, kMinus90 = 2 };

inline constexpr std::array<Anchor, 3> kAnchors{Anchor::kPlus90, Anchor::kZero, Anchor::kMinus90};

inline int anchor_degrees(Anchor a) { return 90 - 90 * static_cast<int>(a); }

/// A single flat lighting code.
using LightingCode = std::vector<double>;

/// Anchor codes [l^90, l^0, l^-90] for one image.
struct OT3Codes {
    LightingCode plus90;
    LightingCode zero;
    LightingCode minus90;

    const LightingCode& operator[](Anchor a) const
    {
        return a == Anchor::kPlus90 ? plus90 : (a == Anchor::kZero ? zero : minus90);
    }
};

/// Shared MLP trunk (ReLU) followed by one fully connected head per anchor.
template <class T>
class LightingDecoder {
public:
    /// Scale applied to the Kaiming init of the heads so that initial codes
    /// stay close to their bias (identity modulation).
    static constexpr double kHeadInitScale = 0.1;

    LightingDecoder() = default;

    LightingDecoder(LayerFactory<T>& f, const ModelConfig& cfg)
    {
        int in = ModelConfig::kIllumDims;
        for (int i = 0; i < cfg.trunk_layers; ++i) {
            trunk_.push_back(Linear<T>::make(f, "decoder.trunk" + std::to_string(i), in, cfg.trunk_width));
            in = cfg.trunk_width;
        }
        const int dim = cfg.code_dim();
        const int c = cfg.subject_channels;
        static constexpr std::array<const char*, 3> names{"decoder.head_p90", "decoder.head_0", "decoder.head_m90"};
        for (int a = 0; a < 3; ++a) {
            if (!cfg.ot3 && a != static_cast<int>(Anchor::kZero))
                continue;
            Linear<T> head;
            head.weight = &f.normal(std::string(names[a]) + ".weight", {dim, in}, kHeadInitScale * std::sqrt(kInitGain / in));
            // Multiplicative sub-codes start at one so modulation begins as identity.
            Tensor<T> bias({dim}, T(0));
            if (cfg.mode == RenderMode::kMnr) {
                for (int k = 0; k < ModelConfig::kRenderLayers; ++k)
                    for (int j = 0; j < c; ++j)
                        bias[static_cast<std::size_t>(2 * k * c + j)] = T(1);
            } else if (cfg.mode == RenderMode::kMul) {
                bias.fill(T(1));
            }
            head.bias = &f.constant(std::string(names[a]) + ".bias", {dim}, 0.0);
            head.bias->value = std::move(bias);
            heads_[a] = head;
        }
    }

    bool has_head(Anchor a) const { return heads_[static_cast<int>(a)].weight != nullptr; }

    const Linear<T>& head_layer(Anchor a) const
    {
        detail::require(has_head(a), "lighting decoder has no head for this anchor (single-code model)");
        return heads_[static_cast<int>(a)];
    }

    Var trunk(Tape<T>& t, Var illum) const
    {
        Var h = illum;
        for (const auto& layer : trunk_)
            h = ops::relu(t, layer(t, h));
        return h;
    }

    Var head(Tape<T>& t, Var trunk_out, Anchor a) const { return head_layer(a)(t, trunk_out); }

private:
    std::vector<Linear<T>> trunk_;
    std::array<Linear<T>, 3> heads_{};
};

/// Sub-code slices of layer k (1-based): (mul, add), each `channels` long.
template <class Code>
auto partition(const Code& code, int layer, int channels)
{
    detail::require(layer >= 1 && layer <= ModelConfig::kRenderLayers, "partition: layer index must be in 1..4");
    detail::require(code.size() == static_cast<std::size_t>(2 * ModelConfig::kRenderLayers * channels),
        "partition: code length must be 8 * channels");
    using Elem = std::remove_const_t<std::remove_reference_t<decltype(*code.data())>>;
    std::span<const Elem> all(code.data(), code.size());
    const std::size_t off = static_cast<std::size_t>(layer - 1) * 2 * channels;
    return std::pair{all.subspan(off, channels), all.subspan(off + channels, channels)};
}

/// A fully connected head y = W h + b in double precision.
struct LinearHead {
    Eigen::MatrixXd weight;
    Eigen::VectorXd bias;

    template <class T>
    static LinearHead from(const Linear<T>& layer)
    {
        const int out = layer.out_features(), in = layer.in_features();
        LinearHead h{Eigen::MatrixXd(out, in), Eigen::VectorXd(out)};
        for (int r = 0; r < out; ++r) {
            for (int c = 0; c < in; ++c)
                h.weight(r, c) = static_cast<double>(layer.weight->value[static_cast<std::size_t>(r) * in + c]);
            h.bias(r) = static_cast<double>(layer.bias->value[static_cast<std::size_t>(r)]);
        }
        return h;
    }

    Eigen::VectorXd apply(const Eigen::VectorXd& h) const { return weight * h + bias; }
};

/// Heads needed to synthesize the -180 degree anchor.
struct DecoderHeads {
    LinearHead plus90;
    LinearHead zero;
    LinearHead minus90;
};

template <class T>
DecoderHeads decoder_heads(const LightingDecoder<T>& d)
{
    return {LinearHead::from(d.head_layer(Anchor::kPlus90)), LinearHead::from(d.head_layer(Anchor::kZero)),
        LinearHead::from(d.head_layer(Anchor::kMinus90))};
}

/// Which head is inverted to recover the trunk output of the -90 degree scene.
enum class PseudoAnchorInversion {
    kZeroHeadAtMinus90,  ///< solve fc_0(h') = l^-90 (default)
    kPlus90HeadAtZero,   ///< solve fc_90(h') = l^0
};

struct PseudoAnchorResult {
    LightingCode code;        ///< fc_-90(h'), the pseudo l^-180
    Eigen::VectorXd trunk;    ///< recovered h'
    double residual = 0.0;    ///< ||fc(h') - target||_2
};

inline constexpr double kPseudoAnchorDamping = 1e-8;
inline constexpr double kPseudoAnchorMinRcond = 1e-10;

/// Pseudo l^-180 by least-squares inversion of one decoder head.
///
/// For the scene rotated by -90 degrees the OT3 codes shift to
/// [l^0, l^-90, l^-180], so its trunk output h' satisfies fc_0(h') = l^-90
/// and fc_90(h') = l^0; the -90 head then yields l^-180. Solved through the
/// damped normal equations (W^T W + d I) h' = W^T (target - b).
inline PseudoAnchorResult pseudo_anchor_minus180(const OT3Codes& anchors, const DecoderHeads& heads,
    PseudoAnchorInversion variant = PseudoAnchorInversion::kZeroHeadAtMinus90)
{
    const bool zero_head = variant == PseudoAnchorInversion::kZeroHeadAtMinus90;
    const LinearHead& inverted = zero_head ? heads.zero : heads.plus90;
    const LightingCode& target_code = zero_head ? anchors.minus90 : anchors.zero;
    detail::require(static_cast<Eigen::Index>(target_code.size()) == inverted.weight.rows(),
        "pseudo anchor: code length does not match head output");

    const Eigen::VectorXd target = Eigen::Map<const Eigen::VectorXd>(target_code.data(), static_cast<Eigen::Index>(target_code.size()));
    const Eigen::MatrixXd& w = inverted.weight;
    const Eigen::Index n = w.cols();

    Eigen::MatrixXd gram = w.transpose() * w;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
    const double max_ev = eig.eigenvalues().maxCoeff();
    const double min_ev = eig.eigenvalues().minCoeff();
    const bool rank_ok = w.rows() >= n && max_ev > 0.0 && min_ev > kPseudoAnchorMinRcond * max_ev;

    gram.diagonal().array() += kPseudoAnchorDamping;
    const Eigen::VectorXd rhs = w.transpose() * (target - inverted.bias);
    Eigen::VectorXd h = gram.ldlt().solve(rhs);
    // One step of iterative refinement against the undamped system.
    h += gram.ldlt().solve(rhs - w.transpose() * (w * h));

    const double residual = (inverted.apply(h) - target).norm();
    if (!rank_ok)
        throw NumericError("pseudo anchor: inverted head is numerically rank deficient (eigenvalue ratio " +
            std::to_string(max_ev > 0 ? min_ev / max_ev : 0.0) + ", residual " + std::to_string(residual) + ")");

    const Eigen::VectorXd out = heads.minus90.apply(h);
    return {LightingCode(out.data(), out.data() + out.size()), h, residual};
}

/// Piecewise-linear code at `degrees` between the anchors at -180 (pseudo),
/// -90, 0, 90 and 180 (the pseudo anchor again). Angles wrap modulo 360.
/// Exact anchor angles return the anchor code unchanged.
inline LightingCode interpolate(const OT3Codes& anchors, const LightingCode& pseudo_minus180, double degrees)
{
    double a = std::fmod(degrees, 360.0);
    if (a > 180.0)
        a -= 360.0;
    if (a < -180.0)
        a += 360.0;
    const std::array<const LightingCode*, 5> knots{&pseudo_minus180, &anchors.minus90, &anchors.zero, &anchors.plus90, &pseudo_minus180};
    const double pos = (a + 180.0) / 90.0;
    int seg = static_cast<int>(std::floor(pos));
    if (seg >= 4)
        seg = 3;
    const double frac = pos - seg;
    const LightingCode& lo = *knots[static_cast<std::size_t>(seg)];
    const LightingCode& hi = *knots[static_cast<std::size_t>(seg) + 1];
    if (frac == 0.0)
        return lo;
    if (frac == 1.0)
        return hi;
    detail::require(lo.size() == hi.size(), "interpolate: anchor codes differ in length");
    LightingCode out(lo.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (1.0 - frac) * lo[i] + frac * hi[i];
    return out;
}

} // namespace relight

#endif // RELIGHT_LIGHTING_CODEC_HPP
