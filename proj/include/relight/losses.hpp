#ifndef RELIGHT_LOSSES_HPP
#define RELIGHT_LOSSES_HPP

#include <array>
#include <cmath>

#include "relight/imaging.hpp"
#include "relight/model.hpp"

namespace relight {

/// Weights of the auxiliary terms in the total loss.
struct LossWeights {
    double auglight = 0.5;
    double feat = 0.1;
    double cons = 0.25;

    void validate() const
    {
        detail::require(auglight >= 0 && feat >= 0 && cons >= 0, "loss weights must be non-negative");
    }

    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

/// Switches for the ablation runs. Single-code models (ot3 off) never use
/// the augmented-relighting or consistency terms.
struct LossFlags {
    bool auglight = true;
    bool feat = true;
    bool cons = true;
};

/// Mean absolute difference over masked pixels and all three channels.
inline double masked_l1(const PortraitImage& a, const PortraitImage& b, const SegMask& mask)
{
    detail::require(a.width() == b.width() && a.height() == b.height(), "masked_l1: image sizes differ");
    detail::require_same_size(a, mask.width(), mask.height(), "masked_l1");
    const double msum = mask.sum();
    detail::require(msum > 0, "masked_l1: mask is empty");
    double acc = 0.0;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < a.height(); ++y)
            for (int x = 0; x < a.width(); ++x)
                acc += mask.at(y, x) * std::abs(static_cast<double>(a.at(c, y, x)) - b.at(c, y, x));
    return acc / (3.0 * msum);
}

/// Everything one training step needs, as [N,...] tensors.
///
/// Rotated images are named by the environment rotation relative to the
/// unrotated scene: `gt_plus90` is subject x under environment y turned by +90
/// degrees, `y_plus90_image` is scene y itself turned by +90 degrees.
template <class T>
struct LossBatch {
    Tensor<T> x_image, x_mask;
    Tensor<T> y_image, y_mask;
    Tensor<T> gt_zero, gt_plus90, gt_minus90;
    Tensor<T> y_plus90_image, y_plus90_mask;
    Tensor<T> y_minus90_image, y_minus90_mask;
    Tensor<T> feat_noise;  ///< [N,8] illumination feature drawn from N(0, I)
};

/// Loss values read back from a tape. Disabled terms are zero.
struct LossValues {
    double recon = 0, relight = 0, auglight = 0, feat = 0, cons = 0, total = 0;
    std::array<double, 5> cons_terms{};
};

struct LossVars {
    Var recon, relight, auglight, feat, cons, total;
    std::array<Var, 5> cons_terms{};

    template <class T>
    LossValues values(const Tape<T>& t) const
    {
        auto read = [&](Var v) { return v.valid() ? static_cast<double>(t.value(v)[0]) : 0.0; };
        LossValues out{read(recon), read(relight), read(auglight), read(feat), read(cons), read(total), {}};
        for (std::size_t i = 0; i < cons_terms.size(); ++i)
            out.cons_terms[i] = read(cons_terms[i]);
        return out;
    }
};

/// Reconstruction: R(l^0_x, s_x) against I_x on M_x.
template <class Model, class T = typename Model::Scalar>
Var loss_recon(Tape<T>& t, const Model& m, Var subject_x, Var code_zero_x, const LossBatch<T>& b)
{
    return ops::masked_l1(t, m.render(t, code_zero_x, subject_x), t.constant(b.x_image), b.x_mask);
}

/// Main relighting: R(l^0_y, s_x) against I^0_{x,y} on M_x.
template <class Model, class T = typename Model::Scalar>
Var loss_relight(Tape<T>& t, const Model& m, Var subject_x, Var code_zero_y, const LossBatch<T>& b)
{
    return ops::masked_l1(t, m.render(t, code_zero_y, subject_x), t.constant(b.gt_zero), b.x_mask);
}

/// Augmented relighting: the +-90 anchors of y against the rotated ground truths.
template <class Model, class T = typename Model::Scalar>
Var loss_auglight(Tape<T>& t, const Model& m, Var subject_x, const AnchorVars& y, const LossBatch<T>& b)
{
    const Var plus = ops::masked_l1(t, m.render(t, y[Anchor::kPlus90], subject_x), t.constant(b.gt_plus90), b.x_mask);
    const Var minus = ops::masked_l1(t, m.render(t, y[Anchor::kMinus90], subject_x), t.constant(b.gt_minus90), b.x_mask);
    return ops::add(t, plus, minus);
}

/// Feature cycle: render s_x under D^0(noise), mask, re-encode, and compare
/// the subject feature and foreground illumination feature with their sources.
template <class Model, class T = typename Model::Scalar>
Var loss_feat(Tape<T>& t, const Model& m, Var subject_x, const LossBatch<T>& b)
{
    const Var noise = t.constant(b.feat_noise);
    const Var code = m.decode(t, noise, Anchor::kZero);
    const Var fake = ops::mask_multiply(t, m.render(t, code, subject_x), b.x_mask);
    const Var subject_cycle = ops::l1_mean(t, m.encode_subject(t, fake), subject_x);
    const Var illum_cycle = ops::l1_mean(t, m.encode_foreground(t, fake), m.foreground_part(t, noise));
    return ops::add(t, subject_cycle, illum_cycle);
}

/// The five overlap identities between the codes of I_y, I^90_y and I^-90_y:
///   l^90_y  = D^0(E_i(I^90_y)),    l^0_y = D^-90(E_i(I^90_y)),
///   l^0_y   = D^90(E_i(I^-90_y)),  l^-90_y = D^0(E_i(I^-90_y)),
///   D^-90(E_i(I^-90_y)) = D^90(E_i(I^90_y)).
template <class Model, class T = typename Model::Scalar>
std::array<Var, 5> loss_cons_terms(Tape<T>& t, const Model& m, const AnchorVars& y, const LossBatch<T>& b)
{
    const AnchorVars plus = m.decode_ot3(t, m.encode_illumination(t, b.y_plus90_image, b.y_plus90_mask));
    const AnchorVars minus = m.decode_ot3(t, m.encode_illumination(t, b.y_minus90_image, b.y_minus90_mask));
    return {
        ops::l1_mean(t, y[Anchor::kPlus90], plus[Anchor::kZero]),
        ops::l1_mean(t, y[Anchor::kZero], plus[Anchor::kMinus90]),
        ops::l1_mean(t, y[Anchor::kZero], minus[Anchor::kPlus90]),
        ops::l1_mean(t, y[Anchor::kMinus90], minus[Anchor::kZero]),
        ops::l1_mean(t, minus[Anchor::kMinus90], plus[Anchor::kPlus90]),
    };
}

template <class T>
Var sum_vars(Tape<T>& t, std::span<const Var> vars)
{
    detail::require(!vars.empty(), "sum_vars: nothing to sum");
    Var acc = vars.front();
    for (std::size_t i = 1; i < vars.size(); ++i)
        acc = ops::add(t, acc, vars[i]);
    return acc;
}

/// Forward pass of every enabled term and the weighted total
///   recon + relight + w.auglight * auglight + w.feat * feat + w.cons * cons.
template <class Model, class T = typename Model::Scalar>
LossVars compute_losses(Tape<T>& t, const Model& m, const LossBatch<T>& b, const LossWeights& w, const LossFlags& flags)
{
    w.validate();
    const bool ot3 = m.config().ot3;
    LossVars out;
    const Var subject_x = m.encode_subject(t, t.constant(apply_mask(b.x_image, b.x_mask)));
    const Var code_x = m.decode(t, m.encode_illumination(t, b.x_image, b.x_mask), Anchor::kZero);
    const AnchorVars y = m.decode_ot3(t, m.encode_illumination(t, b.y_image, b.y_mask));

    out.recon = loss_recon(t, m, subject_x, code_x, b);
    out.relight = loss_relight(t, m, subject_x, y[Anchor::kZero], b);
    Var total = ops::add(t, out.recon, out.relight);
    if (ot3 && flags.auglight) {
        out.auglight = loss_auglight(t, m, subject_x, y, b);
        total = ops::axpby(t, T(1), total, static_cast<T>(w.auglight), out.auglight);
    }
    if (flags.feat) {
        out.feat = loss_feat(t, m, subject_x, b);
        total = ops::axpby(t, T(1), total, static_cast<T>(w.feat), out.feat);
    }
    if (ot3 && flags.cons) {
        out.cons_terms = loss_cons_terms(t, m, y, b);
        out.cons = sum_vars<T>(t, out.cons_terms);
        total = ops::axpby(t, T(1), total, static_cast<T>(w.cons), out.cons);
    }
    out.total = total;
    return out;
}

} // namespace relight

#endif // RELIGHT_LOSSES_HPP
