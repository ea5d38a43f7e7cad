#ifndef RELIGHT_ENCODERS_HPP
#define RELIGHT_ENCODERS_HPP

#include <string>

#include "relight/backbone/layers.hpp"
#include "relight/model_config.hpp"

namespace relight {

/// E_s: masked foreground [N,3,R,R] -> subject feature [N,C,R/4,R/4].
///
/// 3x3 stem, two stride-2 4x4 convs, one residual block; instance norm and
/// ReLU after every conv.
template <class T>
class SubjectEncoder {
public:
    SubjectEncoder() = default;

    SubjectEncoder(LayerFactory<T>& f, const ModelConfig& cfg)
    {
        const int c = cfg.subject_channels;
        stem_ = Conv2d<T>::make(f, "subject.stem", 3, c / 2, 3, 1, 1);
        stem_norm_ = InstanceNorm<T>::make(f, "subject.stem_norm", c / 2);
        down1_ = Conv2d<T>::make(f, "subject.down1", c / 2, c, 4, 2, 1);
        down1_norm_ = InstanceNorm<T>::make(f, "subject.down1_norm", c);
        down2_ = Conv2d<T>::make(f, "subject.down2", c, c, 4, 2, 1);
        down2_norm_ = InstanceNorm<T>::make(f, "subject.down2_norm", c);
        block_ = ResidualBlock<T>::make(f, "subject.block", c, true);
    }

    Var operator()(Tape<T>& t, Var foreground) const
    {
        Var h = ops::relu(t, stem_norm_(t, stem_(t, foreground)));
        h = ops::relu(t, down1_norm_(t, down1_(t, h)));
        h = ops::relu(t, down2_norm_(t, down2_(t, h)));
        return block_(t, h);
    }

private:
    Conv2d<T> stem_, down1_, down2_;
    InstanceNorm<T> stem_norm_, down1_norm_, down2_norm_;
    ResidualBlock<T> block_;
};

/// E_f / E_b: image region [N,3,R,R] -> compressive illumination feature [N,out].
///
/// Three stride-2 convs with ReLU, global average pooling, one fully connected
/// layer. No normalization: absolute intensity and color are the signal here.
template <class T>
class IlluminationEncoder {
public:
    IlluminationEncoder() = default;

    IlluminationEncoder(LayerFactory<T>& f, const std::string& name, int subject_channels, int out_dims)
    {
        const int w1 = subject_channels / 4, w2 = subject_channels / 2, w3 = subject_channels;
        convs_[0] = Conv2d<T>::make(f, name + ".conv1", 3, w1, 4, 2, 1);
        convs_[1] = Conv2d<T>::make(f, name + ".conv2", w1, w2, 4, 2, 1);
        convs_[2] = Conv2d<T>::make(f, name + ".conv3", w2, w3, 4, 2, 1);
        fc_ = Linear<T>::make(f, name + ".fc", w3, out_dims);
    }

    int out_dims() const { return fc_.out_features(); }

    Var operator()(Tape<T>& t, Var region) const
    {
        Var h = region;
        for (const auto& conv : convs_)
            h = ops::relu(t, conv(t, h));
        return fc_(t, ops::global_avg_pool(t, h));
    }

private:
    std::array<Conv2d<T>, 3> convs_;
    Linear<T> fc_;
};

} // namespace relight

#endif // RELIGHT_ENCODERS_HPP
