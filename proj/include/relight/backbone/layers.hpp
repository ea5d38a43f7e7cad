#ifndef RELIGHT_BACKBONE_LAYERS_HPP
#define RELIGHT_BACKBONE_LAYERS_HPP

#include <cmath>
#include <deque>
#include <string>
#include <vector>

#include "relight/backbone/ops.hpp"
#include "relight/rng.hpp"

namespace relight {

/// Owns every parameter of a model in creation order. Element addresses are
/// stable, so layers keep plain pointers into the set.
template <class T>
class ParameterSet {
public:
    ParameterSet() = default;
    ParameterSet(const ParameterSet&) = delete;
    ParameterSet& operator=(const ParameterSet&) = delete;
    ParameterSet(ParameterSet&&) noexcept = default;
    ParameterSet& operator=(ParameterSet&&) noexcept = default;

    Parameter<T>& add(std::string name, Tensor<T> init)
    {
        for (const auto& p : params_)
            detail::require(p.name != name, "duplicate parameter name " + name);
        params_.emplace_back(std::move(name), std::move(init));
        return params_.back();
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    std::size_t size() const noexcept { return params_.size(); }

    Parameter<T>* find(const std::string& name)
    {
        for (auto& p : params_)
            if (p.name == name)
                return &p;
        return nullptr;
    }

    const Parameter<T>* find(const std::string& name) const { return const_cast<ParameterSet*>(this)->find(name); }

    std::size_t element_count() const
    {
        std::size_t n = 0;
        for (const auto& p : params_)
            n += p.value.size();
        return n;
    }

    void zero_grad()
    {
        for (auto& p : params_)
            p.zero_grad();
    }

private:
    std::deque<Parameter<T>> params_;
};

/// Kaiming-normal fan-in gain used for every conv and linear weight.
inline constexpr double kInitGain = 2.0;

/// Creates layers with seeded initialization. Values are drawn in double and
/// rounded to T, so float and double models built from one seed agree.
template <class T>
class LayerFactory {
public:
    LayerFactory(ParameterSet<T>& set, Rng& rng) : set_(set), rng_(rng) {}

    Parameter<T>& normal(const std::string& name, Shape shape, double stddev)
    {
        Tensor<T> v(shape);
        for (auto& x : v.values())
            x = static_cast<T>(stddev * rng_.normal());
        return set_.add(name, std::move(v));
    }

    Parameter<T>& constant(const std::string& name, Shape shape, double value)
    {
        return set_.add(name, Tensor<T>(std::move(shape), static_cast<T>(value)));
    }

    Parameter<T>& kaiming(const std::string& name, Shape shape, int fan_in, double scale = 1.0)
    {
        return normal(name, std::move(shape), scale * std::sqrt(kInitGain / fan_in));
    }

private:
    ParameterSet<T>& set_;
    Rng& rng_;
};

template <class T>
struct Conv2d {
    Parameter<T>* weight = nullptr;
    Parameter<T>* bias = nullptr;
    int stride = 1;
    int pad = 0;

    static Conv2d make(LayerFactory<T>& f, const std::string& name, int cin, int cout, int kernel, int stride, int pad,
        double init_scale = 1.0)
    {
        Conv2d c;
        c.weight = &f.kaiming(name + ".weight", {cout, cin, kernel, kernel}, cin * kernel * kernel, init_scale);
        c.bias = &f.constant(name + ".bias", {cout}, 0.0);
        c.stride = stride;
        c.pad = pad;
        return c;
    }

    Var operator()(Tape<T>& t, Var x) const
    {
        return ops::conv2d(t, x, t.param(*weight), t.param(*bias), stride, pad);
    }
};

template <class T>
struct ConvTranspose2d {
    Parameter<T>* weight = nullptr;
    Parameter<T>* bias = nullptr;
    int stride = 2;
    int pad = 1;

    static ConvTranspose2d make(LayerFactory<T>& f, const std::string& name, int cin, int cout, int kernel, int stride, int pad)
    {
        ConvTranspose2d c;
        // Each output pixel sees cin * (kernel/stride)^2 inputs.
        const int fan_in = std::max(1, cin * kernel * kernel / (stride * stride));
        c.weight = &f.kaiming(name + ".weight", {cin, cout, kernel, kernel}, fan_in);
        c.bias = &f.constant(name + ".bias", {cout}, 0.0);
        c.stride = stride;
        c.pad = pad;
        return c;
    }

    Var operator()(Tape<T>& t, Var x) const
    {
        return ops::conv_transpose2d(t, x, t.param(*weight), t.param(*bias), stride, pad);
    }
};

template <class T>
struct InstanceNorm {
    Parameter<T>* gamma = nullptr;
    Parameter<T>* beta = nullptr;

    static InstanceNorm make(LayerFactory<T>& f, const std::string& name, int channels)
    {
        return {&f.constant(name + ".gamma", {channels}, 1.0), &f.constant(name + ".beta", {channels}, 0.0)};
    }

    Var operator()(Tape<T>& t, Var x) const { return ops::instance_norm(t, x, t.param(*gamma), t.param(*beta)); }
};

template <class T>
struct Linear {
    Parameter<T>* weight = nullptr;
    Parameter<T>* bias = nullptr;

    static Linear make(LayerFactory<T>& f, const std::string& name, int in, int out)
    {
        return {&f.kaiming(name + ".weight", {out, in}, in), &f.constant(name + ".bias", {out}, 0.0)};
    }

    int in_features() const { return weight->value.dim(1); }
    int out_features() const { return weight->value.dim(0); }

    Var operator()(Tape<T>& t, Var x) const { return ops::linear(t, x, t.param(*weight), t.param(*bias)); }
};

/// Initial weight scale of the second conv in an unnormalized residual block.
inline constexpr double kResidualBranchScale = 0.1;

/// x + conv(relu(conv(x))) with 3x3 convs, optionally instance-normalized.
template <class T>
struct ResidualBlock {
    Conv2d<T> first;
    Conv2d<T> second;
    bool normalized = false;
    InstanceNorm<T> first_norm;
    InstanceNorm<T> second_norm;

    static ResidualBlock make(LayerFactory<T>& f, const std::string& name, int channels, bool normalized)
    {
        ResidualBlock r;
        r.first = Conv2d<T>::make(f, name + ".conv1", channels, channels, 3, 1, 1);
        if (normalized)
            r.first_norm = InstanceNorm<T>::make(f, name + ".norm1", channels);
        r.second = Conv2d<T>::make(f, name + ".conv2", channels, channels, 3, 1, 1, normalized ? 1.0 : kResidualBranchScale);
        if (normalized)
            r.second_norm = InstanceNorm<T>::make(f, name + ".norm2", channels);
        r.normalized = normalized;
        return r;
    }

    Var operator()(Tape<T>& t, Var x) const
    {
        Var h = first(t, x);
        if (normalized)
            h = first_norm(t, h);
        h = ops::relu(t, h);
        h = second(t, h);
        if (normalized)
            h = second_norm(t, h);
        return ops::add(t, x, h);
    }
};

} // namespace relight

#endif // RELIGHT_BACKBONE_LAYERS_HPP
