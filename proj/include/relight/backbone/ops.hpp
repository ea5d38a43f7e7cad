#ifndef RELIGHT_BACKBONE_OPS_HPP
#define RELIGHT_BACKBONE_OPS_HPP

#include <cmath>
#include <memory>
#include <vector>

#include <Eigen/Core>

#include "relight/backbone/tape.hpp"

// Differentiable ops on [N, C, H, W] feature maps and [N, D] vectors.
// Convolutions go through im2col plus an Eigen GEMM per batch item.

namespace relight::ops {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using MapConstMat = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
    int channels, height, width, kernel, stride, pad, out_h, out_w;
};

template <class T>
void im2col(const T* x, const ConvGeometry& g, T* cols)
{
    const int out_hw = g.out_h * g.out_w;
    for (int c = 0; c < g.channels; ++c) {
        for (int ki = 0; ki < g.kernel; ++ki) {
            for (int kj = 0; kj < g.kernel; ++kj) {
                T* row = cols + static_cast<std::size_t>((c * g.kernel + ki) * g.kernel + kj) * out_hw;
                for (int oh = 0; oh < g.out_h; ++oh) {
                    const int ih = oh * g.stride - g.pad + ki;
                    T* dst = row + oh * g.out_w;
                    if (ih < 0 || ih >= g.height) {
                        std::fill(dst, dst + g.out_w, T(0));
                        continue;
                    }
                    const T* src = x + (static_cast<std::size_t>(c) * g.height + ih) * g.width;
                    for (int ow = 0; ow < g.out_w; ++ow) {
                        const int iw = ow * g.stride - g.pad + kj;
                        dst[ow] = (iw >= 0 && iw < g.width) ? src[iw] : T(0);
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatters-and-adds columns back into `x`.
template <class T>
void col2im(const T* cols, const ConvGeometry& g, T* x)
{
    const int out_hw = g.out_h * g.out_w;
    for (int c = 0; c < g.channels; ++c) {
        for (int ki = 0; ki < g.kernel; ++ki) {
            for (int kj = 0; kj < g.kernel; ++kj) {
                const T* row = cols + static_cast<std::size_t>((c * g.kernel + ki) * g.kernel + kj) * out_hw;
                for (int oh = 0; oh < g.out_h; ++oh) {
                    const int ih = oh * g.stride - g.pad + ki;
                    if (ih < 0 || ih >= g.height)
                        continue;
                    T* dst = x + (static_cast<std::size_t>(c) * g.height + ih) * g.width;
                    const T* src = row + oh * g.out_w;
                    for (int ow = 0; ow < g.out_w; ++ow) {
                        const int iw = ow * g.stride - g.pad + kj;
                        if (iw >= 0 && iw < g.width)
                            dst[iw] += src[ow];
                    }
                }
            }
        }
    }
}

inline void require_shape(bool ok, const std::string& op, const Shape& got)
{
    relight::detail::require(ok, op + ": unexpected input shape " + shape_string(got));
}

} // namespace detail

/// 2-D convolution. x [N,Cin,H,W], weight [Cout,Cin,K,K], bias [Cout] (optional).
template <class T>
Var conv2d(Tape<T>& t, Var x, Var weight, Var bias, int stride, int pad)
{
    const Shape xs = t.shape(x);
    const Shape ws = t.shape(weight);
    detail::require_shape(xs.size() == 4 && ws.size() == 4 && ws[1] == xs[1] && ws[2] == ws[3], "conv2d", xs);
    const int n = xs[0], cout = ws[0], k = ws[2];
    const int out_h = (xs[2] + 2 * pad - k) / stride + 1;
    const int out_w = (xs[3] + 2 * pad - k) / stride + 1;
    detail::require_shape(out_h > 0 && out_w > 0, "conv2d", xs);
    if (bias.valid())
        detail::require_shape(t.shape(bias) == Shape{cout}, "conv2d bias", t.shape(bias));

    const detail::ConvGeometry g{xs[1], xs[2], xs[3], k, stride, pad, out_h, out_w};
    const int rows = g.channels * k * k;
    const int out_hw = out_h * out_w;
    const std::size_t in_stride = static_cast<std::size_t>(xs[1]) * xs[2] * xs[3];
    const std::size_t out_stride = static_cast<std::size_t>(cout) * out_hw;

    Tensor<T> out({n, cout, out_h, out_w});
    AlignedVector<T> cols(static_cast<std::size_t>(rows) * out_hw);
    detail::MapConstMat<T> wm(t.value(weight).data(), cout, rows);
    for (int b = 0; b < n; ++b) {
        detail::im2col(t.value(x).data() + b * in_stride, g, cols.data());
        detail::MapMat<T> om(out.data() + b * out_stride, cout, out_hw);
        om.noalias() = wm * detail::MapConstMat<T>(cols.data(), rows, out_hw);
        if (bias.valid()) {
            const T* bv = t.value(bias).data();
            for (int c = 0; c < cout; ++c)
                om.row(c).array() += bv[c];
        }
    }

    const int out_id = static_cast<int>(t.size());
    return t.record(std::move(out), {x, weight, bias},
        [=](Tape<T>& tp) {
            const Tensor<T>& gy = tp.grad(Var{out_id});
            AlignedVector<T> cbuf(static_cast<std::size_t>(rows) * out_hw);
            detail::MapConstMat<T> wmat(tp.value(weight).data(), cout, rows);
            for (int b = 0; b < n; ++b) {
                detail::MapConstMat<T> gm(gy.data() + b * out_stride, cout, out_hw);
                if (tp.requires_grad(weight)) {
                    detail::im2col(tp.value(x).data() + b * in_stride, g, cbuf.data());
                    detail::MapMat<T> gw(tp.grad(weight).data(), cout, rows);
                    gw.noalias() += gm * detail::MapConstMat<T>(cbuf.data(), rows, out_hw).transpose();
                }
                if (bias.valid() && tp.requires_grad(bias)) {
                    T* gb = tp.grad(bias).data();
                    for (int c = 0; c < cout; ++c) {
                        const T* row = gy.data() + b * out_stride + static_cast<std::size_t>(c) * out_hw;
                        T s = 0;
                        for (int i = 0; i < out_hw; ++i)
                            s += row[i];
                        gb[c] += s;
                    }
                }
                if (tp.requires_grad(x)) {
                    detail::MapMat<T> gc(cbuf.data(), rows, out_hw);
                    gc.noalias() = wmat.transpose() * gm;
                    detail::col2im(cbuf.data(), g, tp.grad(x).data() + b * in_stride);
                }
            }
        });
}

/// Transposed convolution. x [N,Cin,H,W], weight [Cin,Cout,K,K], bias [Cout].
/// Output size (H-1)*stride - 2*pad + K; kernel 4, stride 2, pad 1 doubles H and W.
template <class T>
Var conv_transpose2d(Tape<T>& t, Var x, Var weight, Var bias, int stride, int pad)
{
    const Shape xs = t.shape(x);
    const Shape ws = t.shape(weight);
    detail::require_shape(xs.size() == 4 && ws.size() == 4 && ws[0] == xs[1] && ws[2] == ws[3], "conv_transpose2d", xs);
    const int n = xs[0], cin = xs[1], cout = ws[1], k = ws[2];
    const int out_h = (xs[2] - 1) * stride - 2 * pad + k;
    const int out_w = (xs[3] - 1) * stride - 2 * pad + k;
    detail::require_shape(out_h > 0 && out_w > 0, "conv_transpose2d", xs);
    if (bias.valid())
        detail::require_shape(t.shape(bias) == Shape{cout}, "conv_transpose2d bias", t.shape(bias));

    // Geometry of the forward conv whose adjoint this is: output-sized image, input-sized columns.
    const detail::ConvGeometry g{cout, out_h, out_w, k, stride, pad, xs[2], xs[3]};
    const int rows = cout * k * k;
    const int in_hw = xs[2] * xs[3];
    const std::size_t in_stride = static_cast<std::size_t>(cin) * in_hw;
    const std::size_t out_stride = static_cast<std::size_t>(cout) * out_h * out_w;

    Tensor<T> out({n, cout, out_h, out_w});
    AlignedVector<T> cols(static_cast<std::size_t>(rows) * in_hw);
    detail::MapConstMat<T> wm(t.value(weight).data(), cin, rows);
    for (int b = 0; b < n; ++b) {
        detail::MapMat<T> cm(cols.data(), rows, in_hw);
        cm.noalias() = wm.transpose() * detail::MapConstMat<T>(t.value(x).data() + b * in_stride, cin, in_hw);
        T* ob = out.data() + b * out_stride;
        detail::col2im(cols.data(), g, ob);
        if (bias.valid()) {
            const T* bv = t.value(bias).data();
            const int plane = out_h * out_w;
            for (int c = 0; c < cout; ++c)
                for (int i = 0; i < plane; ++i)
                    ob[c * plane + i] += bv[c];
        }
    }

    const int out_id = static_cast<int>(t.size());
    return t.record(std::move(out), {x, weight, bias},
        [=](Tape<T>& tp) {
            const Tensor<T>& gy = tp.grad(Var{out_id});
            AlignedVector<T> cbuf(static_cast<std::size_t>(rows) * in_hw);
            detail::MapConstMat<T> wmat(tp.value(weight).data(), cin, rows);
            const int plane = out_h * out_w;
            for (int b = 0; b < n; ++b) {
                const T* gyb = gy.data() + b * out_stride;
                detail::im2col(gyb, g, cbuf.data());
                detail::MapConstMat<T> gc(cbuf.data(), rows, in_hw);
                if (tp.requires_grad(weight)) {
                    detail::MapMat<T> gw(tp.grad(weight).data(), cin, rows);
                    gw.noalias() += detail::MapConstMat<T>(tp.value(x).data() + b * in_stride, cin, in_hw) * gc.transpose();
                }
                if (tp.requires_grad(x)) {
                    detail::MapMat<T> gx(tp.grad(x).data() + b * in_stride, cin, in_hw);
                    gx.noalias() += wmat * gc;
                }
                if (bias.valid() && tp.requires_grad(bias)) {
                    T* gb = tp.grad(bias).data();
                    for (int c = 0; c < cout; ++c) {
                        T s = 0;
                        for (int i = 0; i < plane; ++i)
                            s += gyb[c * plane + i];
                        gb[c] += s;
                    }
                }
            }
        });
}

/// Per-sample, per-channel normalization over H*W with affine gamma/beta [C].
template <class T>
Var instance_norm(Tape<T>& t, Var x, Var gamma, Var beta, T eps = T(1e-5))
{
    const Shape xs = t.shape(x);
    detail::require_shape(xs.size() == 4 && t.shape(gamma) == Shape{xs[1]} && t.shape(beta) == Shape{xs[1]}, "instance_norm", xs);
    const int n = xs[0], c = xs[1], plane = xs[2] * xs[3];
    auto xhat = std::make_shared<std::vector<T>>(t.value(x).size());
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * c);
    Tensor<T> out(xs);
    const T* xv = t.value(x).data();
    const T* gv = t.value(gamma).data();
    const T* bv = t.value(beta).data();
    for (int i = 0; i < n * c; ++i) {
        const T* p = xv + static_cast<std::size_t>(i) * plane;
        T mean = 0;
        for (int k = 0; k < plane; ++k)
            mean += p[k];
        mean /= plane;
        T var = 0;
        for (int k = 0; k < plane; ++k)
            var += (p[k] - mean) * (p[k] - mean);
        var /= plane;
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        const int ch = i % c;
        for (int k = 0; k < plane; ++k) {
            const T h = (p[k] - mean) * is;
            (*xhat)[static_cast<std::size_t>(i) * plane + k] = h;
            out[static_cast<std::size_t>(i) * plane + k] = gv[ch] * h + bv[ch];
        }
    }
    const int out_id = static_cast<int>(t.size());
    return t.record(std::move(out), {x, gamma, beta}, [=](Tape<T>& tp) {
        const Tensor<T>& gy = tp.grad(Var{out_id});
        const T* gvals = tp.value(gamma).data();
        for (int i = 0; i < n * c; ++i) {
            const int ch = i % c;
            const std::size_t off = static_cast<std::size_t>(i) * plane;
            T sum_g = 0, sum_gh = 0;
            for (int k = 0; k < plane; ++k) {
                sum_g += gy[off + k];
                sum_gh += gy[off + k] * (*xhat)[off + k];
            }
            if (tp.requires_grad(gamma))
                tp.grad(gamma)[ch] += sum_gh;
            if (tp.requires_grad(beta))
                tp.grad(beta)[ch] += sum_g;
            if (tp.requires_grad(x)) {
                T* gx = tp.grad(x).data() + off;
                const T scale = gvals[ch] * (*inv_std)[i] / plane;
                for (int k = 0; k < plane; ++k)
                    gx[k] += scale * (plane * gy[off + k] - sum_g - (*xhat)[off + k] * sum_gh);
            }
        }
    });
}

template <class T>
Var relu(Tape<T>& t, Var x)
{
    Tensor<T> out(t.value(x));
    for (auto& v : out.values())
        v = v > T(0) ? v : T(0);
    const int out_id = static_cast<int>(t.size());
    return t.record(std::move(out), {x}, [=](Tape<T>& tp) {
        const Tensor<T>& gy = tp.grad(Var{out_id});
        const Tensor<T>& xv = tp.value(x);
        Tensor<T>& gx = tp.grad(x);
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (xv[i] > T(0))
                gx[i] += gy[i];
    });
}

/// (tanh(x) + 1) / 2, mapping activations to [0, 1].
template <class T>
Var tanh_unit(Tape<T>& t, Var x)
{
    Tensor<T> out(t.value(x));
    for (auto& v : out.values())
        v = (std::tanh(v) + T(1)) * T(0.5);
    const int out_id = static_cast<int>(t.size());
    return t.record(std::move(out), {x}, [=](Tape<T>& tp) {
        const Tensor<T>& gy = tp.grad(Var{out_id});
        const Tensor<T>& yv = tp.value(Var{out_id});
        Tensor<T>& gx = tp.grad(x);
        // y = (tanh + 1)/2  =>  dy/dx = (1 - tanh^2)/2 = 2 y (1 - y)
        for (std::size_t i = 0; i < gx.size(); ++i)
            gx[i] += gy[i] * T(2) * yv[i] * (T(1) - yv[i]);
    });
}

template <class T>
Var add(Tape<T>& t, Var a, Var b)
{
    detail::require_shape(t.shape(a) == t.shape(b), "add", t.shape(b));
    Tensor<T> out(t.value(a));
    const Tensor<T>& bv = t.value(b);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] += bv[i];
    const int out_id = static_cast<int>(t.size());
    return t.record(std::move(out), {a, b}, [=](Tape<T>& tp) {
        const Tensor<T>& gy = tp.grad(Var{out_id});
        for (Var v : {a, b}) {
            if (!tp.requires_grad(v))
                continue;
            Tensor<T>& g = tp.grad(v);
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += gy[i];
        }
    });
}

/// alpha * a + beta * b for same-shape inputs.
template <class T>
Var axpby(Tape<T>& t, T alpha, Var a, T beta, Var b)
{
    detail::require_shape(t.shape(a) == t.shape(b), "axpby", t.shape(b));
    Tensor<T> out(t.shape(a));
    const Tensor<T>& av = t.value(a);
    const Tensor<T>& bv = t.value(b);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = alpha * av[i] + beta * bv[i];
    const int out_id = static_cast<int>(t.size());
    return t.record(std::move(out), {a, b}, [=](Tape<T>& tp) {
        const Tensor<T>& gy = tp.grad(Var{out_id});
        if (tp.requires_grad(a)) {
            Tensor<T>& g = tp.grad(a);
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += alpha * gy[i];
        }
        if (tp.requires_grad(b)) {
            Tensor<T>& g = tp.grad(b);
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += beta * gy[i];
        }
    });
}

template <class T>
Var scale(Tape<T>& t, Var x, T alpha)
{
    Tensor<T> out(t.value(x));
    for (auto& v : out.values())
        v *= alpha;
    const int out_id = static_cast<int>(t.size());
    return t.record(std::move(out), {x}, [=](Tape<T>& tp) {
        const Tensor<T>& gy = tp.grad(Var{out_id});
        Tensor<T>& gx = tp.grad(x);
        for (std::size_t i = 0; i < gx.size(); ++i)
            gx[i] += alpha * gy[i];
    });
}

/// Channelwise affine modulation: out[n,c,h,w] = code[n, mul_offset + c] * x[n,c,h,w] + code[n, add_offset + c].
/// A negative add_offset drops the additive term.
template <class T>
Var modulate(Tape<T>& t, Var x, Var code, int mul_offset, int add_offset)
{
    const Shape xs = t.shape(x);
    const Shape cs = t.shape(code);
    detail::require_shape(xs.size() == 4 && cs.size() == 2 && cs[0] == xs[0], "modulate", cs);
    const int n = xs[0], c = xs[1], plane = xs[2] * xs[3], d = cs[1];
    detail::require_shape(mul_offset >= 0 && mul_offset + c <= d && add_offset + c <= d, "modulate (sub-code range)", cs);
    Tensor<T> out(xs);
    const T* xv = t.value(x).data();
    const T* cv = t.value(code).data();
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch) {
            const T m = cv[b * d + mul_offset + ch];
            const T a = add_offset >= 0 ? cv[b * d + add_offset + ch] : T(0);
            const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
            for (int k = 0; k < plane; ++k)
                out[off + k] = m * xv[off + k] + a;
        }
    const int out_id = static_cast<int>(t.size());
    return t.record(std::move(out), {x, code}, [=](Tape<T>& tp) {
        const Tensor<T>& gy = tp.grad(Var{out_id});
        const T* xval = tp.value(x).data();
        const T* cval = tp.value(code).data();
        for (int b = 0; b < n; ++b)
            for (int ch = 0; ch < c; ++ch) {
                const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
                if (tp.requires_grad(code)) {
                    T gm = 0, ga = 0;
                    for (int k = 0; k < plane; ++k) {
                        gm += gy[off + k] * xval[off + k];
                        ga += gy[off + k];
                    }
                    Tensor<T>& gc = tp.grad(code);
                    gc[b * d + mul_offset + ch] += gm;
                    if (add_offset >= 0)
                        gc[b * d + add_offset + ch] += ga;
                }
                if (tp.requires_grad(x)) {
                    const T m = cval[b * d + mul_offset + ch];
                    T* gx = tp.grad(x).data() + off;
                    for (int k = 0; k < plane; ++k)
                        gx[k] += m * gy[off + k];
                }
            }
    });
}

/// Mean over H*W: [N,C,H,W] -> [N,C].
template <class T>
Var global_avg_pool(Tape<T>& t, Var x)
{
    const Shape xs = t.shape(x);
    detail::require_shape(xs.size() == 4, "global_avg_pool", xs);
    const int n = xs[0], c = xs[1], plane = xs[2] * xs[3];
    Tensor<T> out({n, c});
    const T* xv = t.value(x).data();
    for (int i = 0; i < n * c; ++i) {
        T s = 0;
        for (int k = 0; k < plane; ++k)
            s += xv[static_cast<std::size_t>(i) * plane + k];
        out[i] = s / plane;
    }
    const int out_id = static_cast<int>(t.size());
    return t.record(std::move(out), {x}, [=](Tape<T>& tp) {
        const Tensor<T>& gy = tp.grad(Var{out_id});
        Tensor<T>& gx = tp.grad(x);
        for (int i = 0; i < n * c; ++i) {
            const T g = gy[i] / plane;
            for (int k = 0; k < plane; ++k)
                gx[static_cast<std::size_t>(i) * plane + k] += g;
        }
    });
}

/// y = x W^T + b with x [N,in], weight [out,in], bias [out] (optional).
template <class T>
Var linear(Tape<T>& t, Var x, Var weight, Var bias)
{
    const Shape xs = t.shape(x);
    const Shape ws = t.shape(weight);
    detail::require_shape(xs.size() == 2 && ws.size() == 2 && ws[1] == xs[1], "linear", xs);
    const int n = xs[0], in = xs[1], outd = ws[0];
    if (bias.valid())
        detail::require_shape(t.shape(bias) == Shape{outd}, "linear bias", t.shape(bias));
    Tensor<T> out({n, outd});
    detail::MapMat<T> om(out.data(), n, outd);
    om.noalias() = detail::MapConstMat<T>(t.value(x).data(), n, in) * detail::MapConstMat<T>(t.value(weight).data(), outd, in).transpose();
    if (bias.valid()) {
        const T* bv = t.value(bias).data();
        for (int b = 0; b < n; ++b)
            for (int j = 0; j < outd; ++j)
                out[static_cast<std::size_t>(b) * outd + j] += bv[j];
    }
    const int out_id = static_cast<int>(t.size());
    return t.record(std::move(out), {x, weight, bias}, [=](Tape<T>& tp) {
        detail::MapConstMat<T> gy(tp.grad(Var{out_id}).data(), n, outd);
        if (tp.requires_grad(x)) {
            detail::MapMat<T> gx(tp.grad(x).data(), n, in);
            gx.noalias() += gy * detail::MapConstMat<T>(tp.value(weight).data(), outd, in);
        }
        if (tp.requires_grad(weight)) {
            detail::MapMat<T> gw(tp.grad(weight).data(), outd, in);
            gw.noalias() += gy.transpose() * detail::MapConstMat<T>(tp.value(x).data(), n, in);
        }
        if (bias.valid() && tp.requires_grad(bias)) {
            T* gb = tp.grad(bias).data();
            for (int b = 0; b < n; ++b)
                for (int j = 0; j < outd; ++j)
                    gb[j] += gy(b, j);
        }
    });
}

/// [N,p] ++ [N,q] -> [N,p+q].
template <class T>
Var concat_features(Tape<T>& t, Var a, Var b)
{
    const Shape as = t.shape(a), bs = t.shape(b);
    detail::require_shape(as.size() == 2 && bs.size() == 2 && as[0] == bs[0], "concat_features", bs);
    const int n = as[0], p = as[1], q = bs[1];
    Tensor<T> out({n, p + q});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j)
            out[static_cast<std::size_t>(i) * (p + q) + j] = t.value(a)[static_cast<std::size_t>(i) * p + j];
        for (int j = 0; j < q; ++j)
            out[static_cast<std::size_t>(i) * (p + q) + p + j] = t.value(b)[static_cast<std::size_t>(i) * q + j];
    }
    const int out_id = static_cast<int>(t.size());
    return t.record(std::move(out), {a, b}, [=](Tape<T>& tp) {
        const Tensor<T>& gy = tp.grad(Var{out_id});
        for (int i = 0; i < n; ++i) {
            if (tp.requires_grad(a))
                for (int j = 0; j < p; ++j)
                    tp.grad(a)[static_cast<std::size_t>(i) * p + j] += gy[static_cast<std::size_t>(i) * (p + q) + j];
            if (tp.requires_grad(b))
                for (int j = 0; j < q; ++j)
                    tp.grad(b)[static_cast<std::size_t>(i) * q + j] += gy[static_cast<std::size_t>(i) * (p + q) + p + j];
        }
    });
}

/// Columns [offset, offset+len) of a [N,D] array.
template <class T>
Var slice_features(Tape<T>& t, Var x, int offset, int len)
{
    const Shape xs = t.shape(x);
    detail::require_shape(xs.size() == 2 && offset >= 0 && len > 0 && offset + len <= xs[1], "slice_features", xs);
    const int n = xs[0], d = xs[1];
    Tensor<T> out({n, len});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < len; ++j)
            out[static_cast<std::size_t>(i) * len + j] = t.value(x)[static_cast<std::size_t>(i) * d + offset + j];
    const int out_id = static_cast<int>(t.size());
    return t.record(std::move(out), {x}, [=](Tape<T>& tp) {
        const Tensor<T>& gy = tp.grad(Var{out_id});
        Tensor<T>& gx = tp.grad(x);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < len; ++j)
                gx[static_cast<std::size_t>(i) * d + offset + j] += gy[static_cast<std::size_t>(i) * len + j];
    });
}

/// Broadcasts v [N,D] over H*W and appends it to s [N,C,H,W] along channels.
template <class T>
Var concat_broadcast(Tape<T>& t, Var s, Var v)
{
    const Shape ss = t.shape(s), vs = t.shape(v);
    detail::require_shape(ss.size() == 4 && vs.size() == 2 && vs[0] == ss[0], "concat_broadcast", vs);
    const int n = ss[0], c = ss[1], d = vs[1], plane = ss[2] * ss[3];
    Tensor<T> out({n, c + d, ss[2], ss[3]});
    for (int b = 0; b < n; ++b) {
        const T* src = t.value(s).data() + static_cast<std::size_t>(b) * c * plane;
        T* dst = out.data() + static_cast<std::size_t>(b) * (c + d) * plane;
        std::copy(src, src + static_cast<std::size_t>(c) * plane, dst);
        for (int j = 0; j < d; ++j)
            std::fill(dst + static_cast<std::size_t>(c + j) * plane, dst + static_cast<std::size_t>(c + j + 1) * plane,
                t.value(v)[static_cast<std::size_t>(b) * d + j]);
    }
    const int out_id = static_cast<int>(t.size());
    return t.record(std::move(out), {s, v}, [=](Tape<T>& tp) {
        const Tensor<T>& gy = tp.grad(Var{out_id});
        for (int b = 0; b < n; ++b) {
            const T* g = gy.data() + static_cast<std::size_t>(b) * (c + d) * plane;
            if (tp.requires_grad(s)) {
                T* gs = tp.grad(s).data() + static_cast<std::size_t>(b) * c * plane;
                for (std::size_t i = 0; i < static_cast<std::size_t>(c) * plane; ++i)
                    gs[i] += g[i];
            }
            if (tp.requires_grad(v)) {
                for (int j = 0; j < d; ++j) {
                    T acc = 0;
                    for (int k = 0; k < plane; ++k)
                        acc += g[static_cast<std::size_t>(c + j) * plane + k];
                    tp.grad(v)[static_cast<std::size_t>(b) * d + j] += acc;
                }
            }
        }
    });
}

/// x [N,C,H,W] times a constant mask [N,1,H,W] broadcast over channels.
template <class T>
Var mask_multiply(Tape<T>& t, Var x, const Tensor<T>& mask)
{
    const Shape xs = t.shape(x);
    detail::require_shape(xs.size() == 4 && mask.shape() == Shape{xs[0], 1, xs[2], xs[3]}, "mask_multiply", mask.shape());
    const int n = xs[0], c = xs[1], plane = xs[2] * xs[3];
    Tensor<T> out(xs);
    auto m = std::make_shared<Tensor<T>>(mask);
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch)
            for (int k = 0; k < plane; ++k) {
                const std::size_t i = (static_cast<std::size_t>(b) * c + ch) * plane + k;
                out[i] = t.value(x)[i] * (*m)[static_cast<std::size_t>(b) * plane + k];
            }
    const int out_id = static_cast<int>(t.size());
    return t.record(std::move(out), {x}, [=](Tape<T>& tp) {
        const Tensor<T>& gy = tp.grad(Var{out_id});
        Tensor<T>& gx = tp.grad(x);
        for (int b = 0; b < n; ++b)
            for (int ch = 0; ch < c; ++ch)
                for (int k = 0; k < plane; ++k) {
                    const std::size_t i = (static_cast<std::size_t>(b) * c + ch) * plane + k;
                    gx[i] += gy[i] * (*m)[static_cast<std::size_t>(b) * plane + k];
                }
    });
}

/// Mask-weighted mean absolute difference of [N,C,H,W] arrays, normalized per
/// sample by C * sum(mask) and averaged over the batch. Returns a [1] scalar.
template <class T>
Var masked_l1(Tape<T>& t, Var a, Var b, const Tensor<T>& mask)
{
    const Shape as = t.shape(a);
    detail::require_shape(as.size() == 4 && t.shape(b) == as && mask.shape() == Shape{as[0], 1, as[2], as[3]}, "masked_l1", mask.shape());
    const int n = as[0], c = as[1], plane = as[2] * as[3];
    auto norm = std::make_shared<std::vector<T>>(n);
    for (int s = 0; s < n; ++s) {
        T msum = 0;
        for (int k = 0; k < plane; ++k)
            msum += mask[static_cast<std::size_t>(s) * plane + k];
        if (!(msum > T(0)))
            throw ConfigError("masked_l1: empty mask");
        (*norm)[s] = T(1) / (static_cast<T>(c) * msum * static_cast<T>(n));
    }
    auto m = std::make_shared<Tensor<T>>(mask);
    T total = 0;
    const T* av = t.value(a).data();
    const T* bv = t.value(b).data();
    for (int s = 0; s < n; ++s) {
        T acc = 0;
        for (int ch = 0; ch < c; ++ch)
            for (int k = 0; k < plane; ++k) {
                const std::size_t i = (static_cast<std::size_t>(s) * c + ch) * plane + k;
                acc += (*m)[static_cast<std::size_t>(s) * plane + k] * std::abs(av[i] - bv[i]);
            }
        total += acc * (*norm)[s];
    }
    const int out_id = static_cast<int>(t.size());
    return t.record(Tensor<T>({1}, total), {a, b}, [=](Tape<T>& tp) {
        const T g = tp.grad(Var{out_id})[0];
        const T* aval = tp.value(a).data();
        const T* bval = tp.value(b).data();
        for (int s = 0; s < n; ++s)
            for (int ch = 0; ch < c; ++ch)
                for (int k = 0; k < plane; ++k) {
                    const std::size_t i = (static_cast<std::size_t>(s) * c + ch) * plane + k;
                    const T diff = aval[i] - bval[i];
                    const T sgn = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
                    const T w = g * (*norm)[s] * (*m)[static_cast<std::size_t>(s) * plane + k] * sgn;
                    if (tp.requires_grad(a))
                        tp.grad(a)[i] += w;
                    if (tp.requires_grad(b))
                        tp.grad(b)[i] -= w;
                }
    });
}

/// Mean absolute difference over all elements. Returns a [1] scalar.
template <class T>
Var l1_mean(Tape<T>& t, Var a, Var b)
{
    detail::require_shape(t.shape(a) == t.shape(b), "l1_mean", t.shape(b));
    const std::size_t count = t.value(a).size();
    T total = 0;
    for (std::size_t i = 0; i < count; ++i)
        total += std::abs(t.value(a)[i] - t.value(b)[i]);
    total /= static_cast<T>(count);
    const int out_id = static_cast<int>(t.size());
    return t.record(Tensor<T>({1}, total), {a, b}, [=](Tape<T>& tp) {
        const T g = tp.grad(Var{out_id})[0] / static_cast<T>(count);
        for (std::size_t i = 0; i < count; ++i) {
            const T diff = tp.value(a)[i] - tp.value(b)[i];
            const T sgn = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
            if (tp.requires_grad(a))
                tp.grad(a)[i] += g * sgn;
            if (tp.requires_grad(b))
                tp.grad(b)[i] -= g * sgn;
        }
    });
}

/// Sum of x * weights over all elements, for reducing arbitrary outputs to a scalar.
template <class T>
Var dot_constant(Tape<T>& t, Var x, const Tensor<T>& weights)
{
    detail::require_shape(t.shape(x) == weights.shape(), "dot_constant", weights.shape());
    auto w = std::make_shared<Tensor<T>>(weights);
    T s = 0;
    for (std::size_t i = 0; i < w->size(); ++i)
        s += t.value(x)[i] * (*w)[i];
    const int out_id = static_cast<int>(t.size());
    return t.record(Tensor<T>({1}, s), {x}, [=](Tape<T>& tp) {
        const T g = tp.grad(Var{out_id})[0];
        Tensor<T>& gx = tp.grad(x);
        for (std::size_t i = 0; i < gx.size(); ++i)
            gx[i] += g * (*w)[i];
    });
}

} // namespace relight::ops

#endif // RELIGHT_BACKBONE_OPS_HPP
