#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <utility>

#include "styleplane/autodiff.hpp"

namespace styleplane::ops {

using styleplane::Node;
using styleplane::Tensor;
using styleplane::Var;

namespace detail {

template <class T>
Var<T> make_node(const char* name, Tensor<T> value, std::vector<Var<T>> parents) {
    bool req = false;
    for (const auto& p : parents) req = req || p.requires_grad();
    Var<T> out(std::move(value), req);
    out.node()->op = name;
    if (req) {
        auto& ps = out.node()->parents;
        ps.reserve(parents.size());
        for (auto& p : parents) ps.push_back(p.node());
    }
    return out;
}

template <class T>
void check_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
    if (!a.value().same_shape(b.value())) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.value().shape_str() +
                                    " vs " + b.value().shape_str());
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape("add", a, b);
    Tensor<T> v = a.value();
    const std::size_t n = v.numel();
    for (std::size_t i = 0; i < n; ++i) v[i] += b.value()[i];
    Var<T> out = detail::make_node("add", std::move(v), {a, b});
    if (out.requires_grad()) {
        auto* o = out.node().get();
        auto an = a.node(), bn = b.node();
        out.node()->backprop = [o, an, bn, n] {
            if (an->requires_grad) {
                auto& g = an->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) g[i] += o->grad[i];
            }
            if (bn->requires_grad) {
                auto& g = bn->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) g[i] += o->grad[i];
            }
        };
    }
    return out;
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape("sub", a, b);
    Tensor<T> v = a.value();
    const std::size_t n = v.numel();
    for (std::size_t i = 0; i < n; ++i) v[i] -= b.value()[i];
    Var<T> out = detail::make_node("sub", std::move(v), {a, b});
    if (out.requires_grad()) {
        auto* o = out.node().get();
        auto an = a.node(), bn = b.node();
        out.node()->backprop = [o, an, bn, n] {
            if (an->requires_grad) {
                auto& g = an->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) g[i] += o->grad[i];
            }
            if (bn->requires_grad) {
                auto& g = bn->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) g[i] -= o->grad[i];
            }
        };
    }
    return out;
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    detail::check_same_shape("mul", a, b);
    Tensor<T> v = a.value();
    const std::size_t n = v.numel();
    for (std::size_t i = 0; i < n; ++i) v[i] *= b.value()[i];
    Var<T> out = detail::make_node("mul", std::move(v), {a, b});
    if (out.requires_grad()) {
        auto* o = out.node().get();
        auto an = a.node(), bn = b.node();
        out.node()->backprop = [o, an, bn, n] {
            if (an->requires_grad) {
                auto& g = an->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) g[i] += o->grad[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                auto& g = bn->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) g[i] += o->grad[i] * an->value[i];
            }
        };
    }
    return out;
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> v = a.value();
    const std::size_t n = v.numel();
    for (std::size_t i = 0; i < n; ++i) v[i] *= s;
    Var<T> out = detail::make_node("scale", std::move(v), {a});
    if (out.requires_grad()) {
        auto* o = out.node().get();
        auto an = a.node();
        out.node()->backprop = [o, an, s, n] {
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) g[i] += o->grad[i] * s;
        };
    }
    return out;
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
    Tensor<T> v = a.value();
    for (auto& x : v.vec()) x += s;
    Var<T> out = detail::make_node("add_scalar", std::move(v), {a});
    if (out.requires_grad()) {
        auto* o = out.node().get();
        auto an = a.node();
        const std::size_t n = a.value().numel();
        out.node()->backprop = [o, an, n] {
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) g[i] += o->grad[i];
        };
    }
    return out;
}

template <class T>
Var<T> neg(const Var<T>& a) {
    return scale(a, T(-1));
}

namespace detail {

// unary op with derivative expressed in terms of input and output values
template <class T, class FwdFn, class DerivFn>
Var<T> unary(const char* name, const Var<T>& a, FwdFn&& f, DerivFn&& df) {
    Tensor<T> v = a.value();
    for (auto& x : v.vec()) x = f(x);
    Var<T> out = make_node(name, std::move(v), {a});
    if (out.requires_grad()) {
        auto* o = out.node().get();
        auto an = a.node();
        const std::size_t n = a.value().numel();
        auto d = std::forward<DerivFn>(df);
        out.node()->backprop = [o, an, n, d] {
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) g[i] += o->grad[i] * d(an->value[i], o->value[i]);
        };
    }
    return out;
}

}  // namespace detail

template <class T>
Var<T> vexp(const Var<T>& a) {
    return detail::unary("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Var<T> vabs(const Var<T>& a) {
    return detail::unary(
        "abs", a, [](T x) { return std::abs(x); },
        [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <class T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
    return detail::unary(
        "leaky_relu", a, [slope](T x) { return x >= T(0) ? x : slope * x; },
        [slope](T x, T) { return x >= T(0) ? T(1) : slope; });
}

template <class T>
Var<T> softplus(const Var<T>& a) {
    return detail::unary(
        "softplus", a,
        [](T x) { return x > T(20) ? x : static_cast<T>(std::log1p(std::exp(static_cast<double>(x)))); },
        [](T x, T) { return static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x)))); });
}

template <class T>
Var<T> vsigmoid(const Var<T>& a) {
    return detail::unary(
        "sigmoid", a, [](T x) { return static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x)))); },
        [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> vtanh(const Var<T>& a) {
    return detail::unary("tanh", a, [](T x) { return std::tanh(x); },
                         [](T, T y) { return T(1) - y * y; });
}

// ---------------------------------------------------------------------------
// reductions and reshapes
// ---------------------------------------------------------------------------

template <class T>
Var<T> sum(const Var<T>& a) {
    Tensor<T> v({1}, a.value().sum());
    Var<T> out = detail::make_node("sum", std::move(v), {a});
    if (out.requires_grad()) {
        auto* o = out.node().get();
        auto an = a.node();
        const std::size_t n = a.value().numel();
        out.node()->backprop = [o, an, n] {
            auto& g = an->ensure_grad();
            const T go = o->grad[0];
            for (std::size_t i = 0; i < n; ++i) g[i] += go;
        };
    }
    return out;
}

template <class T>
Var<T> mean(const Var<T>& a) {
    const T inv = T(1) / static_cast<T>(a.value().numel());
    return scale(sum(a), inv);
}

template <class T>
Var<T> reshape(const Var<T>& a, std::vector<int> shape) {
    Tensor<T> v = a.value().reshaped(shape);
    Var<T> out = detail::make_node("reshape", std::move(v), {a});
    if (out.requires_grad()) {
        auto* o = out.node().get();
        auto an = a.node();
        const std::size_t n = a.value().numel();
        out.node()->backprop = [o, an, n] {
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) g[i] += o->grad[i];
        };
    }
    return out;
}

// x: [C,H,W] -> [c1-c0,H,W]
template <class T>
Var<T> slice_channels(const Var<T>& x, int c0, int c1) {
    const auto& xs = x.value().shape();
    if (xs.size() != 3 || c0 < 0 || c1 > xs[0] || c0 >= c1) {
        throw std::invalid_argument("slice_channels: bad range [" + std::to_string(c0) + "," +
                                    std::to_string(c1) + ") for " + x.value().shape_str());
    }
    const int H = xs[1], W = xs[2];
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    Tensor<T> v({c1 - c0, H, W});
    std::copy(x.value().data() + c0 * plane, x.value().data() + c1 * plane, v.data());
    Var<T> out = detail::make_node("slice_channels", std::move(v), {x});
    if (out.requires_grad()) {
        auto* o = out.node().get();
        auto xn = x.node();
        const std::size_t cnt = static_cast<std::size_t>(c1 - c0) * plane;
        const std::size_t off = static_cast<std::size_t>(c0) * plane;
        out.node()->backprop = [o, xn, cnt, off] {
            auto& g = xn->ensure_grad();
            for (std::size_t i = 0; i < cnt; ++i) g[off + i] += o->grad[i];
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    const auto& as = a.value().shape();
    const auto& bs = b.value().shape();
    if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) {
        throw std::invalid_argument("matmul: incompatible shapes " + a.value().shape_str() + " x " +
                                    b.value().shape_str());
    }
    const int n = as[0], m = as[1], p = bs[1];
    Tensor<T> v({n, p});
    for (int i = 0; i < n; ++i) {
        const T* ar = a.value().data() + static_cast<std::size_t>(i) * m;
        T* vr = v.data() + static_cast<std::size_t>(i) * p;
        for (int k = 0; k < m; ++k) {
            const T av = ar[k];
            const T* br = b.value().data() + static_cast<std::size_t>(k) * p;
            for (int j = 0; j < p; ++j) vr[j] += av * br[j];
        }
    }
    Var<T> out = detail::make_node("matmul", std::move(v), {a, b});
    if (out.requires_grad()) {
        auto* o = out.node().get();
        auto an = a.node(), bn = b.node();
        out.node()->backprop = [o, an, bn, n, m, p] {
            if (an->requires_grad) {
                auto& ga = an->ensure_grad();
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < p; ++j) {
                        const T go = o->grad[static_cast<std::size_t>(i) * p + j];
                        const T* br = bn->value.data();
                        T* gr = ga.data() + static_cast<std::size_t>(i) * m;
                        for (int k = 0; k < m; ++k) gr[k] += go * br[static_cast<std::size_t>(k) * p + j];
                    }
            }
            if (bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                for (int i = 0; i < n; ++i) {
                    const T* ar = an->value.data() + static_cast<std::size_t>(i) * m;
                    const T* gor = o->grad.data() + static_cast<std::size_t>(i) * p;
                    for (int k = 0; k < m; ++k) {
                        T* gbr = gb.data() + static_cast<std::size_t>(k) * p;
                        const T av = ar[k];
                        for (int j = 0; j < p; ++j) gbr[j] += av * gor[j];
                    }
                }
            }
        };
    }
    return out;
}

// y = x W + b; x: [batch,in], W: [in,out], b: [out]
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& W, const Var<T>& b) {
    const auto& xs = x.value().shape();
    const auto& ws = W.value().shape();
    const auto& bs = b.value().shape();
    if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[0]) {
        throw std::invalid_argument("linear: incompatible shapes x=" + x.value().shape_str() +
                                    " W=" + W.value().shape_str());
    }
    if (bs.size() != 1 || bs[0] != ws[1]) {
        throw std::invalid_argument("linear: bias shape " + b.value().shape_str() + " does not match W=" +
                                    W.value().shape_str());
    }
    const int n = xs[0], m = xs[1], p = ws[1];
    Tensor<T> v({n, p});
    for (int i = 0; i < n; ++i) {
        T* vr = v.data() + static_cast<std::size_t>(i) * p;
        for (int j = 0; j < p; ++j) vr[j] = b.value()[j];
        const T* xr = x.value().data() + static_cast<std::size_t>(i) * m;
        for (int k = 0; k < m; ++k) {
            const T xv = xr[k];
            const T* wr = W.value().data() + static_cast<std::size_t>(k) * p;
            for (int j = 0; j < p; ++j) vr[j] += xv * wr[j];
        }
    }
    Var<T> out = detail::make_node("linear", std::move(v), {x, W, b});
    if (out.requires_grad()) {
        auto* o = out.node().get();
        auto xn = x.node(), wn = W.node(), bn = b.node();
        out.node()->backprop = [o, xn, wn, bn, n, m, p] {
            if (xn->requires_grad) {
                auto& gx = xn->ensure_grad();
                for (int i = 0; i < n; ++i) {
                    const T* gor = o->grad.data() + static_cast<std::size_t>(i) * p;
                    T* gr = gx.data() + static_cast<std::size_t>(i) * m;
                    for (int k = 0; k < m; ++k) {
                        const T* wr = wn->value.data() + static_cast<std::size_t>(k) * p;
                        T acc = 0;
                        for (int j = 0; j < p; ++j) acc += gor[j] * wr[j];
                        gr[k] += acc;
                    }
                }
            }
            if (wn->requires_grad) {
                auto& gw = wn->ensure_grad();
                for (int i = 0; i < n; ++i) {
                    const T* xr = xn->value.data() + static_cast<std::size_t>(i) * m;
                    const T* gor = o->grad.data() + static_cast<std::size_t>(i) * p;
                    for (int k = 0; k < m; ++k) {
                        T* gwr = gw.data() + static_cast<std::size_t>(k) * p;
                        const T xv = xr[k];
                        for (int j = 0; j < p; ++j) gwr[j] += xv * gor[j];
                    }
                }
            }
            if (bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                for (int i = 0; i < n; ++i) {
                    const T* gor = o->grad.data() + static_cast<std::size_t>(i) * p;
                    for (int j = 0; j < p; ++j) gb[j] += gor[j];
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// convolution (cross-correlation), x: [Ci,H,W], w: [Co,Ci,kh,kw], b: [Co]
// ---------------------------------------------------------------------------

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
    const auto& xs = x.value().shape();
    const auto& ws = w.value().shape();
    if (xs.size() != 3 || ws.size() != 4 || ws[1] != xs[0]) {
        throw std::invalid_argument("conv2d: incompatible shapes x=" + x.value().shape_str() +
                                    " w=" + w.value().shape_str());
    }
    if (b.value().rank() != 1 || b.value().dim(0) != ws[0]) {
        throw std::invalid_argument("conv2d: bias shape " + b.value().shape_str());
    }
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    const int Ci = xs[0], H = xs[1], W = xs[2];
    const int Co = ws[0], kh = ws[2], kw = ws[3];
    if (kh > H + 2 * pad || kw > W + 2 * pad) {
        throw std::invalid_argument("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                                    " larger than padded input");
    }
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;

    Tensor<T> v({Co, Ho, Wo});
    const T* xd = x.value().data();
    const T* wd = w.value().data();
    for (int co = 0; co < Co; ++co) {
        T* vplane = v.data() + static_cast<std::size_t>(co) * Ho * Wo;
        const T bias = b.value()[co];
        for (std::size_t i = 0; i < static_cast<std::size_t>(Ho) * Wo; ++i) vplane[i] = bias;
        for (int ci = 0; ci < Ci; ++ci) {
            const T* xplane = xd + static_cast<std::size_t>(ci) * H * W;
            const T* wk = wd + ((static_cast<std::size_t>(co) * Ci + ci) * kh) * kw;
            for (int dh = 0; dh < kh; ++dh) {
                for (int dw = 0; dw < kw; ++dw) {
                    const T wv = wk[dh * kw + dw];
                    if (wv == T(0)) continue;
                    for (int oh = 0; oh < Ho; ++oh) {
                        const int ih = oh * stride - pad + dh;
                        if (ih < 0 || ih >= H) continue;
                        const T* xrow = xplane + static_cast<std::size_t>(ih) * W;
                        T* vrow = vplane + static_cast<std::size_t>(oh) * Wo;
                        for (int ow = 0; ow < Wo; ++ow) {
                            const int iw = ow * stride - pad + dw;
                            if (iw < 0 || iw >= W) continue;
                            vrow[ow] += wv * xrow[iw];
                        }
                    }
                }
            }
        }
    }

    Var<T> out = detail::make_node("conv2d", std::move(v), {x, w, b});
    if (out.requires_grad()) {
        auto* o = out.node().get();
        auto xn = x.node(), wn = w.node(), bn = b.node();
        out.node()->backprop = [o, xn, wn, bn, Ci, H, W, Co, kh, kw, Ho, Wo, stride, pad] {
            const T* god = o->grad.data();
            if (bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                for (int co = 0; co < Co; ++co) {
                    const T* gp = god + static_cast<std::size_t>(co) * Ho * Wo;
                    T acc = 0;
                    for (std::size_t i = 0; i < static_cast<std::size_t>(Ho) * Wo; ++i) acc += gp[i];
                    gb[co] += acc;
                }
            }
            const bool need_x = xn->requires_grad;
            const bool need_w = wn->requires_grad;
            if (!need_x && !need_w) return;
            T* gx = need_x ? xn->ensure_grad().data() : nullptr;
            T* gw = need_w ? wn->ensure_grad().data() : nullptr;
            const T* xd2 = xn->value.data();
            const T* wd2 = wn->value.data();
            for (int co = 0; co < Co; ++co) {
                const T* gp = god + static_cast<std::size_t>(co) * Ho * Wo;
                for (int ci = 0; ci < Ci; ++ci) {
                    const T* xplane = xd2 + static_cast<std::size_t>(ci) * H * W;
                    T* gxplane = need_x ? gx + static_cast<std::size_t>(ci) * H * W : nullptr;
                    const std::size_t wbase = ((static_cast<std::size_t>(co) * Ci + ci) * kh) * kw;
                    for (int dh = 0; dh < kh; ++dh) {
                        for (int dw = 0; dw < kw; ++dw) {
                            const T wv = wd2[wbase + dh * kw + dw];
                            T wacc = 0;
                            for (int oh = 0; oh < Ho; ++oh) {
                                const int ih = oh * stride - pad + dh;
                                if (ih < 0 || ih >= H) continue;
                                const T* grow = gp + static_cast<std::size_t>(oh) * Wo;
                                const T* xrow = xplane + static_cast<std::size_t>(ih) * W;
                                T* gxrow = need_x ? gxplane + static_cast<std::size_t>(ih) * W : nullptr;
                                for (int ow = 0; ow < Wo; ++ow) {
                                    const int iw = ow * stride - pad + dw;
                                    if (iw < 0 || iw >= W) continue;
                                    const T go = grow[ow];
                                    if (need_w) wacc += go * xrow[iw];
                                    if (need_x) gxrow[iw] += go * wv;
                                }
                            }
                            if (need_w) gw[wbase + dh * kw + dw] += wacc;
                        }
                    }
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// channel normalization: per spatial site, normalize across channels
// ---------------------------------------------------------------------------

template <class T>
struct ChannelNormResult {
    Var<T> normalized;   // [C,H,W]
    Tensor<T> mu;        // [H,W]
    Tensor<T> sigma;     // [H,W], sqrt(var + eps)
};

template <class T>
ChannelNormResult<T> channel_norm(const Var<T>& F, T eps) {
    const auto& fs = F.value().shape();
    if (fs.size() != 3) {
        throw std::invalid_argument("channel_norm: expected [C,H,W], got " + F.value().shape_str());
    }
    if (!(eps > T(0))) throw std::invalid_argument("channel_norm: eps must be > 0");
    const int C = fs[0], H = fs[1], W = fs[2];
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    Tensor<T> mu({H, W}), sig({H, W});
    Tensor<T> v({C, H, W});
    const T* fd = F.value().data();
    const T invC = T(1) / static_cast<T>(C);
    for (std::size_t s = 0; s < plane; ++s) {
        T m = 0;
        for (int c = 0; c < C; ++c) m += fd[c * plane + s];
        m *= invC;
        T var = 0;
        for (int c = 0; c < C; ++c) {
            const T d = fd[c * plane + s] - m;
            var += d * d;
        }
        var *= invC;
        const T sd = std::sqrt(var + eps);
        mu[s] = m;
        sig[s] = sd;
        const T inv_sd = T(1) / sd;
        for (int c = 0; c < C; ++c) v[c * plane + s] = (fd[c * plane + s] - m) * inv_sd;
    }
    Var<T> out = detail::make_node("channel_norm", std::move(v), {F});
    if (out.requires_grad()) {
        auto* o = out.node().get();
        auto fn = F.node();
        auto sig_copy = sig;
        out.node()->backprop = [o, fn, sig_copy, C, plane, invC] {
            auto& gF = fn->ensure_grad();
            const T* gy = o->grad.data();
            const T* y = o->value.data();
            for (std::size_t s = 0; s < plane; ++s) {
                T mg = 0, mgy = 0;
                for (int c = 0; c < C; ++c) {
                    mg += gy[c * plane + s];
                    mgy += gy[c * plane + s] * y[c * plane + s];
                }
                mg *= invC;
                mgy *= invC;
                const T inv_sd = T(1) / sig_copy[s];
                for (int c = 0; c < C; ++c) {
                    gF[c * plane + s] += inv_sd * (gy[c * plane + s] - mg - y[c * plane + s] * mgy);
                }
            }
        };
    }
    return {std::move(out), std::move(mu), std::move(sig)};
}

// Broadcast a single-channel site map over all channels: F[C,H,W] * g[1,H,W]
template <class T>
Var<T> scale_site(const Var<T>& F, const Var<T>& g) {
    const auto& fs = F.value().shape();
    const auto& gs = g.value().shape();
    if (fs.size() != 3 || gs.size() != 3 || gs[0] != 1 || gs[1] != fs[1] || gs[2] != fs[2]) {
        throw std::invalid_argument("scale_site: shapes " + F.value().shape_str() + " vs " +
                                    g.value().shape_str());
    }
    const int C = fs[0];
    const std::size_t plane = static_cast<std::size_t>(fs[1]) * fs[2];
    Tensor<T> v = F.value();
    for (int c = 0; c < C; ++c)
        for (std::size_t s = 0; s < plane; ++s) v[c * plane + s] *= g.value()[s];
    Var<T> out = detail::make_node("scale_site", std::move(v), {F, g});
    if (out.requires_grad()) {
        auto* o = out.node().get();
        auto fn = F.node(), gn = g.node();
        out.node()->backprop = [o, fn, gn, C, plane] {
            if (fn->requires_grad) {
                auto& gF = fn->ensure_grad();
                for (int c = 0; c < C; ++c)
                    for (std::size_t s = 0; s < plane; ++s)
                        gF[c * plane + s] += o->grad[c * plane + s] * gn->value[s];
            }
            if (gn->requires_grad) {
                auto& gg = gn->ensure_grad();
                for (int c = 0; c < C; ++c)
                    for (std::size_t s = 0; s < plane; ++s)
                        gg[s] += o->grad[c * plane + s] * fn->value[c * plane + s];
            }
        };
    }
    return out;
}

template <class T>
Var<T> shift_site(const Var<T>& F, const Var<T>& b) {
    const auto& fs = F.value().shape();
    const auto& bs = b.value().shape();
    if (fs.size() != 3 || bs.size() != 3 || bs[0] != 1 || bs[1] != fs[1] || bs[2] != fs[2]) {
        throw std::invalid_argument("shift_site: shapes " + F.value().shape_str() + " vs " +
                                    b.value().shape_str());
    }
    const int C = fs[0];
    const std::size_t plane = static_cast<std::size_t>(fs[1]) * fs[2];
    Tensor<T> v = F.value();
    for (int c = 0; c < C; ++c)
        for (std::size_t s = 0; s < plane; ++s) v[c * plane + s] += b.value()[s];
    Var<T> out = detail::make_node("shift_site", std::move(v), {F, b});
    if (out.requires_grad()) {
        auto* o = out.node().get();
        auto fn = F.node(), bn = b.node();
        out.node()->backprop = [o, fn, bn, C, plane] {
            if (fn->requires_grad) {
                auto& gF = fn->ensure_grad();
                for (int c = 0; c < C; ++c)
                    for (std::size_t s = 0; s < plane; ++s) gF[c * plane + s] += o->grad[c * plane + s];
            }
            if (bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                for (int c = 0; c < C; ++c)
                    for (std::size_t s = 0; s < plane; ++s) gb[s] += o->grad[c * plane + s];
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// bilinear sampling: plane [C,R,R], coords [N,2] (x,y) in [-1,1]^2 -> [N,C]
// align convention: -1 and +1 map to the centers of the border texels
// ---------------------------------------------------------------------------

template <class T>
Var<T> bilinear_sample(const Var<T>& plane, const Var<T>& coords) {
    const auto& ps = plane.value().shape();
    const auto& cs = coords.value().shape();
    if (ps.size() != 3 || ps[1] != ps[2]) {
        throw std::invalid_argument("bilinear_sample: plane must be [C,R,R], got " + plane.value().shape_str());
    }
    if (cs.size() != 2 || cs[1] != 2) {
        throw std::invalid_argument("bilinear_sample: coords must be [N,2], got " + coords.value().shape_str());
    }
    if (!coords.value().all_finite()) {
        throw std::invalid_argument("bilinear_sample: non-finite coordinates");
    }
    const int C = ps[0], R = ps[1], N = cs[0];
    const std::size_t pl = static_cast<std::size_t>(R) * R;
    const T half_span = static_cast<T>(R - 1) / T(2);

    // precomputed per-point interpolation footprint
    struct Foot {
        int r0, c0;
        T fr, fc;     // fractional offsets
        bool in_x, in_y;  // coordinate strictly inside (-1,1): gradient flows to coords
    };
    std::vector<Foot> feet(static_cast<std::size_t>(N));
    Tensor<T> v({N, C});
    const T* pd = plane.value().data();
    for (int i = 0; i < N; ++i) {
        T x = coords.value()[2 * i];
        T y = coords.value()[2 * i + 1];
        const bool in_x = x > T(-1) && x < T(1);
        const bool in_y = y > T(-1) && y < T(1);
        x = std::clamp(x, T(-1), T(1));
        y = std::clamp(y, T(-1), T(1));
        const T u = (x + T(1)) * half_span;  // column
        const T w = (y + T(1)) * half_span;  // row
        int c0 = std::min(static_cast<int>(std::floor(u)), R - 2);
        int r0 = std::min(static_cast<int>(std::floor(w)), R - 2);
        c0 = std::max(c0, 0);
        r0 = std::max(r0, 0);
        const T fc = u - static_cast<T>(c0);
        const T fr = w - static_cast<T>(r0);
        feet[static_cast<std::size_t>(i)] = {r0, c0, fr, fc, in_x, in_y};
        for (int c = 0; c < C; ++c) {
            const T* cp = pd + c * pl;
            const T v00 = cp[r0 * R + c0];
            const T v01 = cp[r0 * R + c0 + 1];
            const T v10 = cp[(r0 + 1) * R + c0];
            const T v11 = cp[(r0 + 1) * R + c0 + 1];
            v.at(i, c) = (T(1) - fr) * ((T(1) - fc) * v00 + fc * v01) + fr * ((T(1) - fc) * v10 + fc * v11);
        }
    }
    Var<T> out = detail::make_node("bilinear_sample", std::move(v), {plane, coords});
    if (out.requires_grad()) {
        auto* o = out.node().get();
        auto pn = plane.node(), cn = coords.node();
        auto feet_copy = std::move(feet);
        out.node()->backprop = [o, pn, cn, feet_copy, C, R, pl, half_span] {
            const int N2 = o->value.dim(0);
            const T* pd2 = pn->value.data();
            for (int i = 0; i < N2; ++i) {
                const auto& f = feet_copy[static_cast<std::size_t>(i)];
                for (int c = 0; c < C; ++c) {
                    const T go = o->grad[static_cast<std::size_t>(i) * C + c];
                    if (go == T(0)) continue;
                    if (pn->requires_grad) {
                        T* gp = pn->ensure_grad().data() + c * pl;
                        gp[f.r0 * R + f.c0] += go * (T(1) - f.fr) * (T(1) - f.fc);
                        gp[f.r0 * R + f.c0 + 1] += go * (T(1) - f.fr) * f.fc;
                        gp[(f.r0 + 1) * R + f.c0] += go * f.fr * (T(1) - f.fc);
                        gp[(f.r0 + 1) * R + f.c0 + 1] += go * f.fr * f.fc;
                    }
                    if (cn->requires_grad) {
                        const T* cp = pd2 + c * pl;
                        const T v00 = cp[f.r0 * R + f.c0];
                        const T v01 = cp[f.r0 * R + f.c0 + 1];
                        const T v10 = cp[(f.r0 + 1) * R + f.c0];
                        const T v11 = cp[(f.r0 + 1) * R + f.c0 + 1];
                        auto& gc = cn->ensure_grad();
                        if (f.in_x) {
                            const T dvdc = (T(1) - f.fr) * (v01 - v00) + f.fr * (v11 - v10);
                            gc[2 * i] += go * dvdc * half_span;
                        }
                        if (f.in_y) {
                            const T dvdr = (T(1) - f.fc) * (v10 - v00) + f.fc * (v11 - v01);
                            gc[2 * i + 1] += go * dvdr * half_span;
                        }
                    }
                }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// resampling: bilinear resize (align-corners) and 2x average pooling
// ---------------------------------------------------------------------------

template <class T>
Var<T> resize_bilinear(const Var<T>& x, int Ho, int Wo) {
    const auto& xs = x.value().shape();
    if (xs.size() != 3) throw std::invalid_argument("resize_bilinear: expected [C,H,W]");
    if (Ho < 1 || Wo < 1) throw std::invalid_argument("resize_bilinear: bad target size");
    const int C = xs[0], H = xs[1], W = xs[2];
    const T sh = Ho > 1 ? static_cast<T>(H - 1) / static_cast<T>(Ho - 1) : T(0);
    const T sw = Wo > 1 ? static_cast<T>(W - 1) / static_cast<T>(Wo - 1) : T(0);
    Tensor<T> v({C, Ho, Wo});
    struct F4 { int r0, c0; T fr, fc; };
    std::vector<F4> feet(static_cast<std::size_t>(Ho) * Wo);
    for (int oh = 0; oh < Ho; ++oh) {
        const T src_r = sh * static_cast<T>(oh);
        int r0 = std::min(static_cast<int>(std::floor(src_r)), std::max(H - 2, 0));
        const T fr = H > 1 ? src_r - static_cast<T>(r0) : T(0);
        for (int ow = 0; ow < Wo; ++ow) {
            const T src_c = sw * static_cast<T>(ow);
            int c0 = std::min(static_cast<int>(std::floor(src_c)), std::max(W - 2, 0));
            const T fc = W > 1 ? src_c - static_cast<T>(c0) : T(0);
            feet[static_cast<std::size_t>(oh) * Wo + ow] = {r0, c0, fr, fc};
        }
    }
    const int r1off = H > 1 ? 1 : 0;
    const int c1off = W > 1 ? 1 : 0;
    for (int c = 0; c < C; ++c) {
        const T* xp = x.value().data() + static_cast<std::size_t>(c) * H * W;
        T* vp = v.data() + static_cast<std::size_t>(c) * Ho * Wo;
        for (std::size_t s = 0; s < static_cast<std::size_t>(Ho) * Wo; ++s) {
            const auto& f = feet[s];
            const T v00 = xp[f.r0 * W + f.c0];
            const T v01 = xp[f.r0 * W + f.c0 + c1off];
            const T v10 = xp[(f.r0 + r1off) * W + f.c0];
            const T v11 = xp[(f.r0 + r1off) * W + f.c0 + c1off];
            vp[s] = (T(1) - f.fr) * ((T(1) - f.fc) * v00 + f.fc * v01) +
                    f.fr * ((T(1) - f.fc) * v10 + f.fc * v11);
        }
    }
    Var<T> out = detail::make_node("resize_bilinear", std::move(v), {x});
    if (out.requires_grad()) {
        auto* o = out.node().get();
        auto xn = x.node();
        auto feet_copy = std::move(feet);
        out.node()->backprop = [o, xn, feet_copy, C, H, W, Ho, Wo, r1off, c1off] {
            auto& gx = xn->ensure_grad();
            for (int c = 0; c < C; ++c) {
                T* gp = gx.data() + static_cast<std::size_t>(c) * H * W;
                const T* gop = o->grad.data() + static_cast<std::size_t>(c) * Ho * Wo;
                for (std::size_t s = 0; s < static_cast<std::size_t>(Ho) * Wo; ++s) {
                    const auto& f = feet_copy[s];
                    const T go = gop[s];
                    gp[f.r0 * W + f.c0] += go * (T(1) - f.fr) * (T(1) - f.fc);
                    gp[f.r0 * W + f.c0 + c1off] += go * (T(1) - f.fr) * f.fc;
                    gp[(f.r0 + r1off) * W + f.c0] += go * f.fr * (T(1) - f.fc);
                    gp[(f.r0 + r1off) * W + f.c0 + c1off] += go * f.fr * f.fc;
                }
            }
        };
    }
    return out;
}

template <class T>
Var<T> avg_pool2(const Var<T>& x) {
    const auto& xs = x.value().shape();
    if (xs.size() != 3 || xs[1] % 2 || xs[2] % 2) {
        throw std::invalid_argument("avg_pool2: expected even [C,H,W], got " + x.value().shape_str());
    }
    const int C = xs[0], H = xs[1], W = xs[2];
    const int Ho = H / 2, Wo = W / 2;
    Tensor<T> v({C, Ho, Wo});
    for (int c = 0; c < C; ++c) {
        const T* xp = x.value().data() + static_cast<std::size_t>(c) * H * W;
        T* vp = v.data() + static_cast<std::size_t>(c) * Ho * Wo;
        for (int oh = 0; oh < Ho; ++oh)
            for (int ow = 0; ow < Wo; ++ow)
                vp[oh * Wo + ow] = (xp[2 * oh * W + 2 * ow] + xp[2 * oh * W + 2 * ow + 1] +
                                    xp[(2 * oh + 1) * W + 2 * ow] + xp[(2 * oh + 1) * W + 2 * ow + 1]) *
                                   T(0.25);
    }
    Var<T> out = detail::make_node("avg_pool2", std::move(v), {x});
    if (out.requires_grad()) {
        auto* o = out.node().get();
        auto xn = x.node();
        out.node()->backprop = [o, xn, C, H, W, Ho, Wo] {
            auto& gx = xn->ensure_grad();
            for (int c = 0; c < C; ++c) {
                T* gp = gx.data() + static_cast<std::size_t>(c) * H * W;
                const T* gop = o->grad.data() + static_cast<std::size_t>(c) * Ho * Wo;
                for (int oh = 0; oh < Ho; ++oh)
                    for (int ow = 0; ow < Wo; ++ow) {
                        const T g = gop[oh * Wo + ow] * T(0.25);
                        gp[2 * oh * W + 2 * ow] += g;
                        gp[2 * oh * W + 2 * ow + 1] += g;
                        gp[(2 * oh + 1) * W + 2 * ow] += g;
                        gp[(2 * oh + 1) * W + 2 * ow + 1] += g;
                    }
            }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// emission-absorption ray compositing
//
// sigma: [P] nonnegative densities, color: [P,3], P = h*w*n_samples, point
// index runs sample-fastest. Returns the composited [3,h,w] image plus
// non-differentiable per-ray aggregates.
// ---------------------------------------------------------------------------

template <class T>
struct CompositeResult {
    Var<T> image;            // [3,h,w]
    Tensor<T> weight_sum;    // [h,w]
    Tensor<T> transmittance; // [h,w], T after the last sample
    Tensor<T> depth;         // [h,w], expected depth (far where weight ~ 0)
};

template <class T>
CompositeResult<T> composite_rays(const Var<T>& sigma, const Var<T>& color,
                                  const Tensor<T>& depths, T delta, int h, int w,
                                  std::array<T, 3> background, T far_plane) {
    const int S = depths.dim(0);
    const std::size_t P = static_cast<std::size_t>(h) * w * S;
    if (sigma.value().numel() != P || color.value().rank() != 2 || color.value().dim(1) != 3 ||
        static_cast<std::size_t>(color.value().dim(0)) != P) {
        throw std::invalid_argument("composite_rays: sigma/color sizes do not match h*w*n_samples");
    }
    const std::size_t n_rays = static_cast<std::size_t>(h) * w;
    Tensor<T> img({3, h, w});
    Tensor<T> wsum({h, w}), tfin({h, w}), depth({h, w});
    Tensor<T> weights({static_cast<int>(P)});  // saved for backward
    Tensor<T> trans({static_cast<int>(P)});    // T_j before sample j
    const T* sd = sigma.value().data();
    const T* cd = color.value().data();
    for (std::size_t r = 0; r < n_rays; ++r) {
        T t_acc = T(1);
        T acc[3] = {0, 0, 0};
        T ws = 0, dnum = 0;
        const std::size_t base = r * S;
        for (int j = 0; j < S; ++j) {
            const std::size_t idx = base + j;
            const T e = std::exp(-sd[idx] * delta);
            const T a = T(1) - e;
            const T wgt = t_acc * a;
            trans[idx] = t_acc;
            weights[idx] = wgt;
            acc[0] += wgt * cd[idx * 3];
            acc[1] += wgt * cd[idx * 3 + 1];
            acc[2] += wgt * cd[idx * 3 + 2];
            ws += wgt;
            dnum += wgt * depths[j];
            t_acc *= e;
        }
        img[r] = acc[0] + t_acc * background[0];
        img[n_rays + r] = acc[1] + t_acc * background[1];
        img[2 * n_rays + r] = acc[2] + t_acc * background[2];
        wsum[r] = ws;
        tfin[r] = t_acc;
        depth[r] = ws < T(1e-6) ? far_plane : dnum / std::max(ws, T(1e-8));
    }
    Var<T> out = detail::make_node("composite_rays", std::move(img), {sigma, color});
    if (out.requires_grad()) {
        auto* o = out.node().get();
        auto sn = sigma.node(), cn = color.node();
        auto weights_copy = std::move(weights);
        auto trans_copy = std::move(trans);
        auto tfin_copy = tfin;
        out.node()->backprop = [o, sn, cn, weights_copy, trans_copy, tfin_copy, n_rays, S, delta,
                                background] {
            const T* god = o->grad.data();
            const T* cd2 = cn->value.data();
            const T* sd2 = sn->value.data();
            for (std::size_t r = 0; r < n_rays; ++r) {
                const T g0 = god[r], g1 = god[n_rays + r], g2 = god[2 * n_rays + r];
                const std::size_t base = r * S;
                if (cn->requires_grad) {
                    auto& gc = cn->ensure_grad();
                    for (int j = 0; j < S; ++j) {
                        const std::size_t idx = base + j;
                        const T wgt = weights_copy[idx];
                        gc[idx * 3] += g0 * wgt;
                        gc[idx * 3 + 1] += g1 * wgt;
                        gc[idx * 3 + 2] += g2 * wgt;
                    }
                }
                if (sn->requires_grad) {
                    auto& gs = sn->ensure_grad();
                    // suffix sum of w_k <c_k, g> plus the background term
                    T total = 0;
                    for (int j = 0; j < S; ++j) {
                        const std::size_t idx = base + j;
                        total += weights_copy[idx] *
                                 (g0 * cd2[idx * 3] + g1 * cd2[idx * 3 + 1] + g2 * cd2[idx * 3 + 2]);
                    }
                    const T bg_dot = tfin_copy[r] * (g0 * background[0] + g1 * background[1] +
                                                     g2 * background[2]);
                    T prefix = 0;
                    for (int j = 0; j < S; ++j) {
                        const std::size_t idx = base + j;
                        const T cdot = g0 * cd2[idx * 3] + g1 * cd2[idx * 3 + 1] + g2 * cd2[idx * 3 + 2];
                        prefix += weights_copy[idx] * cdot;
                        const T e = std::exp(-sd2[idx] * delta);
                        const T own = e * trans_copy[idx] * cdot;
                        const T suffix = total - prefix;
                        gs[idx] += delta * (own - suffix - bg_dot);
                    }
                }
            }
        };
    }
    return {std::move(out), std::move(wsum), std::move(tfin), std::move(depth)};
}

// mean absolute difference, the L1 loss used throughout training
template <class T>
Var<T> l1_loss(const Var<T>& a, const Var<T>& b) {
    return mean(vabs(sub(a, b)));
}

}  // namespace styleplane::ops
