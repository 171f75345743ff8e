#include "styleplane/triplane.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace styleplane {

namespace o = ops;

Triplane::Triplane(Varf xy_, Varf xz_, Varf yz_) : xy(std::move(xy_)), xz(std::move(xz_)), yz(std::move(yz_)) {
    const auto& s = xy.value().shape();
    if (s.size() != 3 || s[1] != s[2] || xz.value().shape() != s || yz.value().shape() != s) {
        throw std::invalid_argument("Triplane: planes must share [C,R,R] shape");
    }
}

Triplane Triplane::constant(Tensorf xy, Tensorf xz, Tensorf yz) {
    return Triplane(Varf::constant(std::move(xy)), Varf::constant(std::move(xz)),
                    Varf::constant(std::move(yz)));
}

Triplane Triplane::detached() const {
    return Triplane::constant(xy.value(), xz.value(), yz.value());
}

Tensorf Triplane::stacked() const {
    const int C = channels(), R = resolution();
    Tensorf s({3, C, R, R});
    const std::size_t n = static_cast<std::size_t>(C) * R * R;
    std::memcpy(s.data(), xy.value().data(), n * sizeof(float));
    std::memcpy(s.data() + n, xz.value().data(), n * sizeof(float));
    std::memcpy(s.data() + 2 * n, yz.value().data(), n * sizeof(float));
    return s;
}

Triplane Triplane::from_stacked(const Tensorf& s, bool requires_grad) {
    if (s.rank() != 4 || s.dim(0) != 3 || s.dim(2) != s.dim(3)) {
        throw std::invalid_argument("Triplane::from_stacked: expected [3,C,R,R], got " + s.shape_str());
    }
    const int C = s.dim(1), R = s.dim(2);
    const std::size_t n = static_cast<std::size_t>(C) * R * R;
    auto take = [&](int k) {
        Tensorf t({C, R, R});
        std::memcpy(t.data(), s.data() + k * n, n * sizeof(float));
        return Varf(std::move(t), requires_grad);
    };
    return Triplane(take(0), take(1), take(2));
}

Varf sample_points(const Triplane& tp, const Tensorf& pts) {
    if (pts.rank() != 2 || pts.dim(1) != 3) {
        throw std::invalid_argument("sample_points: expected [N,3], got " + pts.shape_str());
    }
    if (!pts.all_finite()) throw std::invalid_argument("sample_points: non-finite query point");
    const int N = pts.dim(0);
    Tensorf cxy({N, 2}), cxz({N, 2}), cyz({N, 2});
    for (int i = 0; i < N; ++i) {
        const float x = std::clamp(pts.at(i, 0), -1.0f, 1.0f);
        const float y = std::clamp(pts.at(i, 1), -1.0f, 1.0f);
        const float z = std::clamp(pts.at(i, 2), -1.0f, 1.0f);
        cxy.at(i, 0) = x; cxy.at(i, 1) = y;
        cxz.at(i, 0) = x; cxz.at(i, 1) = z;
        cyz.at(i, 0) = y; cyz.at(i, 1) = z;
    }
    Varf fxy = o::bilinear_sample(tp.xy, Varf::constant(std::move(cxy)));
    Varf fxz = o::bilinear_sample(tp.xz, Varf::constant(std::move(cxz)));
    Varf fyz = o::bilinear_sample(tp.yz, Varf::constant(std::move(cyz)));
    return o::add(o::add(fxy, fxz), fyz);
}

Tensorf sample_point(const Triplane& tp, const Vec3& p) {
    Tensorf pts({1, 3}, {p[0], p[1], p[2]});
    return sample_points(tp, pts).value().reshaped({tp.channels()});
}

DecoderMLP DecoderMLP::create(int feature_channels, int hidden, std::uint64_t seed, bool trainable) {
    Rng rng(seed);
    auto init = [&](std::vector<int> shape, float scale) {
        return Varf(Tensorf::randn(std::move(shape), rng, scale), trainable);
    };
    DecoderMLP d;
    const float s1 = 1.0f / std::sqrt(static_cast<float>(feature_channels));
    const float s2 = 1.0f / std::sqrt(static_cast<float>(hidden));
    d.w_hidden = init({feature_channels, hidden}, s1);
    d.b_hidden = init({hidden}, 0.1f);
    d.w_sigma = init({hidden, 1}, s2);
    d.b_sigma = init({1}, 0.1f);
    d.w_color = init({hidden, 3}, s2);
    d.b_color = init({3}, 0.1f);
    return d;
}

DecoderMLP::Decoded DecoderMLP::decode(const Varf& features) const {
    Varf h = o::softplus(o::linear(features, w_hidden, b_hidden));
    const int N = features.value().dim(0);
    Varf sigma = o::softplus(o::reshape(o::linear(h, w_sigma, b_sigma), {N}));
    Varf color = o::vsigmoid(o::linear(h, w_color, b_color));
    return {std::move(sigma), std::move(color)};
}

std::vector<std::pair<std::string, Varf>> DecoderMLP::named_params() const {
    return {{"decoder.w_hidden", w_hidden}, {"decoder.b_hidden", b_hidden},
            {"decoder.w_sigma", w_sigma},   {"decoder.b_sigma", b_sigma},
            {"decoder.w_color", w_color},   {"decoder.b_color", b_color}};
}

SuperResolver SuperResolver::create(std::uint64_t seed) {
    Rng rng(seed);
    Tensorf w({3, 3, 3, 3});
    for (int co = 0; co < 3; ++co)
        for (int ci = 0; ci < 3; ++ci)
            for (int kh = 0; kh < 3; ++kh)
                for (int kw = 0; kw < 3; ++kw) {
                    float v = static_cast<float>(rng.gaussian()) * 0.02f;
                    if (co == ci && kh == 1 && kw == 1) v += 1.0f;  // near-identity
                    w.at(co, ci, kh, kw) = v;
                }
    SuperResolver sr;
    sr.weight = Varf::constant(std::move(w));
    sr.bias = Varf::constant(Tensorf({3}, 0.0f));
    return sr;
}

Varf SuperResolver::apply(const Varf& img) const {
    const auto& s = img.value().shape();
    if (s.size() != 3 || s[0] != 3) {
        throw std::invalid_argument("SuperResolver: expected [3,H,W], got " + img.value().shape_str());
    }
    Varf up = o::resize_bilinear(img, 2 * s[1], 2 * s[2]);
    return o::conv2d(up, weight, bias, 1, 1);
}

std::vector<std::pair<std::string, Varf>> SuperResolver::named_params() const {
    return {{"sr.weight", weight}, {"sr.bias", bias}};
}

namespace {

struct SamplingSetup {
    Tensorf points;   // [h*w*S, 3], sample-fastest
    Tensorf depths;   // [S]
    float delta;
};

SamplingSetup setup_samples(const CameraView& cam, const RenderOptions& opt) {
    if (opt.n_samples < 2) throw std::invalid_argument("render: n_samples must be >= 2");
    if (!(opt.near < opt.far)) throw std::invalid_argument("render: require near < far");
    const RayBundle rb = make_rays(cam);
    const int S = opt.n_samples;
    const float span = opt.far - opt.near;
    const float delta = span / static_cast<float>(S);

    Tensorf depths({S});
    Rng jrng(opt.jitter_seed);
    for (int j = 0; j < S; ++j) {
        const float off = opt.stratified_jitter ? static_cast<float>(jrng.uniform()) : 0.5f;
        depths[j] = opt.near + (static_cast<float>(j) + off) * delta;
    }

    const int n_rays = static_cast<int>(rb.directions.size());
    Tensorf pts({n_rays * S, 3});
    for (int r = 0; r < n_rays; ++r) {
        const Vec3& d = rb.directions[static_cast<std::size_t>(r)];
        for (int j = 0; j < S; ++j) {
            const float t = depths[j];
            float* p = pts.data() + (static_cast<std::size_t>(r) * S + j) * 3;
            p[0] = rb.origin[0] + t * d[0];
            p[1] = rb.origin[1] + t * d[1];
            p[2] = rb.origin[2] + t * d[2];
        }
    }
    return {std::move(pts), std::move(depths), delta};
}

}  // namespace

RenderResult render(const Triplane& tp, const DecoderMLP& dec, const SuperResolver& sr,
                    const CameraView& cam, const RenderOptions& opt) {
    SamplingSetup s = setup_samples(cam, opt);
    Varf features = sample_points(tp, s.points);
    DecoderMLP::Decoded d = dec.decode(features);
    auto comp = o::composite_rays(d.sigma, d.color, s.depths, s.delta, cam.height, cam.width,
                                  opt.background, opt.far);
    Varf image = sr.apply(comp.image);
    return {std::move(image), std::move(comp.image), std::move(comp.weight_sum),
            std::move(comp.transmittance), std::move(comp.depth)};
}

Varf render_density(const Triplane& tp, const DecoderMLP& dec, const Tensorf& pts) {
    Varf features = sample_points(tp, pts);
    return dec.decode(features).sigma;
}

Tensorf render_depth(const Triplane& tp, const DecoderMLP& dec, const CameraView& cam,
                     const RenderOptions& opt) {
    SamplingSetup s = setup_samples(cam, opt);
    Triplane frozen = tp.detached();
    Varf features = sample_points(frozen, s.points);
    DecoderMLP::Decoded d = dec.decode(features);
    auto comp = o::composite_rays(Varf::constant(d.sigma.value()), Varf::constant(d.color.value()),
                                  s.depths, s.delta, cam.height, cam.width, opt.background, opt.far);
    return comp.depth;
}

}  // namespace styleplane
