#include "styleplane/priors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace styleplane {

namespace o = ops;

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL * (tag + 1));
    return splitmix64(s);
}

Tensorf upsampled_noise(std::uint64_t seed, int channels, int coarse, int res, float scale) {
    Rng rng(seed);
    Tensorf grid = Tensorf::randn({channels, coarse, coarse}, rng, scale);
    if (coarse == res) return grid;
    return o::resize_bilinear(Varf::constant(std::move(grid)), res, res).value();
}

float clampf(float v, float lo, float hi) { return std::min(std::max(v, lo), hi); }

// bilinear image lookup at fractional pixel coordinates, clamped to borders
float sample_pixel(const Tensorf& img, int c, float y, float x) {
    const int H = img.dim(1), W = img.dim(2);
    x = clampf(x, 0.0f, static_cast<float>(W - 1));
    y = clampf(y, 0.0f, static_cast<float>(H - 1));
    const int x0 = std::min(static_cast<int>(x), W - 2 >= 0 ? W - 2 : 0);
    const int y0 = std::min(static_cast<int>(y), H - 2 >= 0 ? H - 2 : 0);
    const int x1 = std::min(x0 + 1, W - 1);
    const int y1 = std::min(y0 + 1, H - 1);
    const float fx = x - static_cast<float>(x0);
    const float fy = y - static_cast<float>(y0);
    return (1 - fy) * ((1 - fx) * img.at(c, y0, x0) + fx * img.at(c, y0, x1)) +
           fy * ((1 - fx) * img.at(c, y1, x0) + fx * img.at(c, y1, x1));
}

Tensorf apply_style(const Tensorf& img, const StyleParams& p) {
    const int H = img.dim(1), W = img.dim(2);
    const float two_pi = 6.28318530717958648f;

    Tensorf warped({3, H, W}, 0.0f);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const float sx = x + p.warp_amp * std::sin(two_pi * p.warp_freq * y / H + p.warp_phase_x);
            const float sy = y + p.warp_amp * std::sin(two_pi * p.warp_freq * x / W + p.warp_phase_y);
            for (int c = 0; c < 3; ++c) warped.at(c, y, x) = sample_pixel(img, c, sy, sx);
        }
    }

    Tensorf overlay = upsampled_noise(p.overlay_seed, 3, 4, std::max(H, W), 1.0f);
    Tensorf out({3, H, W}, 0.0f);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            float rgb[3];
            for (int c = 0; c < 3; ++c) {
                rgb[c] = p.color[c * 3 + 0] * warped.at(0, y, x) +
                         p.color[c * 3 + 1] * warped.at(1, y, x) +
                         p.color[c * 3 + 2] * warped.at(2, y, x);
            }
            for (int c = 0; c < 3; ++c) {
                float v = std::pow(clampf(rgb[c], 0.0f, 1.0f), p.gamma[c]);
                out.at(c, y, x) = v + p.overlay_amp * overlay.at(c, y, x);
            }
        }
    }
    return out;
}

}  // namespace

void to_json(nlohmann::json& j, const ScenePriorConfig& c) {
    j = {{"identity_seed", c.identity_seed}, {"decoder_seed", c.decoder_seed},
         {"bandwidth", c.bandwidth},         {"base_seed", c.base_seed},
         {"base_scale", c.base_scale},       {"variation_scale", c.variation_scale},
         {"plane_channels", c.plane_channels}, {"plane_res", c.plane_res},
         {"coarse_res", c.coarse_res},       {"decoder_hidden", c.decoder_hidden},
         {"decoder_gain", c.decoder_gain}};
}

void from_json(const nlohmann::json& j, ScenePriorConfig& c) {
    j.at("identity_seed").get_to(c.identity_seed);
    j.at("decoder_seed").get_to(c.decoder_seed);
    j.at("bandwidth").get_to(c.bandwidth);
    j.at("base_seed").get_to(c.base_seed);
    j.at("base_scale").get_to(c.base_scale);
    j.at("variation_scale").get_to(c.variation_scale);
    j.at("plane_channels").get_to(c.plane_channels);
    j.at("plane_res").get_to(c.plane_res);
    j.at("coarse_res").get_to(c.coarse_res);
    j.at("decoder_hidden").get_to(c.decoder_hidden);
    j.at("decoder_gain").get_to(c.decoder_gain);
}

std::pair<Triplane, DecoderMLP> scene_sample(const ScenePriorConfig& cfg) {
    if (cfg.plane_channels < 1 || cfg.plane_res < cfg.coarse_res || cfg.coarse_res < 2) {
        throw std::invalid_argument("scene_sample: inconsistent plane dimensions");
    }
    Tensorf planes[3];
    for (int p = 0; p < 3; ++p) {
        Tensorf base = upsampled_noise(mix_seed(cfg.base_seed, p), cfg.plane_channels,
                                       cfg.coarse_res, cfg.plane_res, cfg.base_scale);
        Tensorf var = upsampled_noise(mix_seed(cfg.identity_seed, 100 + p), cfg.plane_channels,
                                      cfg.coarse_res, cfg.plane_res, cfg.variation_scale);
        Tensorf plane({cfg.plane_channels, cfg.plane_res, cfg.plane_res}, 0.0f);
        for (std::size_t i = 0; i < plane.numel(); ++i) plane[i] = cfg.bandwidth * (base[i] + var[i]);
        planes[p] = std::move(plane);
    }
    Triplane tp = Triplane::constant(std::move(planes[0]), std::move(planes[1]), std::move(planes[2]));
    DecoderMLP dec = DecoderMLP::create(cfg.plane_channels, cfg.decoder_hidden, cfg.decoder_seed);
    for (Varf* w : {&dec.w_hidden, &dec.w_sigma, &dec.w_color}) {
        for (auto& v : w->mutable_value().vec()) v *= cfg.decoder_gain;
    }
    return {std::move(tp), std::move(dec)};
}

ScenePrior::ScenePrior(const ScenePriorConfig& cfg) : cfg_(cfg) {
    auto [tp, dec] = scene_sample(cfg);
    triplane_ = std::move(tp);
    decoder_ = std::move(dec);
    sr_ = SuperResolver::create(mix_seed(cfg.decoder_seed, 7));
}

Tensorf ScenePrior::render_view(const CameraView& view, const RenderOptions& opt) const {
    return render(triplane_, decoder_, sr_, view, opt).image.value();
}

Tensorf scene_render(const ScenePriorConfig& cfg, const CameraView& view, const RenderOptions& opt) {
    return ScenePrior(cfg).render_view(view, opt);
}

void to_json(nlohmann::json& j, const StyleEditorConfig& c) {
    j = {{"editor_seed", c.editor_seed},
         {"prompt", c.prompt},
         {"decorative_prompt", c.decorative_prompt},
         {"negative_prompt", c.negative_prompt},
         {"guidance_image", c.guidance_image},
         {"guidance_text", c.guidance_text},
         {"tau", c.tau},
         {"steps", c.steps},
         {"view_jitter", c.view_jitter}};
}

void from_json(const nlohmann::json& j, StyleEditorConfig& c) {
    j.at("editor_seed").get_to(c.editor_seed);
    j.at("prompt").get_to(c.prompt);
    j.at("decorative_prompt").get_to(c.decorative_prompt);
    j.at("negative_prompt").get_to(c.negative_prompt);
    j.at("guidance_image").get_to(c.guidance_image);
    j.at("guidance_text").get_to(c.guidance_text);
    j.at("tau").get_to(c.tau);
    j.at("steps").get_to(c.steps);
    j.at("view_jitter").get_to(c.view_jitter);
}

std::uint64_t PromptBundle::style_hash() const {
    return fnv1a64(negative, fnv1a64(positive, fnv1a64("\x1f")));
}

PromptBundle assemble_prompt(const std::string& t, const std::string& t_d,
                             const std::string& t_n) {
    if (t.empty()) throw std::invalid_argument("assemble_prompt: empty style prompt");
    std::string pos = "turn the head into " + t + ", " + t_d;
    if (t_d.empty()) pos.resize(pos.size() - 2);
    return {std::move(pos), t_n};
}

PromptBundle assemble_prompt(const StyleEditorConfig& cfg) {
    return assemble_prompt(cfg.prompt, cfg.decorative_prompt, cfg.negative_prompt);
}

Tensorf encode_latent(const Tensorf& img) {
    if (img.rank() != 3 || img.dim(0) != 3 || img.dim(1) % 4 != 0 || img.dim(2) % 4 != 0) {
        throw std::invalid_argument("encode_latent: expected [3,4k,4k], got " + img.shape_str());
    }
    return o::avg_pool2(o::avg_pool2(Varf::constant(img))).value();
}

double ddpm_alpha_bar(int s, int S) {
    if (s < 0 || s > S || S < 2) throw std::invalid_argument("ddpm_alpha_bar: bad step");
    double abar = 1.0;
    for (int t = 1; t <= s; ++t) {
        const double beta = 1e-4 + (t - 1) * (0.2 - 1e-4) / (S - 1);
        abar *= 1.0 - beta;
    }
    return abar;
}

Tensorf add_noise(const Tensorf& z, const Tensorf& n, float tau, int S) {
    if (!(tau >= 0.0f && tau <= 1.0f)) {
        throw std::invalid_argument("add_noise: tau must be in [0,1], got " + std::to_string(tau));
    }
    if (!z.same_shape(n)) {
        throw std::invalid_argument("add_noise: shape mismatch " + z.shape_str() + " vs " + n.shape_str());
    }
    const int s = static_cast<int>(std::lround(tau * S));
    if (s == 0) return z;
    const double abar = ddpm_alpha_bar(s, S);
    const float a = static_cast<float>(std::sqrt(abar));
    const float b = static_cast<float>(std::sqrt(1.0 - abar));
    Tensorf out = z;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * z[i] + b * n[i];
    return out;
}

std::array<float, 17> StyleParams::flat() const {
    return {color[0], color[1], color[2], color[3], color[4], color[5], color[6], color[7],
            color[8], gamma[0], gamma[1], gamma[2], warp_amp, warp_freq, warp_phase_x,
            warp_phase_y, overlay_amp};
}

StyleParams base_style_params(const StyleEditorConfig& cfg) {
    const std::uint64_t h = assemble_prompt(cfg).style_hash();
    Rng rng(mix_seed(cfg.editor_seed, h));
    StyleParams p;
    for (int i = 0; i < 9; ++i) {
        p.color[i] = (i % 4 == 0 ? 1.0f : 0.0f) + 0.4f * rng.uniform(-0.5f, 0.5f);
    }
    for (int c = 0; c < 3; ++c) p.gamma[c] = rng.uniform(0.7f, 1.5f);
    p.warp_amp = rng.uniform(0.5f, 2.0f);
    p.warp_freq = rng.uniform(1.0f, 3.0f);
    p.warp_phase_x = rng.uniform(0.0f, 6.28318f);
    p.warp_phase_y = rng.uniform(0.0f, 6.28318f);
    p.overlay_amp = rng.uniform(0.03f, 0.12f);
    p.overlay_seed = rng.next_u64();
    return p;
}

StyleParams view_style_params(const StyleEditorConfig& cfg, const CameraView& view) {
    if (cfg.view_jitter < 0.0f) throw std::invalid_argument("view_style_params: negative jitter");
    StyleParams p = base_style_params(cfg);
    if (cfg.view_jitter == 0.0f) return p;

    // the jitter seed hashes the exact view angles so each grid view gets its
    // own reproducible perturbation
    const float angles[2] = {view.pitch_deg, view.yaw_deg};
    std::uint64_t h = fnv1a64(angles, sizeof(angles), assemble_prompt(cfg).style_hash());
    Rng rng(mix_seed(cfg.editor_seed, h));
    auto jitter = [&](float& v) { v += cfg.view_jitter * rng.uniform(-1.0f, 1.0f); };
    for (auto& v : p.color) jitter(v);
    for (auto& v : p.gamma) jitter(v);
    jitter(p.warp_amp);
    jitter(p.warp_freq);
    jitter(p.warp_phase_x);
    jitter(p.warp_phase_y);
    jitter(p.overlay_amp);
    return p;
}

Tensorf edit(const Tensorf& img, const Tensorf& n_star, const StyleEditorConfig& cfg,
             const CameraView& view) {
    if (img.rank() != 3 || img.dim(0) != 3) {
        throw std::invalid_argument("edit: expected [3,H,W] image, got " + img.shape_str());
    }
    const int H = img.dim(1), W = img.dim(2);
    if (n_star.rank() != 3 || n_star.dim(0) != 3 || n_star.dim(1) != H / 4 || n_star.dim(2) != W / 4) {
        throw std::invalid_argument("edit: latent " + n_star.shape_str() + " does not match image " +
                                    img.shape_str());
    }
    if (!(cfg.tau >= 0.0f && cfg.tau <= 1.0f)) throw std::invalid_argument("edit: tau out of range");

    const StyleParams p = view_style_params(cfg, view);
    const float strength = cfg.guidance_text / (1.0f + cfg.guidance_text);

    Tensorf out = img;
    if (strength > 0.0f) {
        Tensorf stylized = apply_style(img, p);
        for (std::size_t i = 0; i < out.numel(); ++i) {
            out[i] = (1.0f - strength) * img[i] + strength * stylized[i];
        }
    }

    const float f = (cfg.guidance_image / (1.0f + cfg.guidance_image)) * (1.0f - cfg.tau);
    if (f > 0.0f) {
        Tensorf anchor = o::resize_bilinear(Varf::constant(n_star), H, W).value();
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (1.0f - f) * out[i] + f * anchor[i];
    }
    for (auto& v : out.vec()) v = clampf(v, 0.0f, 1.0f);
    return out;
}

}  // namespace styleplane
