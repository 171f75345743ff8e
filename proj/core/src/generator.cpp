#include "styleplane/generator.hpp"

#include <cmath>
#include <stdexcept>

namespace styleplane {

namespace o = ops;

namespace {

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

int channels_for_resolution(int res) {
    if (res <= 4) return 64;
    if (res <= 8) return 48;
    return 32;
}

ConvParam make_conv(Rng& rng, int cin, int cout, int k, float scale_mul = 1.0f) {
    const float scale = scale_mul * std::sqrt(2.0f / static_cast<float>(cin * k * k));
    ConvParam p;
    p.w = Varf::leaf(Tensorf::randn({cout, cin, k, k}, rng, scale));
    p.b = Varf::leaf(Tensorf::zeros({cout}));
    return p;
}

}  // namespace

GeneratorModel::GeneratorModel(const GeneratorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (!is_pow2(cfg.image_res) || !is_pow2(cfg.latent_k) || !is_pow2(cfg.plane_res)) {
        throw std::invalid_argument("GeneratorModel: image_res, latent_k and plane_res must be powers of 2");
    }
    if (cfg.latent_k > cfg.image_res || cfg.plane_res < 4) {
        throw std::invalid_argument("GeneratorModel: inconsistent resolutions");
    }
    if (cfg.sml_layers < 2) throw std::invalid_argument("GeneratorModel: need at least 2 SML layers");
    const int n_up = static_cast<int>(std::round(std::log2(cfg.plane_res / 4)));
    if (n_up > cfg.sml_layers - 1) {
        throw std::invalid_argument("GeneratorModel: plane_res too large for the layer count");
    }
    init_params(seed);
}

void GeneratorModel::init_params(std::uint64_t seed) {
    Rng rng(seed);

    // encoder: stride-2 conv pyramid image_res -> latent_k, then one stride-1
    // conv to the latent channel count
    const int n_down = static_cast<int>(std::round(std::log2(cfg_.image_res / cfg_.latent_k)));
    const int enc_channels[3] = {16, 32, 48};
    int cin = 3;
    for (int i = 0; i < n_down; ++i) {
        const int cout = enc_channels[std::min(i, 2)];
        encoder_.push_back(make_conv(rng, cin, cout, 3));
        cin = cout;
    }
    encoder_.push_back(make_conv(rng, cin, cfg_.latent_channels, 3));

    const int c0 = channels_for_resolution(4);
    seed_features_ = Varf::leaf(Tensorf::randn({c0, 4, 4}, rng, 1.0f));

    // modulation stack: progressive 2x upsampling 4 -> plane_res, upsample
    // steps spread evenly over the interior layers
    const int n_up = static_cast<int>(std::round(std::log2(cfg_.plane_res / 4)));
    std::vector<int> res_of(static_cast<std::size_t>(cfg_.sml_layers), 4);
    for (int j = 0; j < n_up; ++j) {
        const int pos = 1 + (j * (cfg_.sml_layers - 1)) / n_up;
        for (int l = pos; l < cfg_.sml_layers; ++l) res_of[static_cast<std::size_t>(l)] *= 2;
    }
    // clamp any overshoot from rounding
    for (auto& r : res_of) r = std::min(r, cfg_.plane_res);

    int fin = c0;
    for (int l = 0; l < cfg_.sml_layers; ++l) {
        SMLayer layer;
        layer.res = res_of[static_cast<std::size_t>(l)];
        layer.cin = fin;
        layer.cout = channels_for_resolution(layer.res);
        layer.final_layer = (l == cfg_.sml_layers - 1);
        layer.conv = make_conv(rng, layer.cin, layer.cout, 3);
        layer.gamma_a = make_conv(rng, cfg_.latent_channels, cfg_.modnet_hidden, 3);
        layer.gamma_b = make_conv(rng, cfg_.modnet_hidden, 1, 3, 0.01f);
        layer.beta_a = make_conv(rng, cfg_.latent_channels, cfg_.modnet_hidden, 3);
        layer.beta_b = make_conv(rng, cfg_.modnet_hidden, 1, 3, 0.01f);
        layers_.push_back(std::move(layer));
        fin = layers_.back().cout;
    }
    to_planes_ = make_conv(rng, fin, 3 * cfg_.plane_channels, 1, 0.5f);
}

StyleLatent GeneratorModel::encode(const Varf& img) const {
    const auto& s = img.value().shape();
    if (s.size() != 3 || s[0] != 3 || s[1] != cfg_.image_res || s[2] != cfg_.image_res) {
        throw std::invalid_argument("encode: expected [3," + std::to_string(cfg_.image_res) + "," +
                                    std::to_string(cfg_.image_res) + "], got " + img.value().shape_str());
    }
    Varf f = img;
    for (std::size_t i = 0; i + 1 < encoder_.size(); ++i) {
        f = o::leaky_relu(o::conv2d(f, encoder_[i].w, encoder_[i].b, 2, 1), 0.2f);
    }
    return o::conv2d(f, encoder_.back().w, encoder_.back().b, 1, 1);
}

Varf GeneratorModel::sml_forward(const Varf& features, const StyleLatent& ws, const SMLayer& layer) const {
    const auto& fs = features.value().shape();
    if (fs.size() != 3 || fs[0] != layer.cin || fs[1] != layer.res || fs[2] != layer.res) {
        throw std::invalid_argument("sml_forward: features " + features.value().shape_str() +
                                    " do not match layer [" + std::to_string(layer.cin) + "," +
                                    std::to_string(layer.res) + "," + std::to_string(layer.res) + "]");
    }
    Varf base = o::conv2d(features, layer.conv.w, layer.conv.b, 1, 1);
    Varf norm = o::channel_norm(base, 1e-5f).normalized;

    Varf ws_r = o::resize_bilinear(ws, layer.res, layer.res);
    Varf gh = o::leaky_relu(o::conv2d(ws_r, layer.gamma_a.w, layer.gamma_a.b, 1, 1), 0.2f);
    // gamma bounded to [0.5, 1.5]
    Varf gamma = o::add_scalar(o::scale(o::vtanh(o::conv2d(gh, layer.gamma_b.w, layer.gamma_b.b, 1, 1)), 0.5f), 1.0f);
    Varf bh = o::leaky_relu(o::conv2d(ws_r, layer.beta_a.w, layer.beta_a.b, 1, 1), 0.2f);
    Varf beta = o::conv2d(bh, layer.beta_b.w, layer.beta_b.b, 1, 1);

    Varf out = o::shift_site(o::scale_site(norm, gamma), beta);
    return layer.final_layer ? out : o::leaky_relu(out, 0.2f);
}

Triplane GeneratorModel::generate_from_latent(const StyleLatent& ws) const {
    const auto& s = ws.value().shape();
    if (s.size() != 3 || s[0] != cfg_.latent_channels || s[1] != cfg_.latent_k || s[2] != cfg_.latent_k) {
        throw std::invalid_argument("generate_from_latent: latent shape " + ws.value().shape_str());
    }
    Varf f = seed_features_;
    for (const auto& layer : layers_) {
        if (f.value().dim(1) != layer.res) f = o::resize_bilinear(f, layer.res, layer.res);
        f = sml_forward(f, ws, layer);
    }
    Varf planes = o::conv2d(f, to_planes_.w, to_planes_.b, 1, 0);
    const int C = cfg_.plane_channels;
    return Triplane(o::slice_channels(planes, 0, C), o::slice_channels(planes, C, 2 * C),
                    o::slice_channels(planes, 2 * C, 3 * C));
}

Triplane GeneratorModel::generate(const Varf& img) const { return generate_from_latent(encode(img)); }

std::vector<std::pair<std::string, Varf>> GeneratorModel::named_params() const {
    std::vector<std::pair<std::string, Varf>> out;
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
        out.emplace_back("encoder." + std::to_string(i) + ".w", encoder_[i].w);
        out.emplace_back("encoder." + std::to_string(i) + ".b", encoder_[i].b);
    }
    out.emplace_back("seed_features", seed_features_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const std::string p = "sml." + std::to_string(l) + ".";
        const auto& ly = layers_[l];
        out.emplace_back(p + "conv.w", ly.conv.w);
        out.emplace_back(p + "conv.b", ly.conv.b);
        out.emplace_back(p + "gamma_a.w", ly.gamma_a.w);
        out.emplace_back(p + "gamma_a.b", ly.gamma_a.b);
        out.emplace_back(p + "gamma_b.w", ly.gamma_b.w);
        out.emplace_back(p + "gamma_b.b", ly.gamma_b.b);
        out.emplace_back(p + "beta_a.w", ly.beta_a.w);
        out.emplace_back(p + "beta_a.b", ly.beta_a.b);
        out.emplace_back(p + "beta_b.w", ly.beta_b.w);
        out.emplace_back(p + "beta_b.b", ly.beta_b.b);
    }
    out.emplace_back("to_planes.w", to_planes_.w);
    out.emplace_back("to_planes.b", to_planes_.b);
    return out;
}

std::vector<Varf> GeneratorModel::trainable_params() const {
    std::vector<Varf> out;
    for (auto& [name, v] : named_params()) out.push_back(v);
    return out;
}

Checkpoint GeneratorModel::to_checkpoint(const std::string& phase, std::uint64_t seed) const {
    Checkpoint ck;
    ck.meta["format"] = "styleplane-generator";
    ck.meta["version"] = 1;
    ck.meta["phase"] = phase;
    ck.meta["seed"] = seed;
    ck.meta["config"] = {{"image_res", cfg_.image_res},
                         {"latent_channels", cfg_.latent_channels},
                         {"latent_k", cfg_.latent_k},
                         {"plane_channels", cfg_.plane_channels},
                         {"plane_res", cfg_.plane_res},
                         {"sml_layers", cfg_.sml_layers},
                         {"modnet_hidden", cfg_.modnet_hidden}};
    for (const auto& [name, v] : named_params()) ck.params.emplace_back(name, v.value());
    return ck;
}

GeneratorModel GeneratorModel::from_checkpoint(const Checkpoint& ck) {
    if (!ck.meta.contains("config")) throw std::runtime_error("checkpoint: missing generator config");
    const auto& c = ck.meta["config"];
    GeneratorConfig cfg;
    cfg.image_res = c.at("image_res");
    cfg.latent_channels = c.at("latent_channels");
    cfg.latent_k = c.at("latent_k");
    cfg.plane_channels = c.at("plane_channels");
    cfg.plane_res = c.at("plane_res");
    cfg.sml_layers = c.at("sml_layers");
    cfg.modnet_hidden = c.at("modnet_hidden");
    GeneratorModel m(cfg, ck.meta.value("seed", std::uint64_t{0}));
    for (auto& [name, v] : m.named_params()) {
        const Tensorf* t = ck.find(name);
        if (!t) throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
        if (t->shape() != v.value().shape()) {
            throw std::runtime_error("checkpoint: parameter '" + name + "' has shape " + t->shape_str() +
                                     ", expected " + v.value().shape_str());
        }
        v.mutable_value() = *t;
    }
    return m;
}

StyleLatent mix_styles(const StyleLatent& a, const StyleLatent& b, float alpha) {
    return Varf::constant(mix_styles(a.value(), b.value(), alpha));
}

Tensorf mix_styles(const Tensorf& a, const Tensorf& b, float alpha) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("mix_styles: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    if (!(alpha >= 0.0f && alpha <= 1.0f)) {
        throw std::invalid_argument("mix_styles: alpha must be in [0,1], got " + std::to_string(alpha));
    }
    if (alpha == 0.0f) return a;
    if (alpha == 1.0f) return b;
    Tensorf out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (1.0f - alpha) * a[i] + alpha * b[i];
    return out;
}

}  // namespace styleplane
