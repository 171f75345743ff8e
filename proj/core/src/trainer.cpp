#include "styleplane/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "styleplane/serialization.hpp"

namespace styleplane {

namespace o = ops;

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL * (tag + 1));
    return splitmix64(s);
}

// plane p of a stacked [3,C,R,R] tensor, as a contiguous [C,R,R] copy
Tensorf stacked_plane(const Tensorf& stacked, int p) {
    const int C = stacked.dim(1), R = stacked.dim(2);
    Tensorf out({C, R, R}, 0.0f);
    const std::size_t n = out.numel();
    std::copy_n(stacked.vec().begin() + static_cast<std::ptrdiff_t>(p * n), n, out.vec().begin());
    return out;
}


float cosine_lr(const TrainConfig& cfg, int it) {
    if (cfg.lr_decay >= 1.0f || cfg.iterations < 2) return cfg.adam.lr;
    const float t = static_cast<float>(it - 1) / static_cast<float>(cfg.iterations - 1);
    const float frac = cfg.lr_decay + (1.0f - cfg.lr_decay) * 0.5f * (1.0f + std::cos(3.14159265f * t));
    return cfg.adam.lr * frac;
}

}  // namespace

PerceptualProxy::PerceptualProxy(std::uint64_t seed) {
    Rng rng(seed);
    for (int scale = 0; scale < 3; ++scale) {
        std::vector<ConvParam> convs;
        int cin = 3;
        for (int layer = 0; layer < 4; ++layer) {
            const int cout = 8;
            const float scale_w = std::sqrt(2.0f / static_cast<float>(cin * 9));
            ConvParam p;
            p.w = Varf::constant(Tensorf::randn({cout, cin, 3, 3}, rng, scale_w));
            p.b = Varf::constant(Tensorf::zeros({cout}));
            convs.push_back(std::move(p));
            cin = cout;
        }
        scales_.push_back(std::move(convs));
    }
}

std::vector<Varf> PerceptualProxy::features(const Varf& img) const {
    std::vector<Varf> out;
    Varf x = img;
    for (const auto& convs : scales_) {
        Varf f = x;
        for (std::size_t l = 0; l < convs.size(); ++l) {
            f = o::conv2d(f, convs[l].w, convs[l].b, 1, 1);
            if (l + 1 < convs.size()) f = o::leaky_relu(f, 0.2f);
        }
        out.push_back(f);
        if (&convs != &scales_.back()) x = o::avg_pool2(x);
    }
    return out;
}

std::vector<Tensorf> PerceptualProxy::features(const Tensorf& img) const {
    std::vector<Tensorf> out;
    for (auto& f : features(Varf::constant(img))) out.push_back(f.value());
    return out;
}

Varf loss_rec(const Varf& rendered, const Varf& target, const PerceptualProxy& proxy) {
    if (!rendered.value().same_shape(target.value())) {
        throw std::invalid_argument("loss_rec: shape mismatch " + rendered.value().shape_str() +
                                    " vs " + target.value().shape_str());
    }
    Varf loss = o::l1_loss(rendered, target);
    const auto fr = proxy.features(rendered);
    const auto ft = proxy.features(target);
    for (std::size_t s = 0; s < fr.size(); ++s) {
        loss = o::add(loss, o::scale(o::l1_loss(fr[s], ft[s]), 1.0f / static_cast<float>(fr.size())));
    }
    return loss;
}

Varf loss_dr(const Triplane& tp, const DecoderMLP& dec, const TrainConfig& cfg, Rng& rng) {
    if (cfg.dr_points < 1) throw std::invalid_argument("loss_dr: dr_points must be >= 1");
    const int N = cfg.dr_points;
    Tensorf pts({N, 3}, 0.0f);
    Tensorf perturbed({N, 3}, 0.0f);
    for (int i = 0; i < N; ++i) {
        for (int d = 0; d < 3; ++d) {
            const float x = rng.uniform(-1.0f, 1.0f);
            const float delta = cfg.dr_noise_scale * static_cast<float>(rng.gaussian());
            pts.at(i, d) = x;
            perturbed.at(i, d) = x + delta * x;
        }
    }
    Varf s1 = render_density(tp, dec, pts);
    Varf s2 = render_density(tp, dec, perturbed);
    return o::mean(o::vabs(o::sub(s1, s2)));
}

void save_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& history) {
    std::ofstream os(path);
    os << "iteration,l_rec,l_dr,l_total\n";
    for (const auto& r : history) {
        os << r.iteration << "," << r.l_rec << "," << r.l_dr << "," << r.l_total << "\n";
    }
    if (!os) throw std::runtime_error("save_history_csv: failed to write " + path.string());
}

std::vector<ScenePriorConfig> scene_source_pool(const ScenePriorConfig& base, std::uint64_t seed,
                                                int pool_size) {
    if (pool_size < 1) throw std::invalid_argument("scene_source_pool: empty identity pool");
    std::vector<ScenePriorConfig> pool;
    for (int idx = 0; idx < pool_size; ++idx) {
        ScenePriorConfig cfg = base;
        cfg.identity_seed = mix_seed(seed, 0xD5ULL + static_cast<std::uint64_t>(idx));
        pool.push_back(cfg);
    }
    return pool;
}

SceneSource make_scene_source(const ScenePriorConfig& base, std::uint64_t seed, int pool_size) {
    const std::vector<ScenePriorConfig> pool = scene_source_pool(base, seed, pool_size);
    auto cache = std::make_shared<std::map<int, std::shared_ptr<ScenePrior>>>();
    return [pool, seed, pool_size, cache](int iteration, int item) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(iteration) * 131 + item));
        const int idx = rng.uniform_int(0, pool_size - 1);
        auto it = cache->find(idx);
        if (it == cache->end()) {
            it = cache->emplace(idx, std::make_shared<ScenePrior>(pool[static_cast<std::size_t>(idx)]))
                     .first;
        }
        CameraView view;
        view.pitch_deg = rng.uniform(-30.0f, 30.0f);
        view.yaw_deg = rng.uniform(-30.0f, 30.0f);
        SceneSample s;
        s.image = it->second->render_view(view);
        s.target_planes = it->second->triplane().stacked();
        return s;
    };
}

TrainResult pretrain(GeneratorModel& model, const SceneSource& source, const TrainConfig& cfg,
                     const std::filesystem::path& checkpoint_path) {
    if (cfg.iterations < 1) throw std::invalid_argument("pretrain: iterations must be >= 1");
    AdamOptimizer<float> opt(model.trainable_params(), cfg.adam);
    TrainResult res;

    for (int it = 1; it <= cfg.iterations; ++it) {
        opt.set_lr(cosine_lr(cfg, it));
        opt.zero_grad();
        Varf loss;
        for (int b = 0; b < cfg.batch_size; ++b) {
            SceneSample sample = source(it, b);
            Triplane tp = model.generate(sample.image);
            Varf item = o::scale(
                o::add(o::add(o::l1_loss(tp.xy, Varf::constant(stacked_plane(sample.target_planes, 0))),
                              o::l1_loss(tp.xz, Varf::constant(stacked_plane(sample.target_planes, 1)))),
                       o::l1_loss(tp.yz, Varf::constant(stacked_plane(sample.target_planes, 2)))),
                1.0f / 3.0f);
            loss = (b == 0) ? item : o::add(loss, item);
        }
        loss = o::scale(loss, 1.0f / static_cast<float>(cfg.batch_size));
        const float lv = loss.value()[0];
        if (!std::isfinite(lv)) {
            res.aborted_non_finite = true;
            break;
        }
        backward(loss);
        opt.step();
        res.history.push_back({it, lv, 0.0f, lv});
        res.iterations_run = it;
        const bool cadence = cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0;
        if (!checkpoint_path.empty() && (cadence || it == cfg.iterations)) {
            save_checkpoint(checkpoint_path, model.to_checkpoint("pretrain", cfg.seed));
        }
    }
    return res;
}

GeneratorModel load_pretrained(const Checkpoint& ck) {
    const std::string phase = ck.meta.value("phase", "");
    if (phase != "pretrain" && phase != "finetune") {
        throw std::runtime_error("fine-tuning requires a pretraining checkpoint, got phase '" +
                                 phase + "'");
    }
    return GeneratorModel::from_checkpoint(ck);
}

TrainResult finetune(GeneratorModel& model, const FewShotDataset& ds, const DecoderMLP& dec,
                     const SuperResolver& sr, const TrainConfig& cfg,
                     const std::filesystem::path& checkpoint_path) {
    if (cfg.iterations < 1) throw std::invalid_argument("finetune: iterations must be >= 1");
    if (ds.entries.size() < 2) throw std::invalid_argument("finetune: need at least 2 views");
    if (cfg.lambda_rec < 0 || cfg.lambda_dr < 0) {
        throw std::invalid_argument("finetune: loss weights must be nonnegative");
    }

    const int n = static_cast<int>(ds.entries.size());
    const int out_res = 2 * cfg.train_render_size;
    const int full_res = ds.entries[0].stylized.dim(1);
    if (out_res > full_res || full_res % out_res != 0) {
        throw std::invalid_argument("finetune: train_render_size incompatible with dataset images");
    }

    // dataset targets pooled down to the training render resolution
    std::vector<Tensorf> targets;
    for (const auto& e : ds.entries) {
        Varf t = Varf::constant(e.stylized);
        for (int r = full_res; r > out_res; r /= 2) t = o::avg_pool2(t);
        targets.push_back(t.value());
    }

    PerceptualProxy proxy;
    AdamOptimizer<float> opt(model.trainable_params(), cfg.adam);
    Rng rng(mix_seed(cfg.seed, 0xF17E));
    TrainResult res;

    RenderOptions ropt;
    ropt.n_samples = cfg.train_render_samples;

    // per-epoch shuffled first views; second view drawn uniformly
    std::vector<int> epoch(static_cast<std::size_t>(n));
    std::iota(epoch.begin(), epoch.end(), 0);
    int cursor = n;  // forces a shuffle on first use

    for (int it = 1; it <= cfg.iterations; ++it) {
        opt.set_lr(cosine_lr(cfg, it));
        opt.zero_grad();
        Varf loss;
        float sum_rec = 0.0f, sum_dr = 0.0f;
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (cursor >= n) {
                for (int k = n - 1; k > 0; --k) {
                    const int j = rng.uniform_int(0, k);
                    std::swap(epoch[static_cast<std::size_t>(k)], epoch[static_cast<std::size_t>(j)]);
                }
                cursor = 0;
            }
            const int v1 = epoch[static_cast<std::size_t>(cursor++)];
            const int v2 = rng.uniform_int(0, n - 1);

            Triplane tp = model.generate(ds.entries[static_cast<std::size_t>(v1)].stylized);
            CameraView cam = ds.entries[static_cast<std::size_t>(v2)].view;
            cam.width = cfg.train_render_size;
            cam.height = cfg.train_render_size;
            Varf rendered = render(tp, dec, sr, cam, ropt).image;

            Varf rec = loss_rec(rendered, Varf::constant(targets[static_cast<std::size_t>(v2)]), proxy);
            Varf dr = loss_dr(tp, dec, cfg, rng);
            sum_rec += rec.value()[0];
            sum_dr += dr.value()[0];
            Varf item = o::add(o::scale(rec, cfg.lambda_rec), o::scale(dr, cfg.lambda_dr));
            loss = (b == 0) ? item : o::add(loss, item);
        }
        loss = o::scale(loss, 1.0f / static_cast<float>(cfg.batch_size));
        const float lv = loss.value()[0];
        if (!std::isfinite(lv)) {
            res.aborted_non_finite = true;
            break;
        }
        backward(loss);
        opt.step();
        res.history.push_back({it, sum_rec / cfg.batch_size, sum_dr / cfg.batch_size, lv});
        res.iterations_run = it;
        const bool cadence = cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0;
        if (!checkpoint_path.empty() && (cadence || it == cfg.iterations)) {
            save_checkpoint(checkpoint_path, model.to_checkpoint("finetune", cfg.seed));
        }
    }
    return res;
}

std::uint64_t params_hash(const std::vector<std::pair<std::string, Varf>>& params) {
    std::uint64_t h = fnv1a64("styleplane-params");
    for (const auto& [name, v] : params) h = tensor_content_hash(v.value(), fnv1a64(name, h));
    return h;
}

}  // namespace styleplane
