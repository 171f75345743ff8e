#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "styleplane/adam.hpp"
#include "styleplane/dataset.hpp"
#include "styleplane/generator.hpp"

namespace styleplane {

// Fixed-seed, never-trained multi-scale conv feature extractor standing in
// for a learned perceptual metric. 3 scales (1x, 1/2, 1/4), 4 convs each.
class PerceptualProxy {
public:
    explicit PerceptualProxy(std::uint64_t seed = 2024);

    // one feature map per scale; weights are constants, so gradients flow
    // only through the image argument
    std::vector<Varf> features(const Varf& img) const;
    std::vector<Tensorf> features(const Tensorf& img) const;

private:
    std::vector<std::vector<ConvParam>> scales_;
};

struct TrainConfig {
    int iterations = 500;
    int batch_size = 4;
    float lambda_rec = 10.0f;
    float lambda_dr = 0.2f;
    float dr_noise_scale = 0.005f;  // s_delta
    int dr_points = 1024;
    AdamHyper<float> adam;
    float lr_decay = 1.0f;  // final lr fraction, cosine-interpolated; 1 = constant
    std::uint64_t seed = 0;
    int checkpoint_every = 0;       // 0: only the final checkpoint
    int train_render_size = 16;     // neural resolution for fine-tuning renders
    int train_render_samples = 16;  // ray samples for fine-tuning renders
};

// Eq. 5: L1 plus mean L1 distance between proxy feature maps at all scales.
Varf loss_rec(const Varf& rendered, const Varf& target, const PerceptualProxy& proxy);

// Eq. 6: mean |sigma(x) - sigma(x + delta*x)| over volume-uniform points.
Varf loss_dr(const Triplane& tp, const DecoderMLP& dec, const TrainConfig& cfg, Rng& rng);

struct HistoryRow {
    int iteration = 0;
    float l_rec = 0.0f;
    float l_dr = 0.0f;
    float l_total = 0.0f;
};

struct TrainResult {
    std::vector<HistoryRow> history;
    int iterations_run = 0;
    bool aborted_non_finite = false;
};

void save_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& history);

// One pretraining sample: a portrait and its ground-truth stacked triplane p.
struct SceneSample {
    Tensorf image;          // [3,64,64]
    Tensorf target_planes;  // [3,C,R,R]
};
using SceneSource = std::function<SceneSample(int iteration, int item)>;

// The finite identity pool a scene source draws from, exposed so held-out
// views of the same identities can be evaluated.
std::vector<ScenePriorConfig> scene_source_pool(const ScenePriorConfig& base, std::uint64_t seed,
                                                int pool_size = 8);

// Draws identities from a finite pool (fresh random views every call) so the
// family of scenes is learnable; pool_size identities derived from base/seed.
SceneSource make_scene_source(const ScenePriorConfig& base, std::uint64_t seed, int pool_size = 8);

// Eq. 4: minimize E|H(I_v) - p|. Aborts on a non-finite loss, retaining the
// last good checkpoint when a checkpoint path is set.
TrainResult pretrain(GeneratorModel& model, const SceneSource& source, const TrainConfig& cfg,
                     const std::filesystem::path& checkpoint_path = {});

// Algorithm 2: cross-view reconstruction fine-tuning. Only the generator
// updates; decoder and super-resolver stay frozen.
TrainResult finetune(GeneratorModel& model, const FewShotDataset& ds, const DecoderMLP& dec,
                     const SuperResolver& sr, const TrainConfig& cfg,
                     const std::filesystem::path& checkpoint_path = {});

// Checkpoint-gated entry: refuses checkpoints that are not from pretraining
// (or a previous fine-tune), per the from-scratch failure mode.
GeneratorModel load_pretrained(const Checkpoint& ck);

// Hash over a parameter list, for the frozen-renderer contract.
std::uint64_t params_hash(const std::vector<std::pair<std::string, Varf>>& params);

}  // namespace styleplane
