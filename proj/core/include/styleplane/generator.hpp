#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "styleplane/serialization.hpp"
#include "styleplane/triplane.hpp"

namespace styleplane {

// Desk-scale defaults. Paper scale would be k=32, R=256 with 96 total plane
// channels; that preset is not CPU-feasible here.
struct GeneratorConfig {
    int image_res = 64;        // encoder input resolution
    int latent_channels = 64;  // c of the style latent
    int latent_k = 8;          // spatial extent of the style latent
    int plane_channels = 8;    // C per triplane plane
    int plane_res = 32;        // R
    int sml_layers = 7;
    int modnet_hidden = 16;    // hidden width of the gamma/beta networks

    bool operator==(const GeneratorConfig&) const = default;
};

struct ConvParam {
    Varf w;  // [Co,Ci,kh,kw]
    Varf b;  // [Co]
};

// One stylized modulation layer: base conv, channel normalization, and
// per-site scale/shift predicted from the style latent.
struct SMLayer {
    int res = 0;
    int cin = 0;
    int cout = 0;
    bool final_layer = false;
    ConvParam conv;
    ConvParam gamma_a, gamma_b;  // latent -> hidden -> 1
    ConvParam beta_a, beta_b;
};

using StyleLatent = Varf;  // [c,k,k]

class GeneratorModel {
public:
    GeneratorModel(const GeneratorConfig& cfg, std::uint64_t seed);

    const GeneratorConfig& config() const { return cfg_; }

    // image [3,image_res,image_res] -> style latent [c,k,k]
    StyleLatent encode(const Varf& img) const;
    StyleLatent encode(const Tensorf& img) const { return encode(Varf::constant(img)); }

    // full forward: encode then run the modulation stack
    Triplane generate(const Varf& img) const;
    Triplane generate(const Tensorf& img) const { return generate(Varf::constant(img)); }

    // run the modulation stack from an externally supplied latent (style mixing)
    Triplane generate_from_latent(const StyleLatent& ws) const;

    // Eq. 3 layer forward, exposed for testing. ws is the full-size latent.
    Varf sml_forward(const Varf& features, const StyleLatent& ws, const SMLayer& layer) const;

    const std::vector<SMLayer>& layers() const { return layers_; }
    const Varf& seed_features() const { return seed_features_; }

    std::vector<std::pair<std::string, Varf>> named_params() const;
    std::vector<Varf> trainable_params() const;

    Checkpoint to_checkpoint(const std::string& phase, std::uint64_t seed) const;
    static GeneratorModel from_checkpoint(const Checkpoint& ck);

private:
    GeneratorModel() = default;
    void init_params(std::uint64_t seed);

    GeneratorConfig cfg_;
    std::vector<ConvParam> encoder_;  // stride-2 pyramid then final stride-1 conv
    Varf seed_features_;              // learned constant [c0,4,4]
    std::vector<SMLayer> layers_;
    ConvParam to_planes_;             // 1x1 conv to 3*C channels
};

// (1-alpha) * a + alpha * b in the style latent space
StyleLatent mix_styles(const StyleLatent& a, const StyleLatent& b, float alpha);
Tensorf mix_styles(const Tensorf& a, const Tensorf& b, float alpha);

}  // namespace styleplane
