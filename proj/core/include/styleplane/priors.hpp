#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "json.hpp"
#include "styleplane/triplane.hpp"

namespace styleplane {

// Procedural scene prior: a smooth random triplane (coarse noise grid
// upsampled to R) plus a fixed decoder. Every identity shares a common base
// triplane; the identity seed adds a smaller seeded variation on top, so the
// family of scenes is learnable from finitely many samples.
struct ScenePriorConfig {
    std::uint64_t identity_seed = 1;  // w: which identity
    std::uint64_t decoder_seed = 7;   // theta: fixed decoder + super-resolver
    float bandwidth = 1.0f;           // scales all non-constant plane content; 0 => flat
    std::uint64_t base_seed = 99;     // shared across identities
    float base_scale = 2.0f;
    float variation_scale = 0.4f;
    int plane_channels = 8;
    int plane_res = 32;
    int coarse_res = 4;  // resolution of the noise grid before upsampling
    int decoder_hidden = 16;
    float decoder_gain = 3.0f;  // scales decoder weights: contrast/view-dependence
};

void to_json(nlohmann::json& j, const ScenePriorConfig& c);
void from_json(const nlohmann::json& j, ScenePriorConfig& c);

// Caches the sampled triplane, decoder and super-resolver for repeated
// rendering of one identity.
class ScenePrior {
public:
    explicit ScenePrior(const ScenePriorConfig& cfg);

    const ScenePriorConfig& config() const { return cfg_; }
    const Triplane& triplane() const { return triplane_; }
    const DecoderMLP& decoder() const { return decoder_; }
    const SuperResolver& super_resolver() const { return sr_; }

    // [3,2h,2w] detached image of this identity from the given view
    Tensorf render_view(const CameraView& view, const RenderOptions& opt = {}) const;

private:
    ScenePriorConfig cfg_;
    Triplane triplane_;
    DecoderMLP decoder_;
    SuperResolver sr_;
};

std::pair<Triplane, DecoderMLP> scene_sample(const ScenePriorConfig& cfg);
Tensorf scene_render(const ScenePriorConfig& cfg, const CameraView& view,
                     const RenderOptions& opt = {});

// Mock style editor implementing the noise-blend and guided-edit interface.
struct StyleEditorConfig {
    std::uint64_t editor_seed = 0;  // phi
    std::string prompt;             // t
    std::string decorative_prompt = "realistic, detail, 8k, photorealistic";
    std::string negative_prompt = "unclear facial features, non-face objects, ugly, bad";
    float guidance_image = 1.5f;  // g_img
    float guidance_text = 20.0f;  // g_txt
    float tau = 0.9f;             // noise level in [0,1]
    int steps = 20;               // S
    float view_jitter = 0.15f;    // epsilon_view, per-view style inconsistency
};

void to_json(nlohmann::json& j, const StyleEditorConfig& c);
void from_json(const nlohmann::json& j, StyleEditorConfig& c);

struct PromptBundle {
    std::string positive;  // "turn the head into {t}, {t_d}"
    std::string negative;  // t_n
    std::uint64_t style_hash() const;
};

PromptBundle assemble_prompt(const std::string& t, const std::string& t_d,
                             const std::string& t_n);
PromptBundle assemble_prompt(const StyleEditorConfig& cfg);

// mock latent space E(I): 4x area downsample of a [3,H,W] image
Tensorf encode_latent(const Tensorf& img);

// DDPM forward at step s = round(tau*S): sqrt(abar_s)*z + sqrt(1-abar_s)*n,
// linear beta schedule 1e-4 -> 0.2 over S steps. tau=0 returns z exactly.
double ddpm_alpha_bar(int s, int S = 20);
Tensorf add_noise(const Tensorf& z, const Tensorf& n, float tau, int S = 20);

// Parametric stylization parameters, a pure function of hash(t*) and phi
// (plus the epsilon_view jitter when derived for a concrete view).
struct StyleParams {
    std::array<float, 9> color;  // row-major 3x3 mixing matrix
    std::array<float, 3> gamma;  // per-channel exponent
    float warp_amp = 0.0f;       // sinusoidal warp amplitude, pixels
    float warp_freq = 1.0f;
    float warp_phase_x = 0.0f;
    float warp_phase_y = 0.0f;
    float overlay_amp = 0.0f;
    std::uint64_t overlay_seed = 0;

    std::array<float, 17> flat() const;  // continuous parameters only
};

StyleParams base_style_params(const StyleEditorConfig& cfg);
StyleParams view_style_params(const StyleEditorConfig& cfg, const CameraView& view);

// Guided edit: blend of the stylized image (strength g_txt/(1+g_txt)) and the
// upscaled latent anchor (weight (g_img/(1+g_img))*(1-tau)), clamped to [0,1].
Tensorf edit(const Tensorf& img, const Tensorf& n_star, const StyleEditorConfig& cfg,
             const CameraView& view);

}  // namespace styleplane
