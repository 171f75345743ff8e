#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "styleplane/camera.hpp"
#include "styleplane/ops.hpp"

namespace styleplane {

using Varf = Var<float>;

// Three axis-aligned feature planes, each [C,R,R]. A 3D point's feature is
// the sum of the three bilinear plane lookups.
struct Triplane {
    Varf xy, xz, yz;

    Triplane() = default;
    Triplane(Varf xy_, Varf xz_, Varf yz_);

    int channels() const { return xy.value().dim(0); }
    int resolution() const { return xy.value().dim(1); }

    static Triplane constant(Tensorf xy, Tensorf xz, Tensorf yz);
    // Detached copy of the current values.
    Triplane detached() const;
    // Stacked [3,C,R,R] view of the values (for L1 supervision targets).
    Tensorf stacked() const;
    static Triplane from_stacked(const Tensorf& s, bool requires_grad = false);
};

// Features for query points in [-1,1]^3 (clamped). pts: [N,3] -> [N,C].
Varf sample_points(const Triplane& tp, const Tensorf& pts);

// Convenience single-point wrapper.
Tensorf sample_point(const Triplane& tp, const Vec3& p);

// 2-layer perceptron decoding a triplane feature into density and color.
struct DecoderMLP {
    Varf w_hidden, b_hidden;      // [C,hidden], [hidden]
    Varf w_sigma, b_sigma;        // [hidden,1], [1]
    Varf w_color, b_color;        // [hidden,3], [3]

    static DecoderMLP create(int feature_channels, int hidden, std::uint64_t seed,
                             bool trainable = false);

    struct Decoded {
        Varf sigma;  // [N], nonnegative (softplus)
        Varf color;  // [N,3], sigmoid
    };
    Decoded decode(const Varf& features) const;

    std::vector<std::pair<std::string, Varf>> named_params() const;
};

// Fixed 2x upsampler: bilinear upsample followed by one 3x3 conv. Weights are
// seeded at construction and never trained.
struct SuperResolver {
    Varf weight;  // [3,3,3,3]
    Varf bias;    // [3]

    static SuperResolver create(std::uint64_t seed);
    Varf apply(const Varf& img) const;

    std::vector<std::pair<std::string, Varf>> named_params() const;
};

struct RenderOptions {
    int n_samples = 32;
    float near = 2.0f;
    float far = 3.4f;
    std::array<float, 3> background = {0.5f, 0.5f, 0.5f};
    bool stratified_jitter = false;  // deterministic midpoints by default
    std::uint64_t jitter_seed = 0;
};

struct RenderResult {
    Varf image;            // [3,2h,2w] after super-resolution
    Varf neural_image;     // [3,h,w] pre-super-resolution
    Tensorf weight_sum;    // [h,w]
    Tensorf transmittance; // [h,w]
    Tensorf depth;         // [h,w], expected depth, far where empty
};

RenderResult render(const Triplane& tp, const DecoderMLP& dec, const SuperResolver& sr,
                    const CameraView& cam, const RenderOptions& opt = {});

// Density field evaluation sharing render's decoder path. pts: [N,3] -> [N].
Varf render_density(const Triplane& tp, const DecoderMLP& dec, const Tensorf& pts);

// Expected-depth map only (no color compositing kept on the graph).
Tensorf render_depth(const Triplane& tp, const DecoderMLP& dec, const CameraView& cam,
                     const RenderOptions& opt = {});

}  // namespace styleplane
