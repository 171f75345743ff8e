#pragma once

#include <vector>

#include "styleplane/trainer.hpp"

namespace styleplane {

// 10*log10(1/MSE) for images in [0,1]; identical images report the 99 dB
// sentinel instead of infinity.
float psnr(const Tensorf& img, const Tensorf& ref);

// Per-view style statistics and their spread across views. Lower dispersion
// means more consistent style.
struct ConsistencyReport {
    std::vector<std::vector<float>> stats;  // one statistics vector per view
    float dispersion = 0.0f;                // mean pairwise L2 distance
};

ConsistencyReport cross_view_consistency(const std::vector<Tensorf>& images,
                                         const PerceptualProxy& proxy);

// Mean total variation of the depth maps rendered from the given views.
float depth_smoothness(const Triplane& tp, const DecoderMLP& dec,
                       const std::vector<CameraView>& views, const RenderOptions& opt = {});

// Total variation of a single [H,W] map (sum of |horizontal| + |vertical|
// neighbor differences).
float total_variation(const Tensorf& map);

}  // namespace styleplane
