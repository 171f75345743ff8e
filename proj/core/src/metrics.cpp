#include "styleplane/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace styleplane {

float psnr(const Tensorf& img, const Tensorf& ref) {
    if (!img.same_shape(ref)) {
        throw std::invalid_argument("psnr: shape mismatch " + img.shape_str() + " vs " +
                                    ref.shape_str());
    }
    double mse = 0;
    for (std::size_t i = 0; i < img.numel(); ++i) {
        const double d = static_cast<double>(img[i]) - static_cast<double>(ref[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(img.numel());
    if (mse == 0) return 99.0f;
    return std::min(99.0f, static_cast<float>(10.0 * std::log10(1.0 / mse)));
}

ConsistencyReport cross_view_consistency(const std::vector<Tensorf>& images,
                                         const PerceptualProxy& proxy) {
    if (images.size() < 2) {
        throw std::invalid_argument("cross_view_consistency: need at least 2 images");
    }
    ConsistencyReport rep;
    for (const auto& img : images) {
        // raw color moments: per-channel mean and std
        std::vector<float> s;
        const std::size_t plane = img.numel() / 3;
        for (int c = 0; c < 3; ++c) {
            double mean = 0, var = 0;
            for (std::size_t i = 0; i < plane; ++i) mean += img[c * plane + i];
            mean /= static_cast<double>(plane);
            for (std::size_t i = 0; i < plane; ++i) {
                const double d = img[c * plane + i] - mean;
                var += d * d;
            }
            s.push_back(static_cast<float>(mean));
            s.push_back(static_cast<float>(std::sqrt(var / static_cast<double>(plane))));
        }
        // perceptual proxy: global average of each feature map
        for (const auto& f : proxy.features(img)) {
            double m = 0;
            for (std::size_t i = 0; i < f.numel(); ++i) m += f[i];
            s.push_back(static_cast<float>(m / static_cast<double>(f.numel())));
        }
        rep.stats.push_back(std::move(s));
    }

    double acc = 0;
    int pairs = 0;
    for (std::size_t a = 0; a < rep.stats.size(); ++a) {
        for (std::size_t b = a + 1; b < rep.stats.size(); ++b) {
            double d2 = 0;
            for (std::size_t k = 0; k < rep.stats[a].size(); ++k) {
                const double d = rep.stats[a][k] - rep.stats[b][k];
                d2 += d * d;
            }
            acc += std::sqrt(d2);
            ++pairs;
        }
    }
    rep.dispersion = static_cast<float>(acc / pairs);
    return rep;
}

float total_variation(const Tensorf& map) {
    if (map.rank() != 2) throw std::invalid_argument("total_variation: expected [H,W]");
    const int H = map.dim(0), W = map.dim(1);
    double tv = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x + 1 < W; ++x) tv += std::abs(map.at(y, x + 1) - map.at(y, x));
    for (int y = 0; y + 1 < H; ++y)
        for (int x = 0; x < W; ++x) tv += std::abs(map.at(y + 1, x) - map.at(y, x));
    return static_cast<float>(tv);
}

float depth_smoothness(const Triplane& tp, const DecoderMLP& dec,
                       const std::vector<CameraView>& views, const RenderOptions& opt) {
    if (views.empty()) throw std::invalid_argument("depth_smoothness: need at least 1 view");
    double acc = 0;
    for (const auto& v : views) acc += total_variation(render_depth(tp, dec, v, opt));
    return static_cast<float>(acc / static_cast<double>(views.size()));
}

}  // namespace styleplane
