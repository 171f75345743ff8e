#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "styleplane/metrics.hpp"

using namespace styleplane;

TEST_CASE("psnr: sentinel, forced 20 dB, recompute, monotone under noise") {
    Rng rng(3);
    Tensorf ref = Tensorf::uniform({3, 16, 16}, rng, 0.0f, 1.0f);
    CHECK(psnr(ref, ref) == 99.0f);

    Tensorf shifted = ref;
    for (auto& v : shifted.vec()) v += 0.1f;
    CHECK(psnr(shifted, ref) == doctest::Approx(20.0f).epsilon(1e-4));

    Tensorf other = Tensorf::uniform({3, 16, 16}, rng, 0.0f, 1.0f);
    double mse = 0;
    for (std::size_t i = 0; i < ref.numel(); ++i) {
        const double d = other[i] - ref[i];
        mse += d * d;
    }
    mse /= static_cast<double>(ref.numel());
    CHECK(psnr(other, ref) == doctest::Approx(10.0 * std::log10(1.0 / mse)).epsilon(1e-4));

    float prev = 100.0f;
    for (float sigma : {0.01f, 0.05f, 0.1f}) {
        Rng nr(7);
        Tensorf noisy = ref;
        for (auto& v : noisy.vec()) v += sigma * static_cast<float>(nr.gaussian());
        const float p = psnr(noisy, ref);
        CHECK(p < prev);
        prev = p;
    }

    CHECK_THROWS_AS(psnr(ref, Tensorf({3, 8, 8}, 0.0f)), std::invalid_argument);
}

TEST_CASE("cross_view_consistency: zero for identical, permutation-invariant") {
    PerceptualProxy proxy;
    Rng rng(5);
    Tensorf img = Tensorf::uniform({3, 32, 32}, rng, 0.0f, 1.0f);
    ConsistencyReport same = cross_view_consistency({img, img, img}, proxy);
    CHECK(same.dispersion == 0.0f);
    CHECK(same.stats.size() == 3);
    CHECK(same.stats[0].size() == 9);  // 3x(mean,std) + 3 proxy scales

    std::vector<Tensorf> imgs;
    for (int k = 0; k < 4; ++k) imgs.push_back(Tensorf::uniform({3, 32, 32}, rng, 0.0f, 1.0f));
    const float d0 = cross_view_consistency(imgs, proxy).dispersion;
    CHECK(d0 > 0.0f);
    std::vector<Tensorf> shuffled = {imgs[2], imgs[0], imgs[3], imgs[1]};
    CHECK(cross_view_consistency(shuffled, proxy).dispersion == doctest::Approx(d0).epsilon(1e-6));

    CHECK_THROWS_AS(cross_view_consistency({img}, proxy), std::invalid_argument);
}

TEST_CASE("consistent renders disperse less than the jittered mock edits") {
    PerceptualProxy proxy;
    ScenePrior prior(ScenePriorConfig{});
    StyleEditorConfig e;
    e.prompt = "bronze statue";
    FewShotDataset ds = build_dataset(prior.config(), e, 3, 7);

    std::vector<Tensorf> raw, edited;
    for (const auto& entry : ds.entries) {
        raw.push_back(entry.source);
        edited.push_back(entry.stylized);
    }
    const float d_raw = cross_view_consistency(raw, proxy).dispersion;
    const float d_edit = cross_view_consistency(edited, proxy).dispersion;
    CHECK(d_raw < d_edit);
}

TEST_CASE("total_variation: constant and step-edge analytic values") {
    CHECK(total_variation(Tensorf({8, 8}, 0.7f)) == 0.0f);

    // vertical step edge of height h: W horizontal jumps of size h
    const float h = 0.5f;
    Tensorf step({6, 8}, 0.0f);
    for (int y = 0; y < 6; ++y)
        for (int x = 4; x < 8; ++x) step.at(y, x) = h;
    CHECK(total_variation(step) == doctest::Approx(h * 6));
}

TEST_CASE("depth_smoothness: averages per-view map TV") {
    ScenePrior prior(ScenePriorConfig{});
    std::vector<CameraView> views = {{0, 0}, {10, -15}};
    const float s = depth_smoothness(prior.triplane(), prior.decoder(), views);
    CHECK(s > 0.0f);
    const float a = total_variation(render_depth(prior.triplane(), prior.decoder(), views[0]));
    const float b = total_variation(render_depth(prior.triplane(), prior.decoder(), views[1]));
    CHECK(s == doctest::Approx(0.5f * (a + b)));
    CHECK_THROWS_AS(depth_smoothness(prior.triplane(), prior.decoder(), {}), std::invalid_argument);
}
