#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "styleplane/tensor.hpp"

namespace styleplane {

// Pinhole camera orbiting the origin. pitch/yaw in degrees, (0,0) is the
// frontal view. width/height is the neural (pre-super-resolution) render
// resolution.
struct CameraView {
    float pitch_deg = 0.0f;
    float yaw_deg = 0.0f;
    float radius = 2.7f;
    float fov_y_deg = 18.0f;
    int width = 32;
    int height = 32;
};

using Vec3 = std::array<float, 3>;

struct RayBundle {
    Vec3 origin;
    std::vector<Vec3> directions;  // row-major over height x width, unit length
};

RayBundle make_rays(const CameraView& cam);

// i x i Cartesian product of uniformly spaced pitches and yaws, pitch-major.
// i=1 degenerates to the single centered view.
std::vector<CameraView> make_view_grid(int i, float pitch_range_deg = 30.0f,
                                       float yaw_range_deg = 30.0f,
                                       const CameraView& base = CameraView{});

void save_view_manifest(const std::filesystem::path& path, const std::vector<CameraView>& views);
std::vector<CameraView> load_view_manifest(const std::filesystem::path& path,
                                           const CameraView& base = CameraView{});

}  // namespace styleplane
