#include "styleplane/camera.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace styleplane {

namespace {

constexpr float kDegToRad = 0.017453292519943295f;

Vec3 normalize(Vec3 v) {
    const float n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    return {v[0] / n, v[1] / n, v[2] / n};
}

Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

}  // namespace

RayBundle make_rays(const CameraView& cam) {
    if (cam.radius <= 0.0f) throw std::invalid_argument("make_rays: radius must be > 0");
    if (!(cam.fov_y_deg > 0.0f && cam.fov_y_deg < 180.0f)) {
        throw std::invalid_argument("make_rays: fov_y must be in (0, 180)");
    }
    const float pitch = cam.pitch_deg * kDegToRad;
    const float yaw = cam.yaw_deg * kDegToRad;
    const Vec3 origin = {cam.radius * std::cos(pitch) * std::sin(yaw),
                         cam.radius * std::sin(pitch),
                         cam.radius * std::cos(pitch) * std::cos(yaw)};
    const Vec3 fwd = normalize({-origin[0], -origin[1], -origin[2]});
    const Vec3 right = normalize(cross(fwd, Vec3{0.0f, 1.0f, 0.0f}));
    const Vec3 up = cross(right, fwd);

    const float tan_half = std::tan(0.5f * cam.fov_y_deg * kDegToRad);
    const float aspect = static_cast<float>(cam.width) / static_cast<float>(cam.height);

    RayBundle rb;
    rb.origin = origin;
    rb.directions.reserve(static_cast<std::size_t>(cam.width) * cam.height);
    for (int r = 0; r < cam.height; ++r) {
        const float ny = (1.0f - 2.0f * (static_cast<float>(r) + 0.5f) / static_cast<float>(cam.height)) * tan_half;
        for (int c = 0; c < cam.width; ++c) {
            const float nx =
                (2.0f * (static_cast<float>(c) + 0.5f) / static_cast<float>(cam.width) - 1.0f) * tan_half * aspect;
            rb.directions.push_back(normalize({nx * right[0] + ny * up[0] + fwd[0],
                                               nx * right[1] + ny * up[1] + fwd[1],
                                               nx * right[2] + ny * up[2] + fwd[2]}));
        }
    }
    return rb;
}

std::vector<CameraView> make_view_grid(int i, float pitch_range_deg, float yaw_range_deg,
                                       const CameraView& base) {
    if (i < 1) throw std::invalid_argument("make_view_grid: i must be >= 1");
    std::vector<float> pitches, yaws;
    for (int k = 0; k < i; ++k) {
        const float t = i == 1 ? 0.0f : -1.0f + 2.0f * static_cast<float>(k) / static_cast<float>(i - 1);
        pitches.push_back(t * pitch_range_deg);
        yaws.push_back(t * yaw_range_deg);
    }
    std::vector<CameraView> views;
    views.reserve(static_cast<std::size_t>(i) * i);
    for (float p : pitches)
        for (float y : yaws) {
            CameraView v = base;
            v.pitch_deg = p;
            v.yaw_deg = y;
            views.push_back(v);
        }
    return views;
}

void save_view_manifest(const std::filesystem::path& path, const std::vector<CameraView>& views) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for write: " + path.string());
    for (const auto& v : views) os << v.pitch_deg << " " << v.yaw_deg << "\n";
}

std::vector<CameraView> load_view_manifest(const std::filesystem::path& path, const CameraView& base) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path.string());
    std::vector<CameraView> views;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        CameraView v = base;
        if (!(ls >> v.pitch_deg >> v.yaw_deg)) {
            throw std::runtime_error("view manifest: malformed line '" + line + "'");
        }
        views.push_back(v);
    }
    return views;
}

}  // namespace styleplane
