#pragma once

#include <filesystem>

#include "styleplane/tensor.hpp"

namespace styleplane {

// img: [3,H,W] in [0,1] (clamped on write). 8-bit RGB PNG.
void save_png(const std::filesystem::path& path, const Tensorf& img);

// Single-channel map written as 8-bit grayscale, values linearly mapped from
// [lo, hi] (used for depth previews).
void save_png_gray(const std::filesystem::path& path, const Tensorf& map, float lo, float hi);

}  // namespace styleplane
