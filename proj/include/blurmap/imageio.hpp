#pragma once

#include <cstdint>
#include <filesystem>

#include "blurmap/grid.hpp"
#include "blurmap/tensor.hpp"

namespace blurmap {

// 8-bit image file -> (1, 3, h, w) in [0, 1]. Grayscale files are replicated to 3 channels.
Tensor read_rgb(const std::filesystem::path& path);
// (1, 3, h, w) or (1, 1, h, w) in [0, 1] -> 8-bit file, value round(255 v) clamped.
void write_rgb(const std::filesystem::path& path, const Tensor& image);

// Mask file: pixel > 127 -> 1.
GroundTruth read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const GroundTruth& gt);

// Blur-map file: 8-bit grayscale, value = round(255 p).
BlurMap read_map(const std::filesystem::path& path);
void write_map(const std::filesystem::path& path, const BlurMap& map);
Grid<std::uint8_t> quantize_map(const BlurMap& map);

void write_gray8(const std::filesystem::path& path, const Grid<std::uint8_t>& g);
Grid<std::uint8_t> read_gray8(const std::filesystem::path& path);

bool is_image_file(const std::filesystem::path& path);

}  // namespace blurmap
