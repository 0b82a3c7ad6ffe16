#pragma once

#include <cstdint>

#include "blurmap/grid.hpp"
#include "blurmap/tensor.hpp"

namespace blurmap {

// Blur confidence [0,0.1) / [0.1,0.5) / [0.5,0.9) / [0.9,1]. Blurred pixels are background.
// Values are the 8-bit codes written to trimap files.
enum class TrimapLabel : std::uint8_t { fg = 0, prob_fg = 85, prob_bg = 170, bg = 255 };

using Trimap = Grid<TrimapLabel>;

// Mean of the blur map.
double blur_degree(const BlurMap& map);

TrimapLabel trimap_label(double confidence);
Trimap trimap(const BlurMap& map);
Grid<std::uint8_t> trimap_codes(const Trimap& t);

inline constexpr double kMagnifyThreshold = 0.1;
inline constexpr double kDefaultMagnifySigma = 4.0;

// Re-blurs pixels whose confidence exceeds thresh with a Gaussian (radius ceil(3 sigma))
// restricted to, and renormalized over, in-bounds pixels of that same set. Other pixels are
// copied unchanged. image is (1, c, h, w).
Tensor magnify_blur(const Tensor& image, const BlurMap& map, double sigma,
                    double thresh = kMagnifyThreshold);

}  // namespace blurmap
