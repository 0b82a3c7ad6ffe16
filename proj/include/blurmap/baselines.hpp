#pragma once

#include <cstddef>
#include <vector>

#include "blurmap/grid.hpp"
#include "blurmap/tensor.hpp"

namespace blurmap {

using GrayImage = Grid<double>;

// 0.299 R + 0.587 G + 0.114 B of item 0 of a (n, 3, h, w) tensor. Single-channel input
// is returned as is.
GrayImage to_luma(const Tensor& rgb);

// Calibrated on the synthetic corpus: sharp texture maps below 0.2.
inline constexpr double kGradientTau = 0.05;
// Squashing of the power-spectral slope: conf = sigmoid((-slope - offset) / scale).
inline constexpr double kSlopeOffset = 3.0;
inline constexpr double kSlopeScale = 1.0;

struct PatchOptions {
  std::size_t patch = 17;   // odd
  std::size_t stride = 1;
};

// exp(-mean |grad| / tau) per patch; flat patches score 1.
BlurMap gradient_stat_map(const GrayImage& image, const PatchOptions& opts = {},
                          double tau = kGradientTau);

// Mean ring power |F|^2 for integer radii 0..p/2 of a square patch (no windowing).
std::vector<double> radial_power_spectrum(const GrayImage& patch);

// OLS slope of log profile[r] against log r over rings [first, last) with positive power.
double fit_log_slope(const std::vector<double>& profile, std::size_t first = 1,
                     std::size_t last = static_cast<std::size_t>(-1));

// Slope of one patch after mean removal and Hann windowing, fit over rings [2, p/2).
// Returns NaN for a zero-energy patch.
double patch_spectral_slope(const GrayImage& patch);

double slope_to_confidence(double slope);

BlurMap spectral_slope_map(const GrayImage& image, const PatchOptions& opts = {});

}  // namespace blurmap
