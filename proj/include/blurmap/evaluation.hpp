#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "blurmap/grid.hpp"

namespace blurmap {

inline constexpr std::size_t kDefaultThresholds = 256;

// Pixel counts aggregated over every image, one entry per threshold.
struct PRCurve {
  std::vector<double> thresholds;   // ascending, j/(n-1)
  std::vector<std::uint64_t> tp, fp, fn;
  std::vector<double> precision, recall, f;

  std::size_t size() const { return thresholds.size(); }
};

struct ImageScore {
  double best_threshold = 0.0;
  double best_f = 0.0;
};

struct EvalReport {
  double ods_f = 0.0;
  double ods_threshold = 0.0;
  double ois_f = 0.0;
  double ap = 0.0;
  std::vector<ImageScore> per_image;
  PRCurve curve;
};

std::vector<double> threshold_grid(std::size_t n_thresholds);

// F = 2PR/(P+R), 0 when P+R = 0.
double f_measure(double precision, double recall);

// Pixel is predicted blurred iff map >= t. Counts are summed over all images before
// forming precision (1 when nothing is predicted) and recall.
PRCurve pr_curve(std::span<const BlurMap> maps, std::span<const GroundTruth> gts,
                 std::size_t n_thresholds = kDefaultThresholds);

struct OdsResult {
  double threshold = 0.0;
  double f = 0.0;
};

// Best aggregated F; ties resolve to the lower threshold.
OdsResult ods(const PRCurve& curve);

// Best F of a single image over the grid. An image without blurred pixels scores 1 at
// thresholds where nothing is predicted and 0 elsewhere.
ImageScore best_image_f(const BlurMap& map, const GroundTruth& gt,
                        std::size_t n_thresholds = kDefaultThresholds);

// Mean of per-image best F.
double ois(std::span<const BlurMap> maps, std::span<const GroundTruth> gts,
           std::size_t n_thresholds = kDefaultThresholds);

// 101-point interpolated average precision.
double average_precision(const PRCurve& curve);

EvalReport evaluate(std::span<const BlurMap> maps, std::span<const GroundTruth> gts,
                    std::size_t n_thresholds = kDefaultThresholds);

// threshold,tp,fp,fn,precision,recall,f
void write_pr_csv(const PRCurve& curve, const std::filesystem::path& path);

}  // namespace blurmap
