#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "blurmap/grid.hpp"
#include "blurmap/tensor.hpp"

namespace blurmap {

enum class Category { motion, defocus, synthetic };

// Axis-aligned rectangle in pixel coordinates.
struct Region {
  std::size_t top = 0, left = 0, height = 0, width = 0;
};

std::string_view to_string(Category c);

// One labeled image. image is (1, 3, h, w); values in [0, 1] until mean subtraction.
struct Sample {
  Tensor image;
  GroundTruth gt;
  std::string id;
  Category category = Category::synthetic;
  // Synthetic samples only: inserted constant patch (gt = 0), if any.
  std::optional<Region> flat_patch;
};

// Files of one corpus entry; pixels are loaded on demand.
struct SampleRef {
  std::string id;
  std::filesystem::path image;
  std::filesystem::path mask;
  Category category = Category::synthetic;
};

struct SplitSpec {
  enum class Rule { odd_train, even_train, custom };
  Rule rule = Rule::odd_train;
  std::vector<std::string> train_ids;   // custom only; every other stem goes to test

  static SplitSpec odd() { return {Rule::odd_train, {}}; }
  static SplitSpec even() { return {Rule::even_train, {}}; }
  static SplitSpec custom(std::vector<std::string> ids) { return {Rule::custom, std::move(ids)}; }
};

SplitSpec parse_split(std::string_view s);

struct CorpusStats {
  std::size_t images = 0;
  std::size_t motion = 0;
  std::size_t defocus = 0;
  std::uint64_t pixels = 0;
  std::uint64_t blurred_pixels = 0;

  double blurred_fraction() const {
    return pixels == 0 ? 0.0 : static_cast<double>(blurred_pixels) / static_cast<double>(pixels);
  }
};

struct Dataset {
  std::vector<SampleRef> train;
  std::vector<SampleRef> test;
  CorpusStats stats;
};

// Layout: <root>/image/<stem>.<ext> with masks at <root>/gt/<stem>.<ext>.
// Stems are ordered lexicographically; index 1 is the first stem.
Dataset ingest(const std::filesystem::path& root, const SplitSpec& split);

Sample load_sample(const SampleRef& ref);

// Default ImageNet mean in [0, 1] scale.
inline constexpr std::array<double, 3> kDefaultMeanRgb = {0.4815, 0.4578, 0.4082};

// Bilinear image resize to target x target, nearest-neighbour gt resize, mean subtraction.
Sample preprocess(const Sample& sample, std::size_t target,
                  const std::array<double, 3>& mean_rgb = kDefaultMeanRgb);

// Half-pixel-centred bilinear resize with edge clamping, per channel.
Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);
BlurMap resize_bilinear(const BlurMap& m, std::size_t out_h, std::size_t out_w);
GroundTruth resize_nearest(const GroundTruth& g, std::size_t out_h, std::size_t out_w);

struct SyntheticOptions {
  bool flat_patches = true;
  double sigma_min = 2.0;
  double sigma_max = 6.0;
};

// Textured composites with a Gaussian-blurred band along one side (gt = 1) and, optionally,
// a constant-colour band on the opposite side (gt = 0).
std::vector<Sample> make_synthetic(std::size_t n, std::size_t size, std::uint64_t seed,
                                   const SyntheticOptions& opts = {});

// Writes <dir>/image/<id>.png, <dir>/gt/<id>.png and <dir>/layout.csv (flat patch per id).
void write_corpus(const std::filesystem::path& dir, const std::vector<Sample>& samples);
// Flat patches recorded in <dir>/layout.csv, keyed by id order of the file.
std::vector<std::pair<std::string, Region>> read_layout(const std::filesystem::path& dir);

// Separable Gaussian blur, kernel radius ceil(3 sigma), edge-clamped, per channel.
Tensor gaussian_blur(const Tensor& x, double sigma);

}  // namespace blurmap
