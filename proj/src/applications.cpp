#include "blurmap/applications.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "blurmap/error.hpp"
#include "parallel.hpp"

namespace blurmap {

double blur_degree(const BlurMap& map) {
  if (map.empty()) throw DataError("blur degree: empty map");
  double sum = 0.0;
  for (double v : map.data) sum += v;
  return sum / static_cast<double>(map.size());
}

TrimapLabel trimap_label(double confidence) {
  if (confidence < 0.1) return TrimapLabel::fg;
  if (confidence < 0.5) return TrimapLabel::prob_fg;
  if (confidence < 0.9) return TrimapLabel::prob_bg;
  return TrimapLabel::bg;
}

Trimap trimap(const BlurMap& map) {
  Trimap t(map.rows, map.cols);
  for (std::size_t i = 0; i < map.size(); ++i) t.data[i] = trimap_label(map.data[i]);
  return t;
}

Grid<std::uint8_t> trimap_codes(const Trimap& t) {
  Grid<std::uint8_t> g(t.rows, t.cols);
  for (std::size_t i = 0; i < t.size(); ++i) g.data[i] = static_cast<std::uint8_t>(t.data[i]);
  return g;
}

Tensor magnify_blur(const Tensor& image, const BlurMap& map, double sigma, double thresh) {
  if (!(sigma > 0.0)) throw ConfigError("magnify: sigma must be positive");
  const Shape& s = image.shape();
  if (s.n != 1 || s.h != map.rows || s.w != map.cols) {
    throw ShapeError("magnify: image " + to_string(s) + " does not align with map " +
                     std::to_string(map.rows) + "x" + std::to_string(map.cols));
  }
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  const std::size_t side = static_cast<std::size_t>(2 * radius + 1);
  std::vector<double> kernel(side * side);
  for (std::ptrdiff_t dy = -radius; dy <= radius; ++dy) {
    for (std::ptrdiff_t dx = -radius; dx <= radius; ++dx) {
      kernel[static_cast<std::size_t>((dy + radius) * static_cast<std::ptrdiff_t>(side) + dx + radius)] =
          std::exp(-static_cast<double>(dy * dy + dx * dx) / (2.0 * sigma * sigma));
    }
  }
  std::vector<std::uint8_t> mask(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) mask[i] = map.data[i] > thresh ? 1 : 0;

  Tensor out = image;
  const auto h = static_cast<std::ptrdiff_t>(s.h), w = static_cast<std::ptrdiff_t>(s.w);
  detail::parallel_for(s.h, [&](std::size_t row) {
    const auto y = static_cast<std::ptrdiff_t>(row);
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      if (!mask[static_cast<std::size_t>(y * w + x)]) continue;
      for (std::size_t c = 0; c < s.c; ++c) {
        auto src = image.plane(0, c);
        // Accumulate offsets from the centre pixel so constant neighbourhoods stay exact.
        const double centre = src[static_cast<std::size_t>(y * w + x)];
        double acc = 0.0, norm = 0.0, lo = centre, hi = centre;
        for (std::ptrdiff_t dy = -radius; dy <= radius; ++dy) {
          const std::ptrdiff_t yy = y + dy;
          if (yy < 0 || yy >= h) continue;
          for (std::ptrdiff_t dx = -radius; dx <= radius; ++dx) {
            const std::ptrdiff_t xx = x + dx;
            if (xx < 0 || xx >= w) continue;
            const auto q = static_cast<std::size_t>(yy * w + xx);
            if (!mask[q]) continue;
            const double k = kernel[static_cast<std::size_t>((dy + radius) * (2 * radius + 1) + dx + radius)];
            acc += k * (src[q] - centre);
            norm += k;
            lo = std::min(lo, src[q]);
            hi = std::max(hi, src[q]);
          }
        }
        out.at(0, c, row, static_cast<std::size_t>(x)) = std::clamp(centre + acc / norm, lo, hi);
      }
    }
  });
  return out;
}

}  // namespace blurmap
