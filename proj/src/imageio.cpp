#include "blurmap/imageio.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <string>

#include "blurmap/error.hpp"

namespace blurmap {

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp<long>(std::lround(255.0 * v), 0, 255));
}

cv::Mat read_any(const std::filesystem::path& path, int flags) {
  cv::Mat m = cv::imread(path.string(), flags);
  if (m.empty()) throw DataError("cannot read image " + path.string());
  if (m.depth() != CV_8U) throw DataError(path.string() + " is not an 8-bit image");
  return m;
}

void write_any(const std::filesystem::path& path, const cv::Mat& m) {
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), m);
  } catch (const cv::Exception& e) {
    throw DataError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw DataError("cannot write " + path.string());
}

}  // namespace

Tensor read_rgb(const std::filesystem::path& path) {
  const cv::Mat m = read_any(path, cv::IMREAD_COLOR);   // BGR
  const auto h = static_cast<std::size_t>(m.rows), w = static_cast<std::size_t>(m.cols);
  Tensor t(Shape{1, 3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    const auto* row = m.ptr<cv::Vec3b>(static_cast<int>(y));
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) t.at(0, c, y, x) = row[x][2 - c] / 255.0;
    }
  }
  return t;
}

void write_rgb(const std::filesystem::path& path, const Tensor& image) {
  const Shape& s = image.shape();
  if (s.n != 1 || (s.c != 3 && s.c != 1)) throw ShapeError("write_rgb: expected (1, 3|1, h, w)");
  if (s.c == 1) {
    cv::Mat m(static_cast<int>(s.h), static_cast<int>(s.w), CV_8UC1);
    auto p = image.plane(0, 0);
    for (std::size_t i = 0; i < p.size(); ++i) m.data[i] = to_byte(p[i]);
    write_any(path, m);
    return;
  }
  cv::Mat m(static_cast<int>(s.h), static_cast<int>(s.w), CV_8UC3);
  for (std::size_t y = 0; y < s.h; ++y) {
    auto* row = m.ptr<cv::Vec3b>(static_cast<int>(y));
    for (std::size_t x = 0; x < s.w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) row[x][2 - c] = to_byte(image.at(0, c, y, x));
    }
  }
  write_any(path, m);
}

Grid<std::uint8_t> read_gray8(const std::filesystem::path& path) {
  const cv::Mat m = read_any(path, cv::IMREAD_GRAYSCALE);
  Grid<std::uint8_t> g(static_cast<std::size_t>(m.rows), static_cast<std::size_t>(m.cols));
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    std::copy(row, row + m.cols, g.data.begin() + static_cast<std::ptrdiff_t>(y) * m.cols);
  }
  return g;
}

void write_gray8(const std::filesystem::path& path, const Grid<std::uint8_t>& g) {
  cv::Mat m(static_cast<int>(g.rows), static_cast<int>(g.cols), CV_8UC1);
  std::copy(g.data.begin(), g.data.end(), m.data);
  write_any(path, m);
}

GroundTruth read_mask(const std::filesystem::path& path) {
  Grid<std::uint8_t> raw = read_gray8(path);
  for (auto& v : raw.data) v = v > 127 ? 1 : 0;
  return raw;
}

void write_mask(const std::filesystem::path& path, const GroundTruth& gt) {
  Grid<std::uint8_t> g(gt.rows, gt.cols);
  for (std::size_t i = 0; i < gt.size(); ++i) g.data[i] = gt.data[i] ? 255 : 0;
  write_gray8(path, g);
}

Grid<std::uint8_t> quantize_map(const BlurMap& map) {
  Grid<std::uint8_t> g(map.rows, map.cols);
  for (std::size_t i = 0; i < map.size(); ++i) g.data[i] = to_byte(map.data[i]);
  return g;
}

BlurMap read_map(const std::filesystem::path& path) {
  const Grid<std::uint8_t> g = read_gray8(path);
  BlurMap m(g.rows, g.cols);
  for (std::size_t i = 0; i < g.size(); ++i) m.data[i] = g.data[i] / 255.0;
  return m;
}

void write_map(const std::filesystem::path& path, const BlurMap& map) {
  write_gray8(path, quantize_map(map));
}

bool is_image_file(const std::filesystem::path& path) {
  static constexpr std::array<std::string_view, 9> exts = {".png", ".jpg", ".jpeg", ".bmp", ".pgm",
                                                           ".ppm", ".pnm", ".tif", ".tiff"};
  std::string e = path.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return std::find(exts.begin(), exts.end(), e) != exts.end();
}

}  // namespace blurmap
