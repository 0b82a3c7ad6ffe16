#include "blurmap/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "blurmap/error.hpp"
#include "blurmap/imageio.hpp"

namespace blurmap {

namespace fs = std::filesystem;

namespace {

Category infer_category(const std::string& stem) {
  if (stem.rfind("motion", 0) == 0) return Category::motion;
  if (stem.rfind("synth", 0) == 0) return Category::synthetic;
  return Category::defocus;
}

std::map<std::string, fs::path> images_by_stem(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image_file(e.path())) out.emplace(e.path().stem().string(), e.path());
  }
  return out;
}

struct Taps {
  std::vector<double> w;
  std::ptrdiff_t radius = 0;
};

Taps gaussian_taps(double sigma) {
  Taps t;
  t.radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  double sum = 0.0;
  for (std::ptrdiff_t i = -t.radius; i <= t.radius; ++i) {
    t.w.push_back(std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma)));
    sum += t.w.back();
  }
  for (double& v : t.w) v /= sum;
  return t;
}

// Source index and weight of the upper neighbour for half-pixel-centred resampling.
struct Lerp {
  std::size_t i0 = 0, i1 = 0;
  double frac = 0.0;
};

std::vector<Lerp> lerp_table(std::size_t in, std::size_t out) {
  std::vector<Lerp> t(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    t[o] = {i0, std::min(i0 + 1, in - 1), src - static_cast<double>(i0)};
  }
  return t;
}

void resize_plane(std::span<const double> src, std::size_t h, std::size_t w, std::span<double> dst,
                  std::size_t oh, std::size_t ow) {
  const auto ty = lerp_table(h, oh);
  const auto tx = lerp_table(w, ow);
  std::vector<double> rows(oh * w);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double a = src[ty[y].i0 * w + x], b = src[ty[y].i1 * w + x];
      rows[y * w + x] = a + ty[y].frac * (b - a);
    }
  }
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      const double a = rows[y * w + tx[x].i0], b = rows[y * w + tx[x].i1];
      dst[y * ow + x] = a + tx[x].frac * (b - a);
    }
  }
}

}  // namespace

std::string_view to_string(Category c) {
  switch (c) {
    case Category::motion: return "motion";
    case Category::defocus: return "defocus";
    case Category::synthetic: return "synthetic";
  }
  return "?";
}

SplitSpec parse_split(std::string_view s) {
  if (s == "odd") return SplitSpec::odd();
  if (s == "even") return SplitSpec::even();
  if (s.rfind("list:", 0) == 0) {
    std::vector<std::string> ids;
    std::stringstream ss{std::string(s.substr(5))};
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (!tok.empty()) ids.push_back(tok);
    }
    return SplitSpec::custom(std::move(ids));
  }
  throw ConfigError("unknown split '" + std::string(s) + "' (expected odd, even or list:<ids>)");
}

Dataset ingest(const fs::path& root, const SplitSpec& split) {
  if (!fs::is_directory(root)) throw DataError("dataset root " + root.string() + " is not a directory");
  const auto images = images_by_stem(root / "image");
  const auto masks = images_by_stem(root / "gt");
  if (images.empty()) throw DataError("dataset " + root.string() + " contains no images under image/");

  std::vector<std::string> missing;
  for (const auto& [stem, path] : images) {
    if (!masks.contains(stem)) missing.push_back(stem);
  }
  if (!missing.empty()) {
    std::string msg = "dataset: no mask for";
    for (const auto& m : missing) msg += " " + m;
    throw DataError(msg);
  }

  std::set<std::string> custom(split.train_ids.begin(), split.train_ids.end());
  if (split.rule == SplitSpec::Rule::custom) {
    for (const auto& id : custom) {
      if (!images.contains(id)) throw DataError("dataset: split names unknown id " + id);
    }
  }

  Dataset ds;
  std::size_t index = 0;
  for (const auto& [stem, path] : images) {
    ++index;
    SampleRef ref{stem, path, masks.at(stem), infer_category(stem)};
    bool to_train = false;
    switch (split.rule) {
      case SplitSpec::Rule::odd_train: to_train = index % 2 == 1; break;
      case SplitSpec::Rule::even_train: to_train = index % 2 == 0; break;
      case SplitSpec::Rule::custom: to_train = custom.contains(stem); break;
    }
    const GroundTruth gt = read_mask(ref.mask);
    ds.stats.pixels += gt.size();
    ds.stats.blurred_pixels += static_cast<std::uint64_t>(std::count(gt.data.begin(), gt.data.end(), 1));
    ++ds.stats.images;
    if (ref.category == Category::motion) ++ds.stats.motion;
    if (ref.category == Category::defocus) ++ds.stats.defocus;
    (to_train ? ds.train : ds.test).push_back(std::move(ref));
  }
  return ds;
}

Sample load_sample(const SampleRef& ref) {
  Sample s{read_rgb(ref.image), read_mask(ref.mask), ref.id, ref.category, std::nullopt};
  if (s.image.shape().h != s.gt.rows || s.image.shape().w != s.gt.cols) {
    throw DataError("sample " + ref.id + ": image and mask sizes differ");
  }
  return s;
}

Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  const Shape& s = x.shape();
  if (out_h == 0 || out_w == 0 || s.h == 0 || s.w == 0) throw ShapeError("resize: empty size");
  Tensor y(Shape{s.n, s.c, out_h, out_w});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) resize_plane(x.plane(n, c), s.h, s.w, y.plane(n, c), out_h, out_w);
  }
  return y;
}

BlurMap resize_bilinear(const BlurMap& m, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0 || m.empty()) throw ShapeError("resize: empty size");
  BlurMap out(out_h, out_w);
  resize_plane(m.data, m.rows, m.cols, out.data, out_h, out_w);
  return out;
}

GroundTruth resize_nearest(const GroundTruth& g, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0 || g.empty()) throw ShapeError("resize: empty size");
  GroundTruth out(out_h, out_w);
  auto pick = [](std::size_t o, std::size_t in, std::size_t n_out) {
    const auto i = static_cast<std::size_t>(
        std::floor((static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(n_out)));
    return std::min(i, in - 1);
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = pick(y, g.rows, out_h);
    for (std::size_t x = 0; x < out_w; ++x) out(y, x) = g(sy, pick(x, g.cols, out_w));
  }
  return out;
}

Sample preprocess(const Sample& sample, std::size_t target, const std::array<double, 3>& mean_rgb) {
  if (target == 0 || target % 16 != 0) {
    throw ConfigError("preprocess: target size " + std::to_string(target) + " is not a multiple of 16");
  }
  if (sample.image.shape().c != 3) throw ShapeError("preprocess: expected an RGB image");
  Sample out;
  out.id = sample.id;
  out.category = sample.category;
  const Shape& s = sample.image.shape();
  out.image = (s.h == target && s.w == target) ? sample.image : resize_bilinear(sample.image, target, target);
  out.gt = (sample.gt.rows == target && sample.gt.cols == target) ? sample.gt
                                                                   : resize_nearest(sample.gt, target, target);
  for (std::size_t c = 0; c < 3; ++c) {
    if (mean_rgb[c] == 0.0) continue;
    for (double& v : out.image.plane(0, c)) v -= mean_rgb[c];
  }
  if (sample.flat_patch && s.h == target && s.w == target) out.flat_patch = sample.flat_patch;
  return out;
}

Tensor gaussian_blur(const Tensor& x, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("gaussian blur: sigma must be positive");
  const Taps t = gaussian_taps(sigma);
  const Shape& s = x.shape();
  Tensor tmp(s), y(s);
  const auto h = static_cast<std::ptrdiff_t>(s.h), w = static_cast<std::ptrdiff_t>(s.w);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      auto src = x.plane(n, c);
      auto mid = tmp.plane(n, c);
      auto dst = y.plane(n, c);
      for (std::ptrdiff_t r = 0; r < h; ++r) {
        for (std::ptrdiff_t q = 0; q < w; ++q) {
          double acc = 0.0;
          for (std::ptrdiff_t k = -t.radius; k <= t.radius; ++k) {
            const std::ptrdiff_t qq = std::clamp<std::ptrdiff_t>(q + k, 0, w - 1);
            acc += t.w[static_cast<std::size_t>(k + t.radius)] * src[static_cast<std::size_t>(r * w + qq)];
          }
          mid[static_cast<std::size_t>(r * w + q)] = acc;
        }
      }
      for (std::ptrdiff_t r = 0; r < h; ++r) {
        for (std::ptrdiff_t q = 0; q < w; ++q) {
          double acc = 0.0;
          for (std::ptrdiff_t k = -t.radius; k <= t.radius; ++k) {
            const std::ptrdiff_t rr = std::clamp<std::ptrdiff_t>(r + k, 0, h - 1);
            acc += t.w[static_cast<std::size_t>(k + t.radius)] * mid[static_cast<std::size_t>(rr * w + q)];
          }
          dst[static_cast<std::size_t>(r * w + q)] = acc;
        }
      }
    }
  }
  return y;
}

std::vector<Sample> make_synthetic(std::size_t n, std::size_t size, std::uint64_t seed,
                                   const SyntheticOptions& opts) {
  if (size == 0 || size % 16 != 0) throw ConfigError("synthetic size must be a positive multiple of 16");
  if (!(opts.sigma_min > 0.0) || opts.sigma_max < opts.sigma_min) throw ConfigError("bad synthetic sigma range");
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + i + 1);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
    auto uint_in = [&](std::size_t lo, std::size_t hi) {
      return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
    };
    std::normal_distribution<double> gauss(0.0, 1.0);

    // Texture: colour base, grain noise, checkerboard and a low-frequency wave.
    Tensor tex(Shape{1, 3, size, size});
    std::array<double, 3> base{uni(0.3, 0.7), uni(0.3, 0.7), uni(0.3, 0.7)};
    const double noise_amp = uni(0.12, 0.25);
    const std::size_t cell = uint_in(2, 4);
    const double checker_amp = uni(0.08, 0.2);
    const double wave_amp = uni(0.08, 0.15);
    const double period = uni(12.0, 24.0);
    const double angle = uni(0.0, std::numbers::pi);
    const double kx = std::cos(angle) * 2.0 * std::numbers::pi / period;
    const double ky = std::sin(angle) * 2.0 * std::numbers::pi / period;
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double grain = noise_amp * gauss(rng);
        const double checker = ((x / cell + y / cell) % 2 == 0 ? 0.5 : -0.5) * checker_amp;
        const double wave = wave_amp * std::sin(kx * static_cast<double>(x) + ky * static_cast<double>(y));
        for (std::size_t c = 0; c < 3; ++c) {
          const double tint = 0.03 * gauss(rng);
          tex.at(0, c, y, x) = std::clamp(base[c] + grain + tint + checker + wave, 0.0, 1.0);
        }
      }
    }

    // Blurred band along one image side, its extent a multiple of 16 so that the boundary
    // sits on a cell edge of the coarsest score map. The flat patch is a band on the
    // opposite side, leaving sharp texture between the two.
    const std::size_t flat_side = opts.flat_patches ? size * 3 / 8 : 0;
    std::size_t extent = size / 2;
    if (size >= 32) {
      const std::size_t room = size - flat_side - std::min<std::size_t>(8, size / 8);
      const std::size_t kmax = std::max<std::size_t>(1, std::min(room / 16, size / 16 - 1));
      extent = 16 * uint_in(kmax > 1 ? kmax / 2 + 1 : 1, kmax);
    }
    const std::size_t side = uint_in(0, 3);   // 0 top, 1 bottom, 2 left, 3 right
    auto band = [&](std::size_t s, std::size_t depth) -> Region {
      switch (s) {
        case 0: return {0, 0, depth, size};
        case 1: return {size - depth, 0, depth, size};
        case 2: return {0, 0, size, depth};
        default: return {0, size - depth, size, depth};
      }
    };
    const Region blur_rect = band(side, extent);
    const Region flat = band(side ^ 1, flat_side);

    const double sigma = uni(opts.sigma_min, opts.sigma_max);
    const Tensor blurred = gaussian_blur(tex, sigma);
    Sample s;
    s.id = "synth_" + std::string(4 - std::min<std::size_t>(4, std::to_string(i).size()), '0') + std::to_string(i);
    s.category = Category::synthetic;
    s.gt = GroundTruth(size, size, 0);
    s.image = tex;
    for (std::size_t y = blur_rect.top; y < blur_rect.top + blur_rect.height; ++y) {
      for (std::size_t x = blur_rect.left; x < blur_rect.left + blur_rect.width; ++x) {
        s.gt(y, x) = 1;
        for (std::size_t c = 0; c < 3; ++c) s.image.at(0, c, y, x) = blurred.at(0, c, y, x);
      }
    }
    if (opts.flat_patches) {
      std::array<double, 3> colour{};
      const double grey = uni(0.2, 0.8);
      for (std::size_t c = 0; c < 3; ++c) colour[c] = std::clamp(grey + uni(-0.05, 0.05), 0.0, 1.0);
      for (std::size_t y = flat.top; y < flat.top + flat.height; ++y) {
        for (std::size_t x = flat.left; x < flat.left + flat.width; ++x) {
          for (std::size_t c = 0; c < 3; ++c) s.image.at(0, c, y, x) = colour[c];
        }
      }
      s.flat_patch = flat;
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_corpus(const fs::path& dir, const std::vector<Sample>& samples) {
  fs::create_directories(dir / "image");
  fs::create_directories(dir / "gt");
  std::ofstream layout(dir / "layout.csv", std::ios::trunc);
  if (!layout) throw DataError("cannot write " + (dir / "layout.csv").string());
  layout << "id,flat_top,flat_left,flat_height,flat_width\n";
  for (const Sample& s : samples) {
    write_rgb(dir / "image" / (s.id + ".png"), s.image);
    write_mask(dir / "gt" / (s.id + ".png"), s.gt);
    if (s.flat_patch) {
      const Region& r = *s.flat_patch;
      layout << s.id << ',' << r.top << ',' << r.left << ',' << r.height << ',' << r.width << '\n';
    }
  }
}

std::vector<std::pair<std::string, Region>> read_layout(const fs::path& dir) {
  std::ifstream in(dir / "layout.csv");
  if (!in) throw DataError("cannot read " + (dir / "layout.csv").string());
  std::vector<std::pair<std::string, Region>> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, f[4];
    std::getline(ss, id, ',');
    for (auto& v : f) std::getline(ss, v, ',');
    try {
      out.push_back({id, Region{std::stoul(f[0]), std::stoul(f[1]), std::stoul(f[2]), std::stoul(f[3])}});
    } catch (const std::exception&) {
      throw DataError("malformed layout row: " + line);
    }
  }
  return out;
}

}  // namespace blurmap
