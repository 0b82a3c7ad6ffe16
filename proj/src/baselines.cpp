#include "blurmap/baselines.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>

#include "blurmap/error.hpp"
#include "parallel.hpp"

namespace blurmap {

namespace {

constexpr double kZeroEnergy = 1e-20;

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

// Reusable p x p complex DFT.
class Dft2 {
 public:
  explicit Dft2(std::size_t p) : p_(p) {
    const auto n = static_cast<int>(p);
    in_ = fftw_alloc_complex(p * p);
    out_ = fftw_alloc_complex(p * p);
    std::lock_guard lock(planner_mutex());
    plan_ = fftw_plan_dft_2d(n, n, in_, out_, FFTW_FORWARD, FFTW_ESTIMATE);
  }
  ~Dft2() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  Dft2(const Dft2&) = delete;
  Dft2& operator=(const Dft2&) = delete;

  // |F|^2 of a real p*p row-major patch.
  void power(const double* patch, std::vector<double>& out) {
    for (std::size_t i = 0; i < p_ * p_; ++i) {
      in_[i][0] = patch[i];
      in_[i][1] = 0.0;
    }
    fftw_execute(plan_);
    out.resize(p_ * p_);
    for (std::size_t i = 0; i < p_ * p_; ++i) out[i] = out_[i][0] * out_[i][0] + out_[i][1] * out_[i][1];
  }

 private:
  std::size_t p_;
  fftw_complex* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

std::vector<double> ring_average(const std::vector<double>& power, std::size_t p) {
  const std::size_t rings = p / 2 + 1;
  std::vector<double> sum(rings, 0.0);
  std::vector<std::size_t> count(rings, 0);
  const auto half = static_cast<std::ptrdiff_t>(p / 2);
  const auto sp = static_cast<std::ptrdiff_t>(p);
  for (std::ptrdiff_t u = 0; u < sp; ++u) {
    const std::ptrdiff_t fu = u <= half ? u : u - sp;
    for (std::ptrdiff_t v = 0; v < sp; ++v) {
      const std::ptrdiff_t fv = v <= half ? v : v - sp;
      const auto r = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(fu * fu + fv * fv))));
      if (r >= rings) continue;
      sum[r] += power[static_cast<std::size_t>(u * sp + v)];
      ++count[r];
    }
  }
  for (std::size_t r = 0; r < rings; ++r) {
    if (count[r] > 0) sum[r] /= static_cast<double>(count[r]);
  }
  return sum;
}

std::vector<double> hann(std::size_t p) {
  std::vector<double> w(p);
  for (std::size_t i = 0; i < p; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (static_cast<double>(i) + 0.5) /
                                static_cast<double>(p));
  }
  return w;
}

// Slope of a windowed patch using a shared transform; NaN when the patch has no energy.
double slope_with(Dft2& dft, const std::vector<double>& window, const double* patch,
                  std::size_t p, std::vector<double>& scratch, std::vector<double>& power) {
  double mean = 0.0;
  for (std::size_t i = 0; i < p * p; ++i) mean += patch[i];
  mean /= static_cast<double>(p * p);
  double energy = 0.0;
  scratch.resize(p * p);
  for (std::size_t y = 0; y < p; ++y) {
    for (std::size_t x = 0; x < p; ++x) {
      const double v = patch[y * p + x] - mean;
      energy += v * v;
      scratch[y * p + x] = v * window[y] * window[x];
    }
  }
  if (energy <= kZeroEnergy * static_cast<double>(p * p)) return std::numeric_limits<double>::quiet_NaN();
  dft.power(scratch.data(), power);
  const auto profile = ring_average(power, p);
  return fit_log_slope(profile, 2, p / 2 + (p % 2 == 0 ? 0 : 1));
}

void check_patch(const GrayImage& image, const PatchOptions& opts) {
  if (opts.patch == 0 || opts.patch % 2 == 0) throw ConfigError("patch size must be odd");
  if (opts.stride == 0) throw ConfigError("patch stride must be positive");
  if (image.rows < opts.patch || image.cols < opts.patch) {
    throw DataError("patch size " + std::to_string(opts.patch) + " exceeds image " +
                    std::to_string(image.rows) + "x" + std::to_string(image.cols));
  }
}

// Evaluates feature(top, left) at patch centres spaced by stride and spreads each value to
// the pixels nearest that centre; borders take the nearest valid centre.
template <typename Feature>
BlurMap patch_map(const GrayImage& image, const PatchOptions& opts, Feature&& feature) {
  const std::size_t p = opts.patch, r = p / 2;
  const std::size_t ny = (image.rows - p) / opts.stride + 1;
  const std::size_t nx = (image.cols - p) / opts.stride + 1;
  Grid<double> centres(ny, nx);
  detail::parallel_for(ny, [&](std::size_t iy) {
    for (std::size_t ix = 0; ix < nx; ++ix) centres(iy, ix) = feature(iy * opts.stride, ix * opts.stride);
  });
  auto nearest = [&](std::size_t pix, std::size_t n_centres) {
    const double pos = (static_cast<double>(pix) - static_cast<double>(r)) / static_cast<double>(opts.stride);
    const auto k = static_cast<std::ptrdiff_t>(std::lround(pos));
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(k, 0, static_cast<std::ptrdiff_t>(n_centres) - 1));
  };
  BlurMap out(image.rows, image.cols);
  for (std::size_t y = 0; y < image.rows; ++y) {
    const std::size_t cy = nearest(y, ny);
    for (std::size_t x = 0; x < image.cols; ++x) out(y, x) = centres(cy, nearest(x, nx));
  }
  return out;
}

}  // namespace

GrayImage to_luma(const Tensor& rgb) {
  const Shape& s = rgb.shape();
  if (s.n < 1 || (s.c != 3 && s.c != 1)) throw ShapeError("to_luma: expected 1 or 3 channels");
  GrayImage g(s.h, s.w);
  if (s.c == 1) {
    auto p = rgb.plane(0, 0);
    std::copy(p.begin(), p.end(), g.data.begin());
    return g;
  }
  auto r = rgb.plane(0, 0), gr = rgb.plane(0, 1), b = rgb.plane(0, 2);
  for (std::size_t i = 0; i < g.size(); ++i) g.data[i] = 0.299 * r[i] + 0.587 * gr[i] + 0.114 * b[i];
  return g;
}

BlurMap gradient_stat_map(const GrayImage& image, const PatchOptions& opts, double tau) {
  check_patch(image, opts);
  if (!(tau > 0.0)) throw ConfigError("gradient tau must be positive");
  const std::size_t h = image.rows, w = image.cols;
  // Forward differences; the last row / column reuses the previous difference.
  Grid<double> mag(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t x0 = x + 1 < w ? x : (x > 0 ? x - 1 : x);
      const std::size_t y0 = y + 1 < h ? y : (y > 0 ? y - 1 : y);
      const double gx = w > 1 ? image(y, x0 + 1) - image(y, x0) : 0.0;
      const double gy = h > 1 ? image(y0 + 1, x) - image(y0, x) : 0.0;
      mag(y, x) = std::sqrt(gx * gx + gy * gy);
    }
  }
  // Summed-area table for patch means.
  Grid<double> sat(h + 1, w + 1);
  for (std::size_t y = 0; y < h; ++y) {
    double row = 0.0;
    for (std::size_t x = 0; x < w; ++x) {
      row += mag(y, x);
      sat(y + 1, x + 1) = sat(y, x + 1) + row;
    }
  }
  const std::size_t p = opts.patch;
  const double area = static_cast<double>(p * p);
  return patch_map(image, opts, [&](std::size_t top, std::size_t left) {
    const double sum = sat(top + p, left + p) - sat(top, left + p) - sat(top + p, left) + sat(top, left);
    return std::exp(-(sum / area) / tau);
  });
}

std::vector<double> radial_power_spectrum(const GrayImage& patch) {
  if (patch.rows != patch.cols || patch.rows == 0) throw ShapeError("radial spectrum: patch must be square");
  Dft2 dft(patch.rows);
  std::vector<double> power;
  dft.power(patch.data.data(), power);
  return ring_average(power, patch.rows);
}

double fit_log_slope(const std::vector<double>& profile, std::size_t first, std::size_t last) {
  last = std::min(last, profile.size());
  first = std::max<std::size_t>(first, 1);
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t n = 0;
  for (std::size_t r = first; r < last; ++r) {
    if (!(profile[r] > 0.0)) continue;
    const double x = std::log(static_cast<double>(r));
    const double y = std::log(profile[r]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  if (n < 2) throw DataError("slope fit: fewer than 2 usable frequency rings");
  const double dn = static_cast<double>(n);
  return (dn * sxy - sx * sy) / (dn * sxx - sx * sx);
}

double patch_spectral_slope(const GrayImage& patch) {
  if (patch.rows != patch.cols) throw ShapeError("spectral slope: patch must be square");
  if (patch.rows < 8) throw ConfigError("spectral slope: patch too small for a usable spectrum");
  const std::size_t p = patch.rows;
  Dft2 dft(p);
  const auto window = hann(p);
  std::vector<double> scratch, power;
  return slope_with(dft, window, patch.data.data(), p, scratch, power);
}

double slope_to_confidence(double slope) {
  if (std::isnan(slope)) return 1.0;
  const double z = (-slope - kSlopeOffset) / kSlopeScale;
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

BlurMap spectral_slope_map(const GrayImage& image, const PatchOptions& opts) {
  check_patch(image, opts);
  if (opts.patch < 16) throw ConfigError("spectral slope map needs patch size >= 16");
  const std::size_t p = opts.patch;
  const auto window = hann(p);
  const std::size_t ny = (image.rows - p) / opts.stride + 1;
  // One transform per worker slot; rows are distributed over slots by index.
  const std::size_t slots = std::max<std::size_t>(1, std::min<std::size_t>(num_threads(), ny));
  std::vector<std::unique_ptr<Dft2>> dfts;
  for (std::size_t i = 0; i < slots; ++i) dfts.push_back(std::make_unique<Dft2>(p));
  thread_local std::vector<double> patch, scratch, power;
  return patch_map(image, opts, [&](std::size_t top, std::size_t left) {
    patch.resize(p * p);
    for (std::size_t y = 0; y < p; ++y) {
      for (std::size_t x = 0; x < p; ++x) patch[y * p + x] = image(top + y, left + x);
    }
    Dft2& dft = *dfts[(top / opts.stride) % slots];
    return slope_to_confidence(slope_with(dft, window, patch.data(), p, scratch, power));
  });
}

}  // namespace blurmap
