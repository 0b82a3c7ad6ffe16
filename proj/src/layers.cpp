#include "blurmap/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>

#include "blurmap/error.hpp"
#include "parallel.hpp"

namespace blurmap {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Strided = Eigen::OuterStride<>;
using ConstPlaneMap = Eigen::Map<const RowMat, 0, Strided>;
using PlaneMap = Eigen::Map<RowMat, 0, Strided>;

// Column buffers are capped near 8 MiB of doubles per tile.
constexpr std::size_t kTileBudget = std::size_t{1} << 20;

std::size_t rows_per_tile(std::size_t col_rows, std::size_t width, std::size_t height) {
  const std::size_t per_row = std::max<std::size_t>(1, col_rows * width);
  return std::clamp<std::size_t>(kTileBudget / per_row, 1, height);
}

// 3x3 / pad-1 lowering of output rows [r0, r1) of item n into `col` ((c*9) x ((r1-r0)*w)).
void im2col_rows(const Tensor& x, std::size_t n, std::size_t r0, std::size_t r1,
                 std::vector<double>& col) {
  const Shape& s = x.shape();
  const std::size_t cols = (r1 - r0) * s.w;
  col.assign(s.c * 9 * cols, 0.0);
  for (std::size_t c = 0; c < s.c; ++c) {
    auto src = x.plane(n, c);
    for (std::size_t ki = 0; ki < 3; ++ki) {
      for (std::size_t kj = 0; kj < 3; ++kj) {
        double* row = &col[((c * 3 + ki) * 3 + kj) * cols];
        for (std::size_t oy = r0; oy < r1; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ki) - 1;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) continue;
          const double* in_row = &src[static_cast<std::size_t>(iy) * s.w];
          double* out_row = row + (oy - r0) * s.w;
          const std::size_t x_lo = kj == 0 ? 1 : 0;
          const std::size_t x_hi = kj == 2 ? s.w - 1 : s.w;
          for (std::size_t ox = x_lo; ox < x_hi; ++ox) out_row[ox] = in_row[ox + kj - 1];
        }
      }
    }
  }
}

// Adjoint of im2col_rows: scatter-adds `col` into dx.
void col2im_rows(const std::vector<double>& col, std::size_t n, std::size_t r0, std::size_t r1,
                 Tensor& dx) {
  const Shape& s = dx.shape();
  const std::size_t cols = (r1 - r0) * s.w;
  for (std::size_t c = 0; c < s.c; ++c) {
    auto dst = dx.plane(n, c);
    for (std::size_t ki = 0; ki < 3; ++ki) {
      for (std::size_t kj = 0; kj < 3; ++kj) {
        const double* row = &col[((c * 3 + ki) * 3 + kj) * cols];
        for (std::size_t oy = r0; oy < r1; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ki) - 1;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) continue;
          double* out_row = &dst[static_cast<std::size_t>(iy) * s.w];
          const double* in_row = row + (oy - r0) * s.w;
          const std::size_t x_lo = kj == 0 ? 1 : 0;
          const std::size_t x_hi = kj == 2 ? s.w - 1 : s.w;
          for (std::size_t ox = x_lo; ox < x_hi; ++ox) out_row[ox + kj - 1] += in_row[ox];
        }
      }
    }
  }
}

void check_factor(std::size_t s) {
  if (s != 1 && s != 2 && s != 4 && s != 8 && s != 16) {
    throw ConfigError("unsupported upsample factor " + std::to_string(s));
  }
}

}  // namespace

ConvParams::ConvParams(std::size_t in_c, std::size_t out_c, std::size_t kernel)
    : weight(Shape{out_c, in_c, kernel, kernel}), bias(out_c, 0.0) {
  if (kernel != 1 && kernel != 3) throw ConfigError("conv kernel must be 1 or 3");
}

void LayerCache::consume(const char* layer) {
  if (!live_) throw ContractError(std::string(layer) + " backward: cache already consumed or empty");
  live_ = false;
}

LayerCache make_cache() {
  LayerCache c;
  c.live_ = true;
  return c;
}

Forward conv_forward(const Tensor& x, const ConvParams& p) {
  const Shape& s = x.shape();
  if (s.c != p.in_channels()) {
    throw ShapeError("conv: input has " + std::to_string(s.c) + " channels, layer expects " +
                     std::to_string(p.in_channels()));
  }
  const std::size_t k = p.kernel();
  const std::size_t oc = p.out_channels();
  const std::size_t ckk = s.c * k * k;
  const auto hw = static_cast<Eigen::Index>(s.plane());
  Tensor y(Shape{s.n, oc, s.h, s.w});
  Eigen::Map<const RowMat> wm(p.weight.data().data(), static_cast<Eigen::Index>(oc),
                              static_cast<Eigen::Index>(ckk));

  for (std::size_t n = 0; n < s.n; ++n) {
    double* yn = &y.data()[y.index(n, 0, 0, 0)];
    if (k == 1) {
      ConstPlaneMap xm(&x.data()[x.index(n, 0, 0, 0)], static_cast<Eigen::Index>(s.c), hw,
                       Strided(hw));
      PlaneMap ym(yn, static_cast<Eigen::Index>(oc), hw, Strided(hw));
      ym.noalias() = wm * xm;
    } else {
      const std::size_t tile = rows_per_tile(ckk, s.w, s.h);
      const std::size_t n_tiles = (s.h + tile - 1) / tile;
      detail::parallel_for(n_tiles, [&](std::size_t t) {
        const std::size_t r0 = t * tile, r1 = std::min(s.h, r0 + tile);
        std::vector<double> col;
        im2col_rows(x, n, r0, r1, col);
        const auto cols = static_cast<Eigen::Index>((r1 - r0) * s.w);
        Eigen::Map<const RowMat> cm(col.data(), static_cast<Eigen::Index>(ckk), cols);
        PlaneMap ym(yn + r0 * s.w, static_cast<Eigen::Index>(oc), cols, Strided(hw));
        ym.noalias() = wm * cm;
      });
    }
    for (std::size_t o = 0; o < oc; ++o) {
      auto plane = y.plane(n, o);
      const double b = p.bias[o];
      for (double& v : plane) v += b;
    }
  }
  Forward out{std::move(y), make_cache()};
  out.cache.input = x;
  return out;
}

ConvGrads conv_backward(const Tensor& dy, LayerCache& cache, const ConvParams& p) {
  cache.consume("conv");
  const Tensor& x = cache.input;
  const Shape& s = x.shape();
  const std::size_t k = p.kernel();
  const std::size_t oc = p.out_channels();
  if (!(dy.shape() == Shape{s.n, oc, s.h, s.w})) {
    throw ShapeError("conv backward: dy shape " + to_string(dy.shape()) +
                     " does not match forward output");
  }
  const std::size_t ckk = s.c * k * k;
  const auto hw = static_cast<Eigen::Index>(s.plane());
  ConvGrads g{Tensor(s), Tensor(p.weight.shape()), std::vector<double>(oc, 0.0)};
  Eigen::Map<const RowMat> wm(p.weight.data().data(), static_cast<Eigen::Index>(oc),
                              static_cast<Eigen::Index>(ckk));
  Eigen::Map<RowMat> dwm(g.dweight.data().data(), static_cast<Eigen::Index>(oc),
                         static_cast<Eigen::Index>(ckk));

  for (std::size_t n = 0; n < s.n; ++n) {
    const double* dyn = &dy.data()[dy.index(n, 0, 0, 0)];
    for (std::size_t o = 0; o < oc; ++o) {
      auto plane = dy.plane(n, o);
      double acc = 0.0;
      for (double v : plane) acc += v;
      g.dbias[o] += acc;
    }
    if (k == 1) {
      ConstPlaneMap xm(&x.data()[x.index(n, 0, 0, 0)], static_cast<Eigen::Index>(s.c), hw,
                       Strided(hw));
      ConstPlaneMap dym(dyn, static_cast<Eigen::Index>(oc), hw, Strided(hw));
      PlaneMap dxm(&g.dx.data()[g.dx.index(n, 0, 0, 0)], static_cast<Eigen::Index>(s.c), hw,
                   Strided(hw));
      dwm.noalias() += dym * xm.transpose();
      dxm.noalias() = wm.transpose() * dym;
      continue;
    }
    const std::size_t tile = rows_per_tile(ckk, s.w, s.h);
    std::vector<double> col;
    std::vector<double> dcol;
    for (std::size_t r0 = 0; r0 < s.h; r0 += tile) {
      const std::size_t r1 = std::min(s.h, r0 + tile);
      const auto cols = static_cast<Eigen::Index>((r1 - r0) * s.w);
      im2col_rows(x, n, r0, r1, col);
      Eigen::Map<const RowMat> cm(col.data(), static_cast<Eigen::Index>(ckk), cols);
      ConstPlaneMap dym(dyn + r0 * s.w, static_cast<Eigen::Index>(oc), cols, Strided(hw));
      dwm.noalias() += dym * cm.transpose();
      dcol.resize(ckk * static_cast<std::size_t>(cols));
      Eigen::Map<RowMat> dcm(dcol.data(), static_cast<Eigen::Index>(ckk), cols);
      dcm.noalias() = wm.transpose() * dym;
      col2im_rows(dcol, n, r0, r1, g.dx);
    }
  }
  return g;
}

Forward relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  Forward out{std::move(y), make_cache()};
  out.cache.input = x;
  return out;
}

Tensor relu_backward(const Tensor& dy, LayerCache& cache) {
  cache.consume("relu");
  if (!(dy.shape() == cache.input.shape())) throw ShapeError("relu backward: shape mismatch");
  Tensor dx = dy;
  auto in = cache.input.data();
  auto d = dx.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!(in[i] > 0.0)) d[i] = 0.0;
  }
  return dx;
}

Forward maxpool2x2(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError("maxpool: spatial size " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                     " is not even");
  }
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  Tensor y(os);
  Forward out{Tensor{}, make_cache()};
  out.cache.input_shape = s;
  out.cache.argmax.resize(os.numel());
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t base = x.index(n, c, 0, 0);
      auto src = x.plane(n, c);
      for (std::size_t i = 0; i < os.h; ++i) {
        for (std::size_t j = 0; j < os.w; ++j) {
          std::size_t best = (2 * i) * s.w + 2 * j;
          const std::size_t cand[3] = {best + 1, best + s.w, best + s.w + 1};
          for (std::size_t q : cand) {
            if (src[q] > src[best]) best = q;
          }
          const std::size_t oi = y.index(n, c, i, j);
          y[oi] = src[best];
          out.cache.argmax[oi] = static_cast<std::uint32_t>(base + best);
        }
      }
    }
  }
  out.y = std::move(y);
  return out;
}

Tensor maxpool_backward(const Tensor& dy, LayerCache& cache) {
  cache.consume("maxpool");
  if (dy.size() != cache.argmax.size()) throw ShapeError("maxpool backward: shape mismatch");
  Tensor dx(cache.input_shape);
  for (std::size_t i = 0; i < dy.size(); ++i) dx[cache.argmax[i]] += dy[i];
  return dx;
}

std::vector<double> bilinear_weights_1d(std::size_t factor) {
  check_factor(factor);
  const std::size_t k = 2 * factor - factor % 2;
  const double s = static_cast<double>(factor);
  const double center = k % 2 == 1 ? static_cast<double>(k - 1) / 2.0 : s - 0.5;
  std::vector<double> w(k);
  for (std::size_t i = 0; i < k; ++i) w[i] = 1.0 - std::abs(static_cast<double>(i) - center) / s;
  return w;
}

Tensor bilinear_kernel(std::size_t factor) {
  const auto w = bilinear_weights_1d(factor);
  const std::size_t k = w.size();
  Tensor out(Shape{1, 1, k, k});
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) out.at(0, 0, i, j) = w[i] * w[j];
  }
  return out;
}

Matrix upsample_operator(std::size_t n, std::size_t factor) {
  const auto w = bilinear_weights_1d(factor);
  const std::size_t k = w.size();
  const std::size_t offset = (k - factor) / 2;
  Matrix a(n * factor, n);
  for (std::size_t o = 0; o < a.rows; ++o) {
    const std::size_t q = o + offset;  // position in the uncropped transposed-conv output
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (q < factor * i) break;
      const std::size_t tap = q - factor * i;
      if (tap < k) {
        a(o, i) = w[tap];
        total += w[tap];
      }
    }
    for (std::size_t i = 0; i < n; ++i) a(o, i) /= total;
  }
  return a;
}

Tensor upsample_forward(const Tensor& x, std::size_t factor) {
  check_factor(factor);
  const Shape& s = x.shape();
  if (factor == 1) return x;
  const Matrix ah = upsample_operator(s.h, factor);
  const Matrix aw = upsample_operator(s.w, factor);
  Tensor y(Shape{s.n, s.c, s.h * factor, s.w * factor});
  Eigen::Map<const RowMat> ahm(ah.data.data(), static_cast<Eigen::Index>(ah.rows),
                               static_cast<Eigen::Index>(ah.cols));
  Eigen::Map<const RowMat> awm(aw.data.data(), static_cast<Eigen::Index>(aw.rows),
                               static_cast<Eigen::Index>(aw.cols));
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      Eigen::Map<const RowMat> xm(x.plane(n, c).data(), static_cast<Eigen::Index>(s.h),
                                  static_cast<Eigen::Index>(s.w));
      Eigen::Map<RowMat> ym(y.plane(n, c).data(), static_cast<Eigen::Index>(ah.rows),
                            static_cast<Eigen::Index>(aw.rows));
      ym.noalias() = ahm * xm * awm.transpose();
    }
  }
  return y;
}

Tensor upsample_backward(const Tensor& dy, std::size_t factor, const Shape& input_shape) {
  check_factor(factor);
  const Shape& s = input_shape;
  if (!(dy.shape() == Shape{s.n, s.c, s.h * factor, s.w * factor})) {
    throw ShapeError("upsample backward: dy shape " + to_string(dy.shape()) + " does not match");
  }
  if (factor == 1) return dy;
  const Matrix ah = upsample_operator(s.h, factor);
  const Matrix aw = upsample_operator(s.w, factor);
  Tensor dx(s);
  Eigen::Map<const RowMat> ahm(ah.data.data(), static_cast<Eigen::Index>(ah.rows),
                               static_cast<Eigen::Index>(ah.cols));
  Eigen::Map<const RowMat> awm(aw.data.data(), static_cast<Eigen::Index>(aw.rows),
                               static_cast<Eigen::Index>(aw.cols));
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      Eigen::Map<const RowMat> dym(dy.plane(n, c).data(), static_cast<Eigen::Index>(ah.rows),
                                   static_cast<Eigen::Index>(aw.rows));
      Eigen::Map<RowMat> dxm(dx.plane(n, c).data(), static_cast<Eigen::Index>(s.h),
                             static_cast<Eigen::Index>(s.w));
      dxm.noalias() = ahm.transpose() * dym * awm;
    }
  }
  return dx;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = sigmoid(v);
  return y;
}

}  // namespace blurmap
