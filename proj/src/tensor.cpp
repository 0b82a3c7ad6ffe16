#include "blurmap/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "blurmap/error.hpp"

namespace blurmap {

namespace {

std::atomic<unsigned> g_threads{std::max(1u, std::thread::hardware_concurrency())};
std::atomic<bool> g_deterministic{false};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

}  // namespace

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape_.numel()) {
    throw ShapeError("tensor of shape " + to_string(shape_) + " needs " +
                     std::to_string(shape_.numel()) + " values, got " +
                     std::to_string(data_.size()));
  }
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::vector<float> Tensor::to_f32() const {
  std::vector<float> out(data_.size());
  std::transform(data_.begin(), data_.end(), out.begin(),
                 [](double v) { return static_cast<float>(v); });
  return out;
}

Tensor Tensor::from_f32(Shape shape, std::span<const float> values) {
  std::vector<double> d(values.begin(), values.end());
  return Tensor(shape, std::move(d));
}

Tensor tensor_new(Shape shape, double fill) { return Tensor(shape, fill); }

Tensor tensor_new(Shape shape, std::vector<double> values) {
  return Tensor(shape, std::move(values));
}

Tensor axpy(double alpha, const Tensor& x, const Tensor& y) {
  if (!(x.shape() == y.shape())) {
    throw ShapeError("axpy: " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  }
  Tensor out = y;
  auto o = out.data();
  auto xs = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += alpha * xs[i];
  return out;
}

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) throw ShapeError("matrix value count does not match rows*cols");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix im2col(const Tensor& x, std::size_t kernel, std::size_t pad, std::size_t stride,
              std::size_t n) {
  const Shape& s = x.shape();
  if (n >= s.n) throw ShapeError("im2col: batch index out of range");
  if (kernel == 0 || stride == 0) throw ShapeError("im2col: kernel and stride must be positive");
  if (s.h + 2 * pad < kernel || s.w + 2 * pad < kernel) {
    throw ShapeError("im2col: kernel larger than padded input");
  }
  const std::size_t oh = (s.h + 2 * pad - kernel) / stride + 1;
  const std::size_t ow = (s.w + 2 * pad - kernel) / stride + 1;
  Matrix m(s.c * kernel * kernel, oh * ow);
  const auto ip = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t c = 0; c < s.c; ++c) {
    auto src = x.plane(n, c);
    for (std::size_t ki = 0; ki < kernel; ++ki) {
      for (std::size_t kj = 0; kj < kernel; ++kj) {
        double* row = &m.data[((c * kernel + ki) * kernel + kj) * m.cols];
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ki) - ip;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kj) - ip;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w)) continue;
            row[oy * ow + ox] = src[static_cast<std::size_t>(iy) * s.w + static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
  return m;
}

void gemm(std::span<const double> a, std::size_t a_rows, std::size_t a_cols, bool trans_a,
          std::span<const double> b, std::size_t b_rows, std::size_t b_cols, bool trans_b,
          std::span<double> c, bool accumulate) {
  const auto ar = static_cast<Eigen::Index>(a_rows), ac = static_cast<Eigen::Index>(a_cols);
  const auto br = static_cast<Eigen::Index>(b_rows), bc = static_cast<Eigen::Index>(b_cols);
  ConstMap am(a.data(), ar, ac);
  ConstMap bm(b.data(), br, bc);
  const Eigen::Index m = trans_a ? ac : ar;
  const Eigen::Index k = trans_a ? ar : ac;
  const Eigen::Index k2 = trans_b ? bc : br;
  const Eigen::Index nn = trans_b ? br : bc;
  if (k != k2) throw ShapeError("gemm: inner dimensions differ");
  if (c.size() != static_cast<std::size_t>(m * nn)) throw ShapeError("gemm: output size mismatch");
  MutMap cm(c.data(), m, nn);
  if (!accumulate) cm.setZero();
  if (m == 0 || nn == 0 || k == 0) return;
  if (!trans_a && !trans_b) {
    cm.noalias() += am * bm;
  } else if (trans_a && !trans_b) {
    cm.noalias() += am.transpose() * bm;
  } else if (!trans_a && trans_b) {
    cm.noalias() += am * bm.transpose();
  } else {
    cm.noalias() += am.transpose() * bm.transpose();
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw ShapeError("matmul: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                     " times " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
  }
  Matrix out(a.rows, b.cols);
  gemm(a.data, a.rows, a.cols, false, b.data, b.rows, b.cols, false, out.data, false);
  return out;
}

void set_num_threads(unsigned n) { g_threads = std::max(1u, n); }
unsigned num_threads() { return g_deterministic ? 1u : g_threads.load(); }
void set_deterministic(bool on) { g_deterministic = on; }
bool deterministic() { return g_deterministic; }

}  // namespace blurmap
