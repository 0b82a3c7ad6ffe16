#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace blurmap {

// (n, c, h, w), row-major with w fastest.
struct Shape {
  std::size_t n = 0, c = 0, h = 0, w = 0;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

// Dense 4-D float64 tensor in NCHW layout.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[index(n, c, h, w)];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[index(n, c, h, w)];
  }

  // Contiguous h*w plane of item n, channel c.
  std::span<double> plane(std::size_t n, std::size_t c) {
    return std::span<double>(data_).subspan(index(n, c, 0, 0), shape_.plane());
  }
  std::span<const double> plane(std::size_t n, std::size_t c) const {
    return std::span<const double>(data_).subspan(index(n, c, 0, 0), shape_.plane());
  }

  bool all_finite() const;

  // Values rounded through IEEE-754 binary32, the weight storage precision.
  std::vector<float> to_f32() const;
  static Tensor from_f32(Shape shape, std::span<const float> values);

 private:
  Shape shape_{};
  std::vector<double> data_;
};

Tensor tensor_new(Shape shape, double fill);
Tensor tensor_new(Shape shape, std::vector<double> values);

// alpha * x + y, elementwise.
Tensor axpy(double alpha, const Tensor& x, const Tensor& y);

// Row-major dense matrix used by the convolution lowering.
struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  static Matrix identity(std::size_t n);
};

// Unrolls receptive fields of item `n` into columns: rows = c*k*k, cols = h_out*w_out.
Matrix im2col(const Tensor& x, std::size_t kernel, std::size_t pad, std::size_t stride = 1,
              std::size_t n = 0);

Matrix matmul(const Matrix& a, const Matrix& b);

// Raw-buffer GEMM kernels shared with the layers: c (+)= op(a) * op(b).
// Buffers are row-major; shapes are those of the un-transposed operands.
void gemm(std::span<const double> a, std::size_t a_rows, std::size_t a_cols, bool trans_a,
          std::span<const double> b, std::size_t b_rows, std::size_t b_cols, bool trans_b,
          std::span<double> c, bool accumulate);

// Worker count used by data-parallel loops. Deterministic mode forces 1.
void set_num_threads(unsigned n);
unsigned num_threads();
void set_deterministic(bool on);
bool deterministic();

}  // namespace blurmap
