#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "blurmap/error.hpp"

namespace blurmap {

// H x W row-major grid.
template <typename T>
struct Grid {
  std::size_t rows = 0, cols = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}
  Grid(std::size_t r, std::size_t c, std::vector<T> values)
      : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) throw ShapeError("grid value count does not match rows*cols");
  }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  template <typename U>
  bool same_shape(const Grid<U>& o) const {
    return rows == o.rows && cols == o.cols;
  }
};

// Per-pixel blur probability in [0, 1].
using BlurMap = Grid<double>;
// Per-pixel label, 1 = blurred.
using GroundTruth = Grid<std::uint8_t>;

}  // namespace blurmap
