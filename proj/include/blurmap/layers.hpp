#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "blurmap/tensor.hpp"

namespace blurmap {

// Weights of one conv3-N / conv1-N layer. Stride is always 1 and padding keeps H x W.
struct ConvParams {
  Tensor weight;               // (out_c, in_c, k, k), k in {1, 3}
  std::vector<double> bias;    // out_c

  ConvParams() = default;
  ConvParams(std::size_t in_c, std::size_t out_c, std::size_t kernel);

  std::size_t out_channels() const { return weight.shape().n; }
  std::size_t in_channels() const { return weight.shape().c; }
  std::size_t kernel() const { return weight.shape().h; }
  std::size_t pad() const { return kernel() == 3 ? 1 : 0; }
};

// Forward state needed by exactly one backward call.
class LayerCache {
 public:
  LayerCache() = default;

  bool live() const { return live_; }
  // Marks the cache used; a second call throws ContractError.
  void consume(const char* layer);

  Tensor input;                        // conv, relu
  std::vector<std::uint32_t> argmax;   // maxpool: flat input index per output element
  Shape input_shape{};                 // maxpool, upsample

 private:
  friend LayerCache make_cache();
  bool live_ = false;
};

LayerCache make_cache();

struct ConvGrads {
  Tensor dx;
  Tensor dweight;
  std::vector<double> dbias;
};

struct Forward {
  Tensor y;
  LayerCache cache;
};

Forward conv_forward(const Tensor& x, const ConvParams& p);
ConvGrads conv_backward(const Tensor& dy, LayerCache& cache, const ConvParams& p);

Forward relu(const Tensor& x);
Tensor relu_backward(const Tensor& dy, LayerCache& cache);

// 2x2 window, stride 2. Ties go to the first element in row-major window order.
Forward maxpool2x2(const Tensor& x);
Tensor maxpool_backward(const Tensor& dy, LayerCache& cache);

// Fixed bilinear transposed-conv kernel for factor s in {1,2,4,8,16}: shape (1,1,k,k),
// k = 2s - s%2.
Tensor bilinear_kernel(std::size_t factor);
std::vector<double> bilinear_weights_1d(std::size_t factor);

// Rows of the (s*n x n) interpolation operator realized by the transposed convolution,
// cropped by floor((k - s)/2) and renormalized where the kernel footprint leaves the input.
Matrix upsample_operator(std::size_t n, std::size_t factor);

Tensor upsample_forward(const Tensor& x, std::size_t factor);
Tensor upsample_backward(const Tensor& dy, std::size_t factor, const Shape& input_shape);

double sigmoid(double z);
Tensor sigmoid(const Tensor& x);

}  // namespace blurmap
