#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "blurmap/grid.hpp"
#include "blurmap/layers.hpp"
#include "blurmap/tensor.hpp"

namespace blurmap {

// Network depth: I..V keep the first 1..5 stages of the 16-layer VGG trunk.
enum class ConfigId { I = 1, II, III, IV, V };

std::string to_string(ConfigId id);
ConfigId parse_config(std::string_view s);

enum class LayerKind { conv3, conv1, relu, maxpool, upsample, sigmoid };

std::string_view to_string(LayerKind k);

// One entry of the architecture listing.
struct LayerSpec {
  LayerKind kind;
  std::string name;       // conv layers only (conv1_1 ... conv5_3, score)
  std::size_t in_c = 0;
  std::size_t out_c = 0;
};

// Convolution plus what follows it in the trunk.
struct ConvLayer {
  std::string name;
  ConvParams params;
  bool relu = true;
  bool pool_after = false;
};

struct InitScheme {
  enum class Kind { scratch, zeros, pretrained };
  Kind kind = Kind::scratch;
  std::uint64_t seed = 0;
  std::filesystem::path weights;   // pretrained only

  static InitScheme scratch(std::uint64_t seed) { return {Kind::scratch, seed, {}}; }
  static InitScheme zeros() { return {Kind::zeros, 0, {}}; }
  static InitScheme pretrained(std::filesystem::path manifest, std::uint64_t seed) {
    return {Kind::pretrained, seed, std::move(manifest)};
  }
};

struct Network {
  ConfigId config = ConfigId::V;
  double width_multiplier = 1.0;
  std::size_t upsample_factor = 16;
  std::vector<ConvLayer> convs;   // trunk convs followed by the conv1-1 "score" layer

  // Full ordered layer listing including relu / pool / upsample / sigmoid.
  std::vector<LayerSpec> layers() const;
  std::size_t weight_layer_count() const { return convs.size(); }
  std::size_t parameter_count() const;
};

// Channel count after applying the width multiplier (rounded, at least 1).
std::size_t scaled_channels(std::size_t base, double width_multiplier);

Network build(ConfigId config, double width_multiplier, const InitScheme& init);

// Gaussian N(0, 2/fan_in) weights, zero biases.
void init_scratch(ConvParams& p, std::uint64_t seed);

// Image (1, 3, h, w) -> blur map (h, w).
BlurMap forward(const Network& net, const Tensor& x);

// Pre-upsample, pre-sigmoid output of the conv1-1 layer: (1, 1, h/s, w/s).
Tensor forward_logits(const Network& net, const Tensor& x);

// Per-layer caches from a training forward pass.
struct Trace {
  std::vector<LayerCache> conv, relu, pool;
  Shape logit_shape{};
  Tensor logits_up;   // upsampled logits (n, 1, h, w), sigmoid not applied
};

struct ParamGrads {
  Tensor dweight;
  std::vector<double> dbias;
};

using Gradients = std::vector<ParamGrads>;

Trace forward_trace(const Network& net, const Tensor& x);
// Consumes the trace; d_logits_up is dLoss/d(upsampled logits).
Gradients backward(const Network& net, Trace& trace, const Tensor& d_logits_up);

Gradients zero_gradients(const Network& net);

void save_weights(const Network& net, const std::filesystem::path& manifest);
Network load_weights(const std::filesystem::path& manifest, ConfigId config,
                     double width_multiplier);

// Overwrites layers of `net` present in the container. Layers missing from the container
// raise WeightFormatError, except the score layer when allow_missing_score is set.
// Returns the number of layers loaded.
std::size_t load_into(Network& net, const std::filesystem::path& manifest,
                      bool allow_missing_score);

}  // namespace blurmap
