#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "blurmap/data.hpp"
#include "blurmap/grid.hpp"
#include "blurmap/model.hpp"
#include "blurmap/tensor.hpp"

namespace blurmap {

// Defaults reproduce the published optimisation recipe.
struct Hyperparams {
  double base_lr = 1.0 / 1024.0;   // 2^-10
  double lr_power = 0.9;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 3;
  std::size_t max_iter = 10000;
  double bias_lr_multiplier = 2.0;
  bool class_balance = false;

  void validate() const;
};

struct LossResult {
  double loss = 0.0;
  Tensor dlogits;
};

// Per-pixel terms of the (optionally class-balanced) cross entropy on logits (1, 1, h, w).
std::vector<double> pixel_losses(const Tensor& logits, const GroundTruth& gt, bool balance);

// Summed per-pixel sigmoid cross entropy on logits (1, 1, h, w) in the fused stable form.
LossResult cross_entropy_loss(const Tensor& logits, const GroundTruth& gt, bool balance);

// base_lr * (1 - iter/max_iter)^lr_power, iter in [0, max_iter].
double poly_lr(std::size_t iter, const Hyperparams& hp);

// Momentum buffers, one per parameter tensor.
struct OptState {
  Gradients velocity;
  static OptState zeros_like(const Network& net) { return {zero_gradients(net)}; }
};

// v <- momentum*v + eta*(g + decay*w) (no decay for biases); w <- w - v.
void sgd_update(std::span<double> w, std::span<const double> g, std::span<double> v, double lr,
                const Hyperparams& hp, bool is_bias);

// Applies sgd_update to every weight and bias tensor of the network.
void sgd_step(Network& net, const Gradients& grads, OptState& state, double lr,
              const Hyperparams& hp);

struct TrainLogRow {
  std::size_t iter = 0;
  double lr = 0.0;
  double loss_sum = 0.0;         // batch mean of per-image summed loss
  double loss_per_pixel = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  Network net;
  TrainLog log;
};

using TrainProgress = std::function<void(const TrainLogRow&)>;

TrainResult train(const std::vector<Sample>& dataset, ConfigId config, double width_multiplier,
                  const Hyperparams& hp, const InitScheme& init, std::uint64_t seed,
                  const TrainProgress& progress = {});

// Same loop, starting from an existing network.
TrainResult train(const std::vector<Sample>& dataset, Network net, const Hyperparams& hp,
                  std::uint64_t seed, const TrainProgress& progress = {});

// Summed loss of one image and its parameter gradients.
double loss_and_gradients(const Network& net, const Tensor& x, const GroundTruth& gt,
                          bool balance, Gradients* grads);

struct GradCheckOptions {
  double eps = 1e-5;
  std::size_t n_samples = 200;
  std::uint64_t seed = 0;
  double zero_threshold = 1e-8;
  // Redraw parameters whose +-eps stencil flips a ReLU mask or max-pool argmax, where the
  // loss is not differentiable and central differences do not estimate the gradient.
  bool skip_kinks = true;
  // Applied to the analytic gradients before comparison. Used for mutation tests.
  std::function<void(Gradients&)> tamper;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t exempt = 0;
  std::size_t kinked = 0;   // draws rejected by skip_kinks
};

// Central-difference check of dLoss/dtheta at randomly chosen parameters.
GradCheckResult grad_check(const Network& net, const Tensor& x, const GroundTruth& gt,
                           const GradCheckOptions& opts = {});

}  // namespace blurmap
