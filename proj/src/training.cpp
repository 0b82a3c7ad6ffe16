#include "blurmap/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <string>

#include "blurmap/error.hpp"
#include "blurmap/layers.hpp"

namespace blurmap {

namespace {

void check_finite(std::span<const double> v, const std::string& what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError("training: non-finite value in " + what);
  }
}

void add_scaled(Gradients& acc, const Gradients& g, double scale) {
  for (std::size_t i = 0; i < acc.size(); ++i) {
    auto a = acc[i].dweight.data();
    auto s = g[i].dweight.data();
    for (std::size_t j = 0; j < a.size(); ++j) a[j] += scale * s[j];
    for (std::size_t j = 0; j < acc[i].dbias.size(); ++j) acc[i].dbias[j] += scale * g[i].dbias[j];
  }
}

}  // namespace

void Hyperparams::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (max_iter < 1) throw ConfigError("max_iter must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (bias_lr_multiplier < 0.0) throw ConfigError("bias_lr_multiplier must be non-negative");
}

namespace {

struct ClassWeights {
  double pos = 1.0, neg = 1.0;
};

ClassWeights check_labels(const Tensor& logits, const GroundTruth& gt, bool balance) {
  const Shape& s = logits.shape();
  if (s.n != 1 || s.c != 1 || s.h != gt.rows || s.w != gt.cols) {
    throw ShapeError("loss: logits " + to_string(s) + " do not match ground truth " +
                     std::to_string(gt.rows) + "x" + std::to_string(gt.cols));
  }
  std::size_t positives = 0;
  for (std::uint8_t y : gt.data) {
    if (y > 1) throw DataError("loss: ground-truth label " + std::to_string(y) + " is not 0 or 1");
    positives += y;
  }
  ClassWeights w;
  if (balance && !gt.empty()) {
    const double beta = static_cast<double>(positives) / static_cast<double>(gt.size());
    w.pos = 1.0 - beta;
    w.neg = beta;
  }
  return w;
}

// max(z, 0) - z y + log(1 + exp(-|z|))
double fused_term(double z, double y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace

std::vector<double> pixel_losses(const Tensor& logits, const GroundTruth& gt, bool balance) {
  const ClassWeights w = check_labels(logits, gt, balance);
  auto z = logits.data();
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = (gt.data[i] ? w.pos : w.neg) * fused_term(z[i], gt.data[i]);
  }
  return out;
}

LossResult cross_entropy_loss(const Tensor& logits, const GroundTruth& gt, bool balance) {
  const ClassWeights w = check_labels(logits, gt, balance);
  LossResult r{0.0, Tensor(logits.shape())};
  auto z = logits.data();
  auto d = r.dlogits.data();
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double y = gt.data[i];
    const double wi = gt.data[i] ? w.pos : w.neg;
    r.loss += wi * fused_term(z[i], y);
    d[i] = wi * (sigmoid(z[i]) - y);
  }
  return r;
}

double poly_lr(std::size_t iter, const Hyperparams& hp) {
  if (hp.max_iter == 0 || iter > hp.max_iter) {
    throw ContractError("poly_lr: iteration " + std::to_string(iter) + " outside [0, " +
                        std::to_string(hp.max_iter) + "]");
  }
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(hp.max_iter);
  return hp.base_lr * std::pow(frac, hp.lr_power);
}

void sgd_update(std::span<double> w, std::span<const double> g, std::span<double> v, double lr,
                const Hyperparams& hp, bool is_bias) {
  if (w.size() != g.size() || w.size() != v.size()) throw ShapeError("sgd: buffer sizes differ");
  if (lr < 0.0) throw ContractError("sgd: negative learning rate");
  check_finite(g, "gradients");
  const double eta = lr * (is_bias ? hp.bias_lr_multiplier : 1.0);
  const double decay = is_bias ? 0.0 : hp.weight_decay;
  for (std::size_t i = 0; i < w.size(); ++i) {
    v[i] = hp.momentum * v[i] + eta * (g[i] + decay * w[i]);
    w[i] -= v[i];
  }
}

void sgd_step(Network& net, const Gradients& grads, OptState& state, double lr,
              const Hyperparams& hp) {
  if (grads.size() != net.convs.size() || state.velocity.size() != net.convs.size()) {
    throw ShapeError("sgd: gradient/state count does not match network");
  }
  for (std::size_t i = 0; i < net.convs.size(); ++i) {
    ConvParams& p = net.convs[i].params;
    sgd_update(p.weight.data(), grads[i].dweight.data(), state.velocity[i].dweight.data(), lr, hp,
               false);
    sgd_update(p.bias, grads[i].dbias, state.velocity[i].dbias, lr, hp, true);
  }
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write training log " + path.string());
  out.precision(10);
  out << "iter,lr,loss_sum,loss_per_pixel\n";
  for (const TrainLogRow& r : rows) {
    out << r.iter << ',' << r.lr << ',' << r.loss_sum << ',' << r.loss_per_pixel << '\n';
  }
}

double loss_and_gradients(const Network& net, const Tensor& x, const GroundTruth& gt,
                          bool balance, Gradients* grads) {
  Trace t = forward_trace(net, x);
  LossResult l = cross_entropy_loss(t.logits_up, gt, balance);
  if (grads != nullptr) *grads = backward(net, t, l.dlogits);
  return l.loss;
}

TrainResult train(const std::vector<Sample>& dataset, ConfigId config, double width_multiplier,
                  const Hyperparams& hp, const InitScheme& init, std::uint64_t seed,
                  const TrainProgress& progress) {
  return train(dataset, build(config, width_multiplier, init), hp, seed, progress);
}

TrainResult train(const std::vector<Sample>& dataset, Network net, const Hyperparams& hp,
                  std::uint64_t seed, const TrainProgress& progress) {
  TrainResult result{std::move(net), {}};
  if (hp.max_iter == 0) return result;
  hp.validate();
  if (dataset.empty()) throw DataError("train: empty dataset");

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  OptState state = OptState::zeros_like(result.net);
  const double inv_batch = 1.0 / static_cast<double>(hp.batch_size);
  for (std::size_t it = 0; it < hp.max_iter; ++it) {
    const double lr = poly_lr(it, hp);
    Gradients acc = zero_gradients(result.net);
    double loss = 0.0, pixels = 0.0;
    for (std::size_t b = 0; b < hp.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const Sample& s = dataset[order[cursor++]];
      Gradients g;
      loss += loss_and_gradients(result.net, s.image, s.gt, hp.class_balance, &g);
      pixels += static_cast<double>(s.gt.size());
      add_scaled(acc, g, inv_batch);
    }
    if (!std::isfinite(loss)) {
      throw NumericError("training: loss became non-finite at iteration " + std::to_string(it));
    }
    sgd_step(result.net, acc, state, lr, hp);
    TrainLogRow row{it, lr, loss * inv_batch, loss / pixels};
    result.log.rows.push_back(row);
    if (progress) progress(row);
  }
  return result;
}

namespace {

// ReLU masks and max-pool argmaxes of a forward pass.
struct Pattern {
  std::vector<std::uint8_t> active;
  std::vector<std::uint32_t> argmax;
  friend bool operator==(const Pattern&, const Pattern&) = default;
};

Pattern pattern_of(const Trace& t) {
  Pattern p;
  for (const LayerCache& c : t.relu) {
    for (double v : c.input.data()) p.active.push_back(v > 0.0 ? 1 : 0);
  }
  for (const LayerCache& c : t.pool) p.argmax.insert(p.argmax.end(), c.argmax.begin(), c.argmax.end());
  return p;
}

}  // namespace

GradCheckResult grad_check(const Network& net, const Tensor& x, const GroundTruth& gt,
                           const GradCheckOptions& opts) {
  Gradients analytic;
  Pattern base;
  {
    Trace t = forward_trace(net, x);
    base = pattern_of(t);
    LossResult l = cross_entropy_loss(t.logits_up, gt, false);
    analytic = backward(net, t, l.dlogits);
  }
  if (opts.tamper) opts.tamper(analytic);

  struct Slot {
    std::size_t layer;
    bool bias;
    std::size_t index;
  };
  std::vector<Slot> slots;
  for (std::size_t l = 0; l < net.convs.size(); ++l) {
    for (std::size_t i = 0; i < net.convs[l].params.weight.size(); ++i) slots.push_back({l, false, i});
    for (std::size_t i = 0; i < net.convs[l].params.bias.size(); ++i) slots.push_back({l, true, i});
  }
  std::mt19937_64 rng(opts.seed);
  std::shuffle(slots.begin(), slots.end(), rng);

  GradCheckResult r;
  Network probe = net;
  for (const Slot& s : slots) {
    if (r.checked + r.exempt >= opts.n_samples) break;
    ConvParams& p = probe.convs[s.layer].params;
    double& theta = s.bias ? p.bias[s.index] : p.weight[s.index];
    const double saved = theta;
    theta = saved + opts.eps;
    Trace up = forward_trace(probe, x);
    theta = saved - opts.eps;
    Trace down = forward_trace(probe, x);
    theta = saved;
    if (opts.skip_kinks && (!(pattern_of(up) == base) || !(pattern_of(down) == base))) {
      ++r.kinked;
      continue;
    }
    // Difference the per-pixel terms before summing to avoid cancellation in the totals.
    const auto lu = pixel_losses(up.logits_up, gt, false);
    const auto ld = pixel_losses(down.logits_up, gt, false);
    double diff = 0.0;
    for (std::size_t i = 0; i < lu.size(); ++i) diff += lu[i] - ld[i];
    const double numeric = diff / (2.0 * opts.eps);
    const double a = s.bias ? analytic[s.layer].dbias[s.index] : analytic[s.layer].dweight[s.index];
    const double scale = std::max(std::abs(a), std::abs(numeric));
    if (scale < opts.zero_threshold) {
      ++r.exempt;
      continue;
    }
    r.max_relative_error = std::max(r.max_relative_error, std::abs(a - numeric) / scale);
    ++r.checked;
  }
  return r;
}

}  // namespace blurmap
