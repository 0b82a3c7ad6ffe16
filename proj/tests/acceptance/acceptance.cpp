// One PASS / FAIL / SKIP line per acceptance criterion. Exit status is non-zero when any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "blurmap/applications.hpp"
#include "blurmap/baselines.hpp"
#include "blurmap/data.hpp"
#include "blurmap/evaluation.hpp"
#include "blurmap/layers.hpp"
#include "blurmap/model.hpp"
#include "blurmap/training.hpp"
#include "oracles.hpp"

using namespace blurmap;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

enum class Outcome { pass, fail, skip };

struct Verdict {
  Outcome outcome = Outcome::fail;
  std::string detail;
};

Verdict verdict(bool ok, const std::ostringstream& s) { return {ok ? Outcome::pass : Outcome::fail, s.str()}; }

int failures = 0;

void run(const char* name, const std::function<Verdict()>& fn) {
  const auto t0 = Clock::now();
  Verdict v;
  try {
    v = fn();
  } catch (const std::exception& e) {
    v = {Outcome::fail, std::string("exception: ") + e.what()};
  }
  const char* tag = v.outcome == Outcome::pass ? "PASS" : v.outcome == Outcome::fail ? "FAIL" : "SKIP";
  if (v.outcome == Outcome::fail) ++failures;
  std::printf("%s  %-22s %s (%.1fs)\n", tag, name, v.detail.c_str(), seconds_since(t0));
  std::fflush(stdout);
}

Tensor uniform_input(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  return oracle::random_tensor(Shape{1, 3, h, w}, rng, -0.5, 0.5);
}

GroundTruth random_gt(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  GroundTruth g(h, w);
  for (auto& v : g.data) v = rng() % 2;
  return g;
}

Verdict gradient_check() {
  std::mt19937_64 rng(2024);
  const auto t0 = Clock::now();
  std::ostringstream s;
  bool ok = true;
  for (ConfigId c : {ConfigId::I, ConfigId::V}) {
    for (std::size_t size : {16u, 32u}) {
      Network net = build(c, 1.0 / 16, InitScheme::scratch(rng()));
      GradCheckOptions opts;
      opts.n_samples = 200;
      opts.seed = rng();
      GradCheckResult r = grad_check(net, uniform_input(size, size, rng), random_gt(size, size, rng), opts);
      ok = ok && r.max_relative_error <= 1e-4 && r.checked + r.exempt >= 200;
      s << to_string(c) << "@" << size << " " << r.max_relative_error << " (" << r.checked << "+" << r.exempt
        << " exempt, " << r.kinked << " redrawn); ";
    }
  }
  const double t = seconds_since(t0);
  s << "max rel err <= 1e-4, " << t << " s < 120 s";
  return verdict(ok && t < 120.0, s);
}

Verdict layer_oracles() {
  std::mt19937_64 rng(11);
  double conv_err = 0, up_err = 0;
  bool pool_exact = true;
  const int n = 100;
  for (int i = 0; i < n; ++i) {
    const std::size_t h = 2 + 2 * (rng() % 5), w = 2 + 2 * (rng() % 5), ci = 1 + rng() % 4, co = 1 + rng() % 4;
    const std::size_t k = rng() % 2 ? 3 : 1;
    ConvParams p(ci, co, k);
    p.weight = oracle::random_tensor(p.weight.shape(), rng);
    for (double& b : p.bias) b = std::uniform_real_distribution<double>(-1, 1)(rng);
    const Tensor x = oracle::random_tensor(Shape{1 + rng() % 2, ci, h, w}, rng);
    const Tensor y = conv_forward(x, p).y, ref = oracle::conv(x, p.weight, p.bias);
    for (std::size_t j = 0; j < y.size(); ++j) conv_err = std::max(conv_err, std::abs(y.data()[j] - ref.data()[j]));

    const Tensor mp = maxpool2x2(x).y, mref = oracle::maxpool(x);
    for (std::size_t j = 0; j < mp.size(); ++j) pool_exact = pool_exact && mp.data()[j] == mref.data()[j];

    const std::size_t f = std::size_t{1} << (rng() % 5);
    const Tensor u = upsample_forward(x, f), uref = oracle::bilinear_upsample(x, f);
    for (std::size_t j = 0; j < u.size(); ++j) up_err = std::max(up_err, std::abs(u.data()[j] - uref.data()[j]));
  }
  std::ostringstream s;
  s << n << " instances each; conv max err " << conv_err << ", upsample max err " << up_err << " (<= 1e-10), pool "
    << (pool_exact ? "exact" : "MISMATCH");
  return verdict(conv_err <= 1e-10 && up_err <= 1e-10 && pool_exact, s);
}

Verdict architecture() {
  const std::size_t counts[] = {3, 5, 8, 11, 14}, factors[] = {1, 2, 4, 8, 16};
  std::mt19937_64 rng(5);
  std::ostringstream s;
  bool ok = true;
  for (int i = 0; i < 5; ++i) {
    const auto c = static_cast<ConfigId>(i + 1);
    Network net = build(c, 1.0 / 16, InitScheme::scratch(3));
    bool shapes = true;
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{32, 48}, {64, 16}}) {
      BlurMap m = forward(net, uniform_input(h, w, rng));
      shapes = shapes && m.rows == h && m.cols == w;
    }
    const bool good = net.weight_layer_count() == counts[i] && net.upsample_factor == factors[i] && shapes;
    ok = ok && good;
    s << to_string(c) << ":" << net.weight_layer_count() << "/" << net.upsample_factor << "x" << (shapes ? "" : " bad shape")
      << " ";
  }
  s << "(layers/upsample, output shape = input shape)";
  return verdict(ok, s);
}

Verdict loss_identities() {
  std::mt19937_64 rng(21);
  double fused_err = 0, grad_err = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = 2 + rng() % 6, w = 2 + rng() % 6;
    const Tensor z = oracle::random_tensor(Shape{1, 1, h, w}, rng, -8, 8);
    const GroundTruth g = random_gt(h, w, rng);
    const LossResult r = cross_entropy_loss(z, g, false);
    double naive = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-z.data()[i]));
      naive -= g.data[i] ? std::log(p) : std::log(1.0 - p);
    }
    fused_err = std::max(fused_err, oracle::rel_err(r.loss, naive));
    const double eps = 1e-6;
    for (std::size_t i = 0; i < z.size(); ++i) {
      Tensor a = z, b = z;
      a.data()[i] += eps;
      b.data()[i] -= eps;
      const double fd = (pixel_losses(a, g, false)[i] - pixel_losses(b, g, false)[i]) / (2 * eps);
      const double analytic = sigmoid(z.data()[i]) - g.data[i];
      grad_err = std::max({grad_err, oracle::rel_err(r.dlogits.data()[i], fd), std::abs(r.dlogits.data()[i] - analytic)});
    }
  }
  std::ostringstream s;
  s << "fused vs naive rel " << fused_err << " (<= 1e-9), dlogits vs FD rel " << grad_err << " (<= 1e-6)";
  return verdict(fused_err <= 1e-9 && grad_err <= 1e-6, s);
}

Verdict optimizer_schedule() {
  Hyperparams hp;
  const double a = poly_lr(0, hp), b = poly_lr(10000, hp), ratio = poly_lr(5000, hp) / a;
  std::ostringstream s;
  s << "lr(0) " << a << ", lr(10000) " << b << ", lr(5000)/lr(0) " << ratio;
  return verdict(a == std::ldexp(1.0, -10) && b == 0.0 && std::abs(ratio - 0.535886731268146) <= 1e-6, s);
}

// Toy training shared by the learnability and baseline-thesis criteria.
struct ToyRun {
  std::vector<Sample> raw, data;
  Network net;
  double seconds = 0;
  bool deterministic = false;
};

ToyRun& toy() {
  static ToyRun run = [] {
    ToyRun r;
    const std::uint64_t seed = 7;
    r.raw = make_synthetic(8, 64, seed);
    for (const Sample& s : r.raw) r.data.push_back(preprocess(s, 64));
    Hyperparams hp;
    hp.base_lr = std::ldexp(1.0, -17);
    hp.max_iter = 1000;
    const auto t0 = Clock::now();
    TrainResult a = train(r.data, ConfigId::V, 1.0 / 8, hp, InitScheme::scratch(seed), seed);
    r.seconds = seconds_since(t0);
    TrainResult b = train(r.data, ConfigId::V, 1.0 / 8, hp, InitScheme::scratch(seed), seed);
    r.deterministic = true;
    for (std::size_t k = 0; k < a.net.convs.size(); ++k) {
      r.deterministic = r.deterministic && oracle::values(a.net.convs[k].params.weight) ==
                                               oracle::values(b.net.convs[k].params.weight) &&
                        a.net.convs[k].params.bias == b.net.convs[k].params.bias;
    }
    r.net = std::move(a.net);
    return r;
  }();
  return run;
}

Verdict toy_learnability() {
  ToyRun& r = toy();
  std::vector<BlurMap> maps;
  std::vector<GroundTruth> gts;
  std::size_t correct = 0, total = 0;
  for (const Sample& s : r.data) {
    maps.push_back(forward(r.net, s.image));
    gts.push_back(s.gt);
    for (std::size_t i = 0; i < s.gt.size(); ++i, ++total) correct += (maps.back().data[i] >= 0.5) == (s.gt.data[i] == 1);
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(total);
  const EvalReport rep = evaluate(maps, gts);
  std::ostringstream s;
  s << "Config V 1/8, 8x64px, 1000 iters: acc " << acc << ", ODS " << rep.ods_f << " (>= 0.95), train " << r.seconds
    << " s (< 900 s), " << (r.deterministic ? "deterministic" : "NOT deterministic");
  return verdict(acc >= 0.95 && rep.ods_f >= 0.95 && r.seconds < 900 && r.deterministic, s);
}

Verdict baseline_thesis() {
  ToyRun& r = toy();
  double grad_sum = 0, slope_sum = 0, net_sum = 0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < r.raw.size(); ++k) {
    const GrayImage g = to_luma(r.raw[k].image);
    const BlurMap a = gradient_stat_map(g), b = spectral_slope_map(g), c = forward(r.net, r.data[k].image);
    const Region f = *r.raw[k].flat_patch;
    for (std::size_t y = f.top; y < f.top + f.height; ++y)
      for (std::size_t x = f.left; x < f.left + f.width; ++x, ++n) {
        grad_sum += a(y, x);
        slope_sum += b(y, x);
        net_sum += c(y, x);
      }
  }
  const double ga = grad_sum / n, sa = slope_sum / n, na = net_sum / n;
  std::ostringstream s;
  s << "flat-patch mean confidence: gradient " << ga << ", spectral slope " << sa << " (> 0.5); network " << na
    << " (< 0.5)";
  return verdict(ga > 0.5 && sa > 0.5 && na < 0.5, s);
}

Verdict applications() {
  std::ostringstream s;
  bool ok = true;
  // dyadic values over 256 pixels keep sums and means exact
  std::mt19937_64 rng(31);
  BlurMap m(16, 16), comp(16, 16);
  for (std::size_t i = 0; i < m.size(); ++i) {
    m.data[i] = static_cast<double>(rng() % 257) / 256.0;
    comp.data[i] = 1.0 - m.data[i];
  }
  const bool degree = blur_degree(BlurMap(9, 7, 0.0)) == 0.0 && blur_degree(BlurMap(9, 7, 0.5)) == 0.5 &&
                      blur_degree(comp) == 1.0 - blur_degree(m);
  ok = ok && degree;
  s << "degree identities " << (degree ? "exact" : "FAILED");

  const bool tri = trimap_label(std::nextafter(0.1, 0.0)) == TrimapLabel::fg && trimap_label(0.1) == TrimapLabel::prob_fg &&
                   trimap_label(std::nextafter(0.5, 0.0)) == TrimapLabel::prob_fg && trimap_label(0.5) == TrimapLabel::prob_bg &&
                   trimap_label(std::nextafter(0.9, 0.0)) == TrimapLabel::prob_bg && trimap_label(0.9) == TrimapLabel::bg &&
                   trimap_label(1.0) == TrimapLabel::bg && trimap_label(0.0) == TrimapLabel::fg;
  ok = ok && tri;
  s << "; trimap boundaries " << (tri ? "exact" : "FAILED");

  const Tensor img = oracle::random_tensor(Shape{1, 3, 40, 40}, rng, 0, 1);
  BlurMap mask(40, 40);
  for (std::size_t y = 0; y < 40; ++y)
    for (std::size_t x = 0; x < 40; ++x) mask(y, x) = x + y < 40 ? 0.9 : 0.1;   // 0.1 is not above the threshold
  const Tensor out = magnify_blur(img, mask, kDefaultMagnifySigma);
  bool untouched = true, changed = false;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 40; ++y)
      for (std::size_t x = 0; x < 40; ++x) {
        if (mask(y, x) <= kMagnifyThreshold) untouched = untouched && out.at(0, c, y, x) == img.at(0, c, y, x);
        else changed = changed || out.at(0, c, y, x) != img.at(0, c, y, x);
      }
  ok = ok && untouched && changed;
  s << "; magnify below-threshold pixels " << (untouched ? "identical" : "MODIFIED");
  return verdict(ok, s);
}

Verdict performance() {
  const unsigned threads = num_threads();
  set_num_threads(1);
  std::mt19937_64 rng(9);
  Network net = build(ConfigId::V, 1.0, InitScheme::scratch(1));
  const Tensor x = uniform_input(384, 384, rng);
  const auto t0 = Clock::now();
  const BlurMap m = forward(net, x);
  const double t = seconds_since(t0);
  set_num_threads(threads);
  std::ostringstream s;
  s << "Config V width 1 at 384x384, single thread: " << t << " s (<= 10 s)";
  return verdict(t <= 10.0 && m.rows == 384 && m.cols == 384, s);
}

Verdict dataset_tier() {
  const char* root = std::getenv("BLURMAP_DATASET");
  const char* weights = std::getenv("BLURMAP_WEIGHTS");
  if (!root || !weights) return {Outcome::skip, "set BLURMAP_DATASET and BLURMAP_WEIGHTS to run"};
  const Dataset ds = ingest(root, SplitSpec::odd());
  const Network net = load_weights(weights, ConfigId::V, 1.0);
  std::vector<BlurMap> maps;
  std::vector<GroundTruth> gts;
  for (const SampleRef& ref : ds.test) {
    const Sample s = load_sample(ref);
    const BlurMap small = forward(net, preprocess(s, 384).image);
    maps.push_back(resize_bilinear(small, s.gt.rows, s.gt.cols));
    gts.push_back(s.gt);
  }
  const EvalReport rep = evaluate(maps, gts);
  std::ostringstream o;
  o << ds.test.size() << " test images: ODS " << rep.ods_f << ", OIS " << rep.ois_f << ", AP " << rep.ap;
  return verdict(rep.ods_f >= 0.0 && rep.ods_f <= 1.0, o);
}

}  // namespace

int main() {
  run("gradient-correctness", gradient_check);
  run("layer-oracles", layer_oracles);
  run("architecture", architecture);
  run("loss-identities", loss_identities);
  run("optimizer-schedule", optimizer_schedule);
  run("metric-oracles", [] {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> d(0, 1);
    bool counts = true;
    double ratio_err = 0;
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<BlurMap> maps;
      std::vector<GroundTruth> gts;
      const std::size_t k = 1 + rng() % 3;
      for (std::size_t i = 0; i < k; ++i) {
        BlurMap m(8, 8);
        GroundTruth g(8, 8);
        for (std::size_t p = 0; p < 64; ++p) {
          g.data[p] = d(rng) < 0.4;
          m.data[p] = std::clamp(0.35 * g.data[p] + 0.65 * d(rng), 0.0, 1.0);
          if (trial % 2 == 0) m.data[p] = std::round(m.data[p] * 255) / 255;
        }
        maps.push_back(m);
        gts.push_back(g);
      }
      const EvalReport r = evaluate(maps, gts);
      const oracle::Scan s = oracle::scan(maps, gts, kDefaultThresholds);
      counts = counts && r.curve.tp == s.tp && r.curve.fp == s.fp && r.curve.fn == s.fn;
      const auto [t, f] = oracle::ods(s);
      counts = counts && r.ods_threshold == t;
      for (double e : {r.ods_f - f, r.ois_f - oracle::ois(maps, gts, kDefaultThresholds), r.ap - oracle::ap(s)})
        ratio_err = std::max(ratio_err, std::abs(e));
      for (std::size_t j = 0; j < s.p.size(); ++j)
        ratio_err = std::max({ratio_err, std::abs(r.curve.precision[j] - s.p[j]), std::abs(r.curve.recall[j] - s.r[j])});
    }
    std::ostringstream o;
    o << "200 random 8x8 instances: counts " << (counts ? "exact" : "MISMATCH") << ", ODS/OIS/AP/P/R max err "
      << ratio_err << " (<= 1e-12)";
    return verdict(counts && ratio_err <= 1e-12, o);
  });
  run("toy-learnability", toy_learnability);
  run("baseline-thesis", baseline_thesis);
  run("applications", applications);
  run("performance", performance);
  run("dataset-tier", dataset_tier);
  std::printf("%s: %d criteria failed\n", failures ? "FAILED" : "OK", failures);
  return failures ? 1 : 0;
}
