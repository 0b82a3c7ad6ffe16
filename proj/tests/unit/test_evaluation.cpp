#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "blurmap/error.hpp"
#include "blurmap/evaluation.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace blurmap;

namespace {

struct Instance {
  std::vector<BlurMap> maps;
  std::vector<GroundTruth> gts;
};

Instance random_instance(std::size_t count, std::size_t h, std::size_t w, std::mt19937_64& rng, bool quantized) {
  Instance in;
  std::uniform_real_distribution<double> d(0, 1);
  for (std::size_t k = 0; k < count; ++k) {
    BlurMap m(h, w);
    GroundTruth g(h, w);
    for (std::size_t i = 0; i < m.size(); ++i) {
      g.data[i] = d(rng) < 0.4 ? 1 : 0;
      // correlate prediction with truth so curves are non-trivial
      const double v = std::clamp(0.35 * g.data[i] + 0.65 * d(rng), 0.0, 1.0);
      m.data[i] = quantized ? std::round(v * 255) / 255.0 : v;
    }
    in.maps.push_back(std::move(m));
    in.gts.push_back(std::move(g));
  }
  return in;
}

}  // namespace

TEST_CASE("threshold grid") {
  auto t = threshold_grid(5);
  CHECK(t == std::vector<double>{0, 0.25, 0.5, 0.75, 1.0});
  CHECK(threshold_grid(256)[255] == 1.0);
  CHECK_THROWS_AS(threshold_grid(1), DataError);
}

TEST_CASE("f_measure") {
  CHECK(f_measure(0, 0) == 0.0);
  CHECK(f_measure(1, 1) == 1.0);
  CHECK(f_measure(0.5, 1.0) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("perfect and adversarial predictors") {
  std::mt19937_64 rng(1);
  Instance in = random_instance(3, 6, 5, rng, false);
  std::vector<BlurMap> perfect, adversarial;
  for (auto& g : in.gts) {
    BlurMap p(g.rows, g.cols), a(g.rows, g.cols);
    for (std::size_t i = 0; i < g.size(); ++i) {
      p.data[i] = g.data[i];
      a.data[i] = 1.0 - g.data[i];
    }
    perfect.push_back(p);
    adversarial.push_back(a);
  }
  PRCurve c = pr_curve(perfect, in.gts);
  for (std::size_t j = 1; j < c.size(); ++j) {
    CHECK(c.precision[j] == 1.0);
    CHECK(c.recall[j] == 1.0);
    CHECK(c.f[j] == 1.0);
  }
  EvalReport r = evaluate(perfect, in.gts);
  CHECK(r.ods_f == 1.0);
  CHECK(r.ois_f == 1.0);
  CHECK(r.ap == 1.0);

  PRCurve adv = pr_curve(adversarial, in.gts, 3);   // thresholds 0, 0.5, 1
  CHECK(adv.f[1] == 0.0);
}

TEST_CASE("hand-counted curve point") {
  std::vector<BlurMap> maps{BlurMap(1, 2, std::vector<double>{0.2, 0.8})};
  std::vector<GroundTruth> gts{GroundTruth(1, 2, std::vector<std::uint8_t>{0, 1})};
  PRCurve c = pr_curve(maps, gts, 3);
  CHECK(c.tp[1] == 1);
  CHECK(c.fp[1] == 0);
  CHECK(c.fn[1] == 0);
  CHECK(c.precision[1] == 1.0);
  CHECK(c.recall[1] == 1.0);
  CHECK(c.f[1] == 1.0);
  // nothing predicted at t = 1: precision defined as 1, recall 0
  CHECK(c.tp[2] == 0);
  CHECK(c.precision[2] == 1.0);
  CHECK(c.recall[2] == 0.0);
}

TEST_CASE("ods tie-breaking and single-threshold curves") {
  PRCurve c;
  c.thresholds = {0.0, 0.5, 1.0};
  c.f = {0.4, 0.7, 0.7};
  OdsResult o = ods(c);
  CHECK(o.threshold == 0.5);
  CHECK(o.f == 0.7);
  PRCurve single;
  single.thresholds = {0.3};
  single.f = {0.2};
  CHECK(ods(single).threshold == 0.3);
  CHECK_THROWS_AS(ods(PRCurve{}), DataError);
}

TEST_CASE("ois examples") {
  std::mt19937_64 rng(2);
  Instance in = random_instance(1, 4, 4, rng, false);
  const double one = best_image_f(in.maps[0], in.gts[0]).best_f;
  std::vector<BlurMap> maps(4, in.maps[0]);
  std::vector<GroundTruth> gts(4, in.gts[0]);
  CHECK(ois(maps, gts) == doctest::Approx(one).epsilon(1e-15));

  // two hand-built 2x2 images, grid {0, 0.5, 1}
  std::vector<BlurMap> m2{BlurMap(2, 2, std::vector<double>{0.9, 0.6, 0.1, 0.2}),
                          BlurMap(2, 2, std::vector<double>{0.7, 0.3, 0.4, 0.0})};
  std::vector<GroundTruth> g2{GroundTruth(2, 2, std::vector<std::uint8_t>{1, 0, 0, 0}),
                              GroundTruth(2, 2, std::vector<std::uint8_t>{1, 1, 0, 0})};
  // image 1: t=0.5 -> TP 1 FP 1 -> F 2/3; t=1 -> nothing -> 0; t=0 -> P 1/4 R 1 -> 0.4. best 2/3
  // image 2: t=0 -> P 1/2 R 1 -> 2/3; t=0.5 -> TP 1 -> P 1 R 1/2 -> 2/3. best 2/3
  CHECK(ois(m2, g2, 3) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("degenerate image without blurred pixels") {
  BlurMap m(2, 2, std::vector<double>{0.2, 0.4, 0.3, 0.1});
  GroundTruth g(2, 2, 0);
  ImageScore s = best_image_f(m, g, 5);
  CHECK(s.best_f == 1.0);
  CHECK(s.best_threshold == 0.5);
  BlurMap all(2, 2, 1.0);
  CHECK(best_image_f(all, g, 2).best_f == 0.0);
}

TEST_CASE("average precision examples") {
  PRCurve c;
  c.thresholds = {0, 0.5, 1};
  c.recall = {1.0, 0.5, 0.0};
  c.precision = {0.3, 0.3, 0.3};
  CHECK(average_precision(c) == doctest::Approx(0.3).epsilon(1e-15));
  c.recall = {0.5, 0.25, 0.0};
  c.precision = {0.4, 0.8, 1.0};
  // r = 0 -> 1.0; (0, 0.25] -> 0.8; (0.25, 0.5] -> 0.4; above -> 0
  const double expect = (1.0 + 25 * 0.8 + 25 * 0.4) / 101.0;
  CHECK(average_precision(c) == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("metrics equal the brute-force threshold scan on random 8x8 instances") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const bool quantized = trial % 2 == 0;
    const std::size_t n = trial % 3 == 0 ? 256 : 2 + rng() % 40;
    Instance in = random_instance(1 + rng() % 3, 8, 8, rng, quantized);
    EvalReport r = evaluate(in.maps, in.gts, n);
    oracle::Scan s = oracle::scan(in.maps, in.gts, n);
    CHECK(r.curve.tp == s.tp);
    CHECK(r.curve.fp == s.fp);
    CHECK(r.curve.fn == s.fn);
    for (std::size_t j = 0; j < n; ++j) {
      CHECK(std::abs(r.curve.precision[j] - s.p[j]) <= 1e-12);
      CHECK(std::abs(r.curve.recall[j] - s.r[j]) <= 1e-12);
    }
    auto [t, f] = oracle::ods(s);
    CHECK(r.ods_threshold == t);
    CHECK(std::abs(r.ods_f - f) <= 1e-12);
    CHECK(std::abs(r.ois_f - oracle::ois(in.maps, in.gts, n)) <= 1e-12);
    CHECK(std::abs(r.ap - oracle::ap(s)) <= 1e-12);
  }
}

TEST_CASE("curve invariants") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Instance in = random_instance(2, 8, 8, rng, false);
    EvalReport r = evaluate(in.maps, in.gts);
    for (std::size_t j = 1; j < r.curve.size(); ++j) CHECK(r.curve.recall[j] <= r.curve.recall[j - 1]);
    for (std::size_t j = 0; j < r.curve.size(); ++j) {
      CHECK(r.curve.precision[j] >= 0.0);
      CHECK(r.curve.precision[j] <= 1.0);
      CHECK(r.ods_f >= r.curve.f[j]);
    }
    for (double v : {r.ods_f, r.ois_f, r.ap}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("relabeling maps to grid ranks leaves scores unchanged") {
  std::mt19937_64 rng(5);
  const std::size_t n = 256;
  auto grid = threshold_grid(n);
  for (int trial = 0; trial < 20; ++trial) {
    Instance in = random_instance(2, 8, 8, rng, false);
    std::vector<BlurMap> ranked = in.maps;
    for (auto& m : ranked)
      for (double& v : m.data) {
        // largest grid value not above v keeps every (v >= t) decision
        const auto k = std::upper_bound(grid.begin(), grid.end(), v) - grid.begin();
        v = grid[static_cast<std::size_t>(k - 1)];
      }
    EvalReport a = evaluate(in.maps, in.gts, n), b = evaluate(ranked, in.gts, n);
    CHECK(a.ods_f == b.ods_f);
    CHECK(a.ois_f == b.ois_f);
    CHECK(a.ap == b.ap);
  }
}

TEST_CASE("evaluation input errors") {
  std::vector<BlurMap> maps{BlurMap(2, 2)};
  std::vector<GroundTruth> gts{GroundTruth(2, 3)};
  CHECK_THROWS_AS(pr_curve(maps, gts), DataError);
  CHECK_THROWS_AS(pr_curve({}, {}), DataError);
  std::vector<GroundTruth> two{GroundTruth(2, 2), GroundTruth(2, 2)};
  CHECK_THROWS_AS(evaluate(maps, two), DataError);
}

TEST_CASE("PR csv layout") {
  std::mt19937_64 rng(6);
  Instance in = random_instance(1, 4, 4, rng, false);
  PRCurve c = pr_curve(in.maps, in.gts, 4);
  const auto path = std::filesystem::temp_directory_path() / "blurmap_pr.csv";
  write_pr_csv(c, path);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line == "threshold,tp,fp,fn,precision,recall,f");
  int rows = 0;
  while (std::getline(f, line)) ++rows;
  CHECK(rows == 4);
}
