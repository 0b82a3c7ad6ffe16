#include "blurmap/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <string>

#include "blurmap/error.hpp"

namespace blurmap {

namespace {

struct Counts {
  std::vector<std::uint64_t> tp, fp;
  std::uint64_t positives = 0;
};

void validate(std::span<const BlurMap> maps, std::span<const GroundTruth> gts, std::size_t n) {
  if (n < 2) throw DataError("evaluation: need at least 2 thresholds");
  if (maps.empty()) throw DataError("evaluation: no images");
  if (maps.size() != gts.size()) {
    throw DataError("evaluation: " + std::to_string(maps.size()) + " maps but " +
                    std::to_string(gts.size()) + " ground truths");
  }
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (!maps[i].same_shape(gts[i])) {
      throw DataError("evaluation: image " + std::to_string(i) + " map is " +
                      std::to_string(maps[i].rows) + "x" + std::to_string(maps[i].cols) +
                      ", ground truth is " + std::to_string(gts[i].rows) + "x" +
                      std::to_string(gts[i].cols));
    }
  }
}

// tp[j] / fp[j]: predicted-positive pixels at threshold j by label. A pixel with value v is
// predicted positive for every j with thresholds[j] <= v, so histogram by that count and
// take suffix sums.
Counts count_image(const BlurMap& map, const GroundTruth& gt, const std::vector<double>& thr) {
  const std::size_t n = thr.size();
  std::vector<std::uint64_t> hist_pos(n + 1, 0), hist_neg(n + 1, 0);
  Counts c;
  for (std::size_t i = 0; i < map.size(); ++i) {
    const auto k = static_cast<std::size_t>(std::upper_bound(thr.begin(), thr.end(), map.data[i]) -
                                            thr.begin());
    if (gt.data[i]) {
      ++hist_pos[k];
      ++c.positives;
    } else {
      ++hist_neg[k];
    }
  }
  c.tp.assign(n, 0);
  c.fp.assign(n, 0);
  std::uint64_t run_p = 0, run_n = 0;
  for (std::size_t j = n; j-- > 0;) {
    run_p += hist_pos[j + 1];
    run_n += hist_neg[j + 1];
    c.tp[j] = run_p;
    c.fp[j] = run_n;
  }
  return c;
}

double precision_of(std::uint64_t tp, std::uint64_t fp) {
  return tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double recall_of(std::uint64_t tp, std::uint64_t fn) {
  return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
}

}  // namespace

std::vector<double> threshold_grid(std::size_t n_thresholds) {
  if (n_thresholds < 2) throw DataError("evaluation: need at least 2 thresholds");
  std::vector<double> t(n_thresholds);
  for (std::size_t j = 0; j < n_thresholds; ++j) {
    t[j] = static_cast<double>(j) / static_cast<double>(n_thresholds - 1);
  }
  return t;
}

double f_measure(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

PRCurve pr_curve(std::span<const BlurMap> maps, std::span<const GroundTruth> gts,
                 std::size_t n_thresholds) {
  validate(maps, gts, n_thresholds);
  PRCurve curve;
  curve.thresholds = threshold_grid(n_thresholds);
  curve.tp.assign(n_thresholds, 0);
  curve.fp.assign(n_thresholds, 0);
  std::uint64_t positives = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const Counts c = count_image(maps[i], gts[i], curve.thresholds);
    for (std::size_t j = 0; j < n_thresholds; ++j) {
      curve.tp[j] += c.tp[j];
      curve.fp[j] += c.fp[j];
    }
    positives += c.positives;
  }
  curve.fn.resize(n_thresholds);
  curve.precision.resize(n_thresholds);
  curve.recall.resize(n_thresholds);
  curve.f.resize(n_thresholds);
  for (std::size_t j = 0; j < n_thresholds; ++j) {
    curve.fn[j] = positives - curve.tp[j];
    curve.precision[j] = precision_of(curve.tp[j], curve.fp[j]);
    curve.recall[j] = recall_of(curve.tp[j], curve.fn[j]);
    curve.f[j] = f_measure(curve.precision[j], curve.recall[j]);
  }
  return curve;
}

OdsResult ods(const PRCurve& curve) {
  if (curve.size() == 0) throw DataError("ods: empty curve");
  std::size_t best = 0;
  for (std::size_t j = 1; j < curve.size(); ++j) {
    if (curve.f[j] > curve.f[best]) best = j;
  }
  return {curve.thresholds[best], curve.f[best]};
}

ImageScore best_image_f(const BlurMap& map, const GroundTruth& gt, std::size_t n_thresholds) {
  if (!map.same_shape(gt)) throw DataError("evaluation: map and ground truth shapes differ");
  const auto thr = threshold_grid(n_thresholds);
  const Counts c = count_image(map, gt, thr);
  ImageScore best{thr[0], -1.0};
  for (std::size_t j = 0; j < thr.size(); ++j) {
    double f;
    if (c.positives == 0) {
      f = c.fp[j] == 0 ? 1.0 : 0.0;
    } else {
      f = f_measure(precision_of(c.tp[j], c.fp[j]), recall_of(c.tp[j], c.positives - c.tp[j]));
    }
    if (f > best.best_f) best = {thr[j], f};
  }
  return best;
}

double ois(std::span<const BlurMap> maps, std::span<const GroundTruth> gts,
           std::size_t n_thresholds) {
  validate(maps, gts, n_thresholds);
  double sum = 0.0;
  for (std::size_t i = 0; i < maps.size(); ++i) sum += best_image_f(maps[i], gts[i], n_thresholds).best_f;
  return sum / static_cast<double>(maps.size());
}

double average_precision(const PRCurve& curve) {
  if (curve.size() == 0) throw DataError("average_precision: empty curve");
  constexpr int kLevels = 101;
  double total = 0.0;
  for (int k = 0; k < kLevels; ++k) {
    const double r = static_cast<double>(k) / 100.0;
    double best = 0.0;
    for (std::size_t j = 0; j < curve.size(); ++j) {
      if (curve.recall[j] >= r) best = std::max(best, curve.precision[j]);
    }
    total += best;
  }
  return total / kLevels;
}

EvalReport evaluate(std::span<const BlurMap> maps, std::span<const GroundTruth> gts,
                    std::size_t n_thresholds) {
  EvalReport r;
  r.curve = pr_curve(maps, gts, n_thresholds);
  const OdsResult o = ods(r.curve);
  r.ods_f = o.f;
  r.ods_threshold = o.threshold;
  r.ap = average_precision(r.curve);
  r.per_image.reserve(maps.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    r.per_image.push_back(best_image_f(maps[i], gts[i], n_thresholds));
    sum += r.per_image.back().best_f;
  }
  r.ois_f = sum / static_cast<double>(maps.size());
  return r;
}

void write_pr_csv(const PRCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(10);
  out << "threshold,tp,fp,fn,precision,recall,f\n";
  for (std::size_t j = 0; j < curve.size(); ++j) {
    out << curve.thresholds[j] << ',' << curve.tp[j] << ',' << curve.fp[j] << ',' << curve.fn[j]
        << ',' << curve.precision[j] << ',' << curve.recall[j] << ',' << curve.f[j] << '\n';
  }
}

}  // namespace blurmap
