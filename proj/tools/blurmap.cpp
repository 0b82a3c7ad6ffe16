#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "blurmap/applications.hpp"
#include "blurmap/baselines.hpp"
#include "blurmap/data.hpp"
#include "blurmap/error.hpp"
#include "blurmap/evaluation.hpp"
#include "blurmap/imageio.hpp"
#include "blurmap/model.hpp"
#include "blurmap/training.hpp"
#include "json.hpp"

using namespace blurmap;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

enum Exit { ok = 0, usage = 1, data = 2, numeric = 3 };

// Everything that determines a run. Written verbatim to <out>/run_config.json.
struct RunConfig {
  std::string command;
  std::string data, input, maps, gt, images, weights, init_weights, out;
  std::string config = "V";
  double width = 1.0;
  std::string init = "scratch";
  std::string split = "odd";
  std::string subset = "train";
  std::size_t target = 384;
  std::vector<double> mean_rgb{kDefaultMeanRgb.begin(), kDefaultMeanRgb.end()};
  Hyperparams hp;
  std::uint64_t seed = 0;
  bool deterministic = false;
  unsigned threads = 0;
  std::size_t thresholds = kDefaultThresholds;
  std::size_t log_every = 20;
  // synth
  std::size_t count = 8, size = 64;
  bool flat_patches = true;
  double sigma_min = 2.0, sigma_max = 6.0;
  // baseline / apps
  std::string which;
  std::size_t patch = 17, stride = 1;
  double tau = kGradientTau;
  double sigma = kDefaultMagnifySigma, magnify_thresh = kMagnifyThreshold;
  // gradcheck
  std::size_t samples = 200;
  double eps = 1e-5, tol = 1e-4;
};

json to_json(const RunConfig& c) {
  json j;
  j["command"] = c.command;
  auto put = [&](const char* k, const std::string& v) {
    if (!v.empty()) j[k] = v;
  };
  put("data", c.data);
  put("input", c.input);
  put("maps", c.maps);
  put("gt", c.gt);
  put("images", c.images);
  put("weights", c.weights);
  put("init_weights", c.init_weights);
  put("out", c.out);
  put("which", c.which);
  if (c.command == "train" || c.command == "predict" || c.command == "gradcheck") {
    j["config"] = c.config;
    j["width_multiplier"] = c.width;
    j["init"] = c.init;
  }
  if (c.command == "train" || c.command == "predict") {
    j["target"] = c.target;
    j["mean_rgb"] = c.mean_rgb;
  }
  if (c.command == "train") {
    j["split"] = c.split;
    j["subset"] = c.subset;
    j["hyperparams"] = {{"base_lr", c.hp.base_lr},         {"lr_power", c.hp.lr_power},
                        {"momentum", c.hp.momentum},       {"weight_decay", c.hp.weight_decay},
                        {"batch_size", c.hp.batch_size},   {"max_iter", c.hp.max_iter},
                        {"bias_lr_multiplier", c.hp.bias_lr_multiplier},
                        {"class_balance", c.hp.class_balance}};
  }
  if (c.command == "synth") {
    j["count"] = c.count;
    j["size"] = c.size;
    j["flat_patches"] = c.flat_patches;
    j["sigma_min"] = c.sigma_min;
    j["sigma_max"] = c.sigma_max;
  }
  if (c.command == "eval") j["n_thresholds"] = c.thresholds;
  if (c.command == "baseline") {
    j["patch"] = c.patch;
    j["stride"] = c.stride;
    if (c.which == "gradstat") j["tau"] = c.tau;
  }
  if (c.command == "apps" && c.which == "magnify") {
    j["sigma"] = c.sigma;
    j["threshold"] = c.magnify_thresh;
  }
  if (c.command == "gradcheck") {
    j["size"] = c.size;
    j["samples"] = c.samples;
    j["eps"] = c.eps;
    j["tolerance"] = c.tol;
  }
  j["seed"] = c.seed;
  j["deterministic"] = c.deterministic;
  j["threads"] = num_threads();
  return j;
}

void write_run_config(const RunConfig& c) {
  std::ofstream f(fs::path(c.out) / "run_config.json");
  if (!f) throw DataError("cannot write run_config.json in " + c.out);
  f << to_json(c).dump(2) << '\n';
}

fs::path prepare_out(const RunConfig& c) {
  if (c.out.empty()) throw ConfigError("--out is required");
  fs::create_directories(c.out);
  return c.out;
}

// Image files of a directory, or the image/ (gt/) subdirectory of a dataset root, by stem.
std::map<std::string, fs::path> files_by_stem(const fs::path& p, const char* sub) {
  std::map<std::string, fs::path> out;
  if (fs::is_regular_file(p)) {
    out.emplace(p.stem().string(), p);
    return out;
  }
  fs::path dir = p;
  if (fs::is_directory(p / sub)) dir = p / sub;
  if (!fs::is_directory(dir)) throw DataError(p.string() + " is not a file or directory");
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image_file(e.path())) out.emplace(e.path().stem().string(), e.path());
  }
  if (out.empty()) throw DataError("no image files in " + dir.string());
  return out;
}

std::array<double, 3> mean_of(const RunConfig& c) {
  if (c.mean_rgb.size() != 3) throw ConfigError("--mean needs three values");
  return {c.mean_rgb[0], c.mean_rgb[1], c.mean_rgb[2]};
}

InitScheme init_of(const RunConfig& c) {
  if (c.init == "scratch") return InitScheme::scratch(c.seed);
  if (c.init == "zeros") return InitScheme::zeros();
  if (c.init == "pretrained") {
    if (c.init_weights.empty()) throw ConfigError("--init pretrained needs --init-weights");
    return InitScheme::pretrained(c.init_weights, c.seed);
  }
  throw ConfigError("unknown init '" + c.init + "' (expected scratch, zeros or pretrained)");
}

Network network_of(const RunConfig& c) {
  const ConfigId id = parse_config(c.config);
  if (!c.weights.empty()) return load_weights(c.weights, id, c.width);
  return build(id, c.width, init_of(c));
}

BlurMap predict_one(const Network& net, const Tensor& image, std::size_t target, const std::array<double, 3>& mean) {
  Sample s;
  s.image = image;
  s.gt = GroundTruth(image.shape().h, image.shape().w);
  const Sample p = preprocess(s, target, mean);
  const BlurMap m = forward(net, p.image);
  if (m.rows == image.shape().h && m.cols == image.shape().w) return m;
  return resize_bilinear(m, image.shape().h, image.shape().w);
}

int cmd_synth(const RunConfig& c) {
  const auto samples = make_synthetic(c.count, c.size, c.seed, SyntheticOptions{c.flat_patches, c.sigma_min, c.sigma_max});
  prepare_out(c);
  write_corpus(c.out, samples);
  write_run_config(c);
  std::cout << "wrote " << samples.size() << " samples to " << c.out << '\n';
  return ok;
}

int cmd_train(const RunConfig& c) {
  c.hp.validate();
  const ConfigId id = parse_config(c.config);
  const InitScheme init = init_of(c);
  const auto mean = mean_of(c);
  const Dataset ds = ingest(c.data, parse_split(c.split));
  std::vector<SampleRef> refs;
  if (c.subset == "train" || c.subset == "all") refs.insert(refs.end(), ds.train.begin(), ds.train.end());
  if (c.subset == "test" || c.subset == "all") refs.insert(refs.end(), ds.test.begin(), ds.test.end());
  if (c.subset != "train" && c.subset != "test" && c.subset != "all") {
    throw ConfigError("--subset must be train, test or all");
  }
  if (refs.empty()) throw DataError("training subset is empty");
  std::vector<Sample> samples;
  for (const auto& r : refs) samples.push_back(preprocess(load_sample(r), c.target, mean));
  std::cerr << "training " << to_string(id) << " x" << c.width << " on " << samples.size() << " images ("
            << ds.stats.blurred_fraction() << " blurred pixel fraction)\n";

  const fs::path out = prepare_out(c);
  write_run_config(c);
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult r = train(samples, id, c.width, c.hp, init, c.seed, [&](const TrainLogRow& row) {
    if (c.log_every > 0 && (row.iter % c.log_every == 0 || row.iter + 1 == c.hp.max_iter)) {
      std::cerr << "iter " << row.iter << " lr " << row.lr << " loss/px " << row.loss_per_pixel << '\n';
    }
  });
  r.log.write_csv(out / "train_log.csv");
  save_weights(r.net, out / "weights.txt");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "weights: " << (out / "weights.txt").string() << " (" << secs << " s)\n";
  return ok;
}

int cmd_predict(const RunConfig& c) {
  const Network net = network_of(c);
  const auto mean = mean_of(c);
  const auto inputs = files_by_stem(c.input, "image");
  const fs::path out = prepare_out(c);
  write_run_config(c);
  for (const auto& [stem, path] : inputs) write_map(out / (stem + ".png"), predict_one(net, read_rgb(path), c.target, mean));
  std::cout << "wrote " << inputs.size() << " maps to " << c.out << '\n';
  return ok;
}

int cmd_eval(const RunConfig& c) {
  const auto maps = files_by_stem(c.maps, "maps");
  const auto gts = files_by_stem(c.gt, "gt");
  std::vector<std::string> unmatched;
  for (const auto& [s, p] : maps)
    if (!gts.contains(s)) unmatched.push_back("map " + s);
  for (const auto& [s, p] : gts)
    if (!maps.contains(s)) unmatched.push_back("gt " + s);
  if (!unmatched.empty()) {
    std::string msg = "unmatched stems:";
    for (const auto& u : unmatched) msg += " " + u;
    throw DataError(msg);
  }
  std::vector<std::string> ids;
  std::vector<BlurMap> m;
  std::vector<GroundTruth> g;
  for (const auto& [s, p] : maps) {
    ids.push_back(s);
    m.push_back(read_map(p));
    g.push_back(read_mask(gts.at(s)));
    if (!m.back().same_shape(g.back())) throw DataError("map and gt sizes differ for " + s);
  }
  const EvalReport r = evaluate(m, g, c.thresholds);
  const fs::path out = prepare_out(c);
  write_run_config(c);
  write_pr_csv(r.curve, out / "pr_curve.csv");
  json rep;
  rep["n_images"] = ids.size();
  rep["n_thresholds"] = c.thresholds;
  rep["ods"] = r.ods_f;
  rep["ods_threshold"] = r.ods_threshold;
  rep["ois"] = r.ois_f;
  rep["ap"] = r.ap;
  json per = json::array();
  std::ofstream table(out / "per_image.csv");
  table << "id,best_f,best_threshold\n";
  for (std::size_t k = 0; k < ids.size(); ++k) {
    per.push_back({{"id", ids[k]}, {"best_f", r.per_image[k].best_f}, {"best_threshold", r.per_image[k].best_threshold}});
    table << ids[k] << ',' << r.per_image[k].best_f << ',' << r.per_image[k].best_threshold << '\n';
  }
  rep["per_image"] = per;
  std::ofstream(out / "report.json") << rep.dump(2) << '\n';
  std::printf("ODS %.4f  OIS %.4f  AP %.4f  (%zu images)\n", r.ods_f, r.ois_f, r.ap, ids.size());
  return ok;
}

int cmd_baseline(const RunConfig& c) {
  if (c.which != "gradstat" && c.which != "specslope") throw ConfigError("--which must be gradstat or specslope");
  const PatchOptions opts{c.patch, c.stride};
  const auto inputs = files_by_stem(c.input, "image");
  const fs::path out = prepare_out(c);
  write_run_config(c);
  for (const auto& [stem, path] : inputs) {
    const GrayImage g = to_luma(read_rgb(path));
    write_map(out / (stem + ".png"), c.which == "gradstat" ? gradient_stat_map(g, opts, c.tau) : spectral_slope_map(g, opts));
  }
  std::cout << "wrote " << inputs.size() << " " << c.which << " maps to " << c.out << '\n';
  return ok;
}

int cmd_apps(const RunConfig& c) {
  const auto maps = files_by_stem(c.maps, "maps");
  if (c.which == "degree") {
    std::vector<std::pair<double, std::string>> rows;
    for (const auto& [s, p] : maps) rows.emplace_back(blur_degree(read_map(p)), s);
    std::sort(rows.begin(), rows.end());
    const fs::path out = prepare_out(c);
    write_run_config(c);
    std::ofstream f(out / "degree.csv");
    f << "id,degree\n";
    for (const auto& [d, s] : rows) f << s << ',' << d << '\n';
    std::cout << "ranked " << rows.size() << " images in " << (out / "degree.csv").string() << '\n';
    return ok;
  }
  if (c.which == "trimap") {
    const fs::path out = prepare_out(c);
    write_run_config(c);
    for (const auto& [s, p] : maps) write_gray8(out / (s + ".png"), trimap_codes(trimap(read_map(p))));
    std::cout << "wrote " << maps.size() << " trimaps to " << c.out << '\n';
    return ok;
  }
  if (c.which == "magnify") {
    if (c.images.empty()) throw ConfigError("magnify needs --images");
    if (!(c.sigma > 0.0)) throw ConfigError("--sigma must be positive");
    const auto images = files_by_stem(c.images, "image");
    for (const auto& [s, p] : images)
      if (!maps.contains(s)) throw DataError("no blur map for image " + s);
    const fs::path out = prepare_out(c);
    write_run_config(c);
    for (const auto& [s, p] : images) {
      const BlurMap m = read_map(maps.at(s));
      const fs::path dst = out / p.filename();
      if (std::none_of(m.data.begin(), m.data.end(), [&](double v) { return v > c.magnify_thresh; })) {
        fs::copy_file(p, dst, fs::copy_options::overwrite_existing);
        continue;
      }
      write_rgb(dst, magnify_blur(read_rgb(p), m, c.sigma, c.magnify_thresh));
    }
    std::cout << "wrote " << images.size() << " images to " << c.out << '\n';
    return ok;
  }
  throw ConfigError("--which must be degree, trimap or magnify");
}

int cmd_gradcheck(const RunConfig& c) {
  const Network net = build(parse_config(c.config), c.width, init_of(c));
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  Tensor x(Shape{1, 3, c.size, c.size});
  for (double& v : x.data()) v = u(rng);
  GroundTruth gt(c.size, c.size);
  for (auto& v : gt.data) v = rng() % 2;
  GradCheckOptions opts;
  opts.eps = c.eps;
  opts.n_samples = c.samples;
  opts.seed = c.seed;
  const auto t0 = std::chrono::steady_clock::now();
  const GradCheckResult r = grad_check(net, x, gt, opts);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json j{{"config", to_string(parse_config(c.config))},
         {"width_multiplier", c.width},
         {"size", c.size},
         {"max_relative_error", r.max_relative_error},
         {"checked", r.checked},
         {"exempt", r.exempt},
         {"redrawn", r.kinked},
         {"seconds", secs},
         {"pass", r.max_relative_error <= c.tol}};
  std::cout << j.dump(2) << '\n';
  if (!c.out.empty()) {
    prepare_out(c);
    write_run_config(c);
    std::ofstream(fs::path(c.out) / "gradcheck.json") << j.dump(2) << '\n';
  }
  return r.max_relative_error <= c.tol ? ok : numeric;
}

void add_common(CLI::App* sub, RunConfig& c) {
  sub->add_option("--seed", c.seed, "Random seed");
  sub->add_flag("--deterministic", c.deterministic, "Sequential reductions everywhere");
  sub->add_option("--threads", c.threads, "Worker threads (default: all cores)");
}

void add_model(CLI::App* sub, RunConfig& c) {
  sub->add_option("--config", c.config, "Network depth I..V")->capture_default_str();
  sub->add_option("--width", c.width, "Channel width multiplier")->capture_default_str();
  sub->add_option("--init", c.init, "scratch | zeros | pretrained")->capture_default_str();
  sub->add_option("--init-weights", c.init_weights, "Container used by --init pretrained");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Blur mapping with fully convolutional networks"};
  app.require_subcommand(1);
  RunConfig c;

  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus");
  synth->add_option("--out", c.out, "Output directory")->required();
  synth->add_option("--count", c.count, "Number of images")->capture_default_str();
  synth->add_option("--size", c.size, "Image side, multiple of 16")->capture_default_str();
  synth->add_flag("!--no-flat", c.flat_patches, "Do not insert flat bands");
  synth->add_option("--sigma-min", c.sigma_min)->capture_default_str();
  synth->add_option("--sigma-max", c.sigma_max)->capture_default_str();
  add_common(synth, c);

  auto* tr = app.add_subcommand("train", "Train a network on a dataset");
  tr->add_option("--data", c.data, "Dataset root with image/ and gt/")->required();
  tr->add_option("--out", c.out, "Output directory")->required();
  add_model(tr, c);
  tr->add_option("--split", c.split, "odd | even | list:<id,...>")->capture_default_str();
  tr->add_option("--subset", c.subset, "train | test | all")->capture_default_str();
  tr->add_option("--target", c.target, "Resize side, multiple of 16")->capture_default_str();
  tr->add_option("--mean", c.mean_rgb, "Mean RGB subtracted after resizing")->expected(3);
  tr->add_option("--lr", c.hp.base_lr, "Base learning rate")->capture_default_str();
  tr->add_option("--lr-power", c.hp.lr_power)->capture_default_str();
  tr->add_option("--momentum", c.hp.momentum)->capture_default_str();
  tr->add_option("--weight-decay", c.hp.weight_decay)->capture_default_str();
  tr->add_option("--batch", c.hp.batch_size)->capture_default_str();
  tr->add_option("--iters", c.hp.max_iter)->capture_default_str();
  tr->add_option("--bias-lr-mult", c.hp.bias_lr_multiplier)->capture_default_str();
  tr->add_flag("--balance", c.hp.class_balance, "Class-balanced loss");
  tr->add_option("--log-every", c.log_every)->capture_default_str();
  add_common(tr, c);

  auto* pr = app.add_subcommand("predict", "Write blur maps for images");
  pr->add_option("--input", c.input, "Image file, directory or dataset root")->required();
  pr->add_option("--out", c.out, "Output directory")->required();
  pr->add_option("--weights", c.weights, "Weight container manifest");
  add_model(pr, c);
  pr->add_option("--target", c.target, "Network input side, multiple of 16")->capture_default_str();
  pr->add_option("--mean", c.mean_rgb, "Mean RGB subtracted after resizing")->expected(3);
  add_common(pr, c);

  auto* ev = app.add_subcommand("eval", "Score blur maps against ground truth");
  ev->add_option("--maps", c.maps, "Directory of map files")->required();
  ev->add_option("--gt", c.gt, "Directory of masks or dataset root")->required();
  ev->add_option("--out", c.out, "Output directory")->required();
  ev->add_option("--thresholds", c.thresholds)->capture_default_str();
  add_common(ev, c);

  auto* bl = app.add_subcommand("baseline", "Hand-crafted blur maps");
  bl->add_option("--which", c.which, "gradstat | specslope")->required();
  bl->add_option("--input", c.input, "Image file, directory or dataset root")->required();
  bl->add_option("--out", c.out, "Output directory")->required();
  bl->add_option("--patch", c.patch, "Odd patch side")->capture_default_str();
  bl->add_option("--stride", c.stride)->capture_default_str();
  bl->add_option("--tau", c.tau, "gradstat temperature")->capture_default_str();
  add_common(bl, c);

  auto* ap = app.add_subcommand("apps", "Blur-map applications");
  ap->add_option("--which", c.which, "degree | trimap | magnify")->required();
  ap->add_option("--maps", c.maps, "Directory of map files")->required();
  ap->add_option("--images", c.images, "Images to magnify");
  ap->add_option("--out", c.out, "Output directory")->required();
  ap->add_option("--sigma", c.sigma, "magnify Gaussian sigma")->capture_default_str();
  ap->add_option("--thresh", c.magnify_thresh, "magnify confidence threshold")->capture_default_str();
  add_common(ap, c);

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  add_model(gc, c);
  gc->add_option("--size", c.size, "Input side")->capture_default_str();
  gc->add_option("--samples", c.samples)->capture_default_str();
  gc->add_option("--eps", c.eps)->capture_default_str();
  gc->add_option("--tol", c.tol)->capture_default_str();
  gc->add_option("--out", c.out, "Also write gradcheck.json here");
  add_common(gc, c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : usage;
  }

  const CLI::App* sub = app.get_subcommands().front();
  c.command = sub->get_name();
  if (c.deterministic) set_deterministic(true);
  if (c.threads > 0) set_num_threads(c.threads);

  try {
    if (c.command == "synth") return cmd_synth(c);
    if (c.command == "train") return cmd_train(c);
    if (c.command == "predict") return cmd_predict(c);
    if (c.command == "eval") return cmd_eval(c);
    if (c.command == "baseline") return cmd_baseline(c);
    if (c.command == "apps") return cmd_apps(c);
    if (c.command == "gradcheck") return cmd_gradcheck(c);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return usage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return numeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return data;
  }
  return usage;
}
