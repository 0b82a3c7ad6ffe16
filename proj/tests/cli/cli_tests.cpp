#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "blurmap/data.hpp"
#include "blurmap/evaluation.hpp"
#include "blurmap/imageio.hpp"
#include "blurmap/model.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace blurmap;
namespace fs = std::filesystem;

namespace {

const fs::path root = fs::temp_directory_path() / "blurmap_cli_tests";

int cli(const std::string& args) {
  const std::string cmd = std::string(BLURMAP_CLI) + " " + args + " >" + (root / "last.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string last_log() {
  std::ifstream f(root / "last.log");
  return {std::istreambuf_iterator<char>(f), {}};
}

std::string bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

std::string dir(const std::string& name) {
  const fs::path d = root / name;
  fs::remove_all(d);
  return d.string();
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(std::ifstream(p)); }

// A 64 px synthetic corpus shared by several cases.
std::string corpus() {
  static const std::string path = [] {
    fs::create_directories(root);
    const std::string d = dir("corpus");
    REQUIRE(cli("synth --out " + d + " --count 4 --size 64 --seed 3") == 0);
    return d;
  }();
  return path;
}

}  // namespace

TEST_CASE("synth writes the corpus and its run config") {
  const std::string c = corpus();
  CHECK(fs::exists(fs::path(c) / "layout.csv"));
  CHECK(fs::exists(fs::path(c) / "run_config.json"));
  CHECK(read_json(fs::path(c) / "run_config.json")["count"] == 4);
  Dataset ds = ingest(c, SplitSpec::odd());
  CHECK(ds.train.size() + ds.test.size() == 4);
}

TEST_CASE("train Config I for 300 iterations and reload the weights") {
  const std::string out = dir("train_i");
  REQUIRE(cli("train --data " + corpus() + " --out " + out +
              " --config I --width 0.25 --target 64 --iters 300 --lr 3.0517578125e-05 --subset all --seed 7") == 0);
  CHECK(fs::exists(fs::path(out) / "train_log.csv"));
  CHECK(read_json(fs::path(out) / "run_config.json")["hyperparams"]["max_iter"] == 300);
  Network net = load_weights(fs::path(out) / "weights.txt", ConfigId::I, 0.25);
  CHECK(net.weight_layer_count() == 3);

  const std::string pred = dir("pred_i");
  REQUIRE(cli("predict --input " + corpus() + " --weights " + out + "/weights.txt --config I --width 0.25 --target 64 --out " + pred) == 0);
  std::size_t maps = 0;
  for (const auto& e : fs::directory_iterator(pred)) maps += e.path().extension() == ".png";
  CHECK(maps == 4);
}

TEST_CASE("deterministic training gives identical weight files") {
  const std::string a = dir("det_a"), b = dir("det_b");
  const std::string args = " --config II --width 0.125 --target 32 --iters 20 --lr 1e-5 --seed 5 --deterministic --data " + corpus();
  REQUIRE(cli("train --out " + a + args) == 0);
  REQUIRE(cli("train --out " + b + args) == 0);
  CHECK(bytes(fs::path(a) / "weights.bin") == bytes(fs::path(b) / "weights.bin"));
  CHECK(bytes(fs::path(a) / "weights.txt") == bytes(fs::path(b) / "weights.txt"));
}

TEST_CASE("missing dataset exits with a data error and writes no weights") {
  const std::string out = dir("missing");
  CHECK(cli("train --data " + (root / "no_such_dataset").string() + " --out " + out) == 2);
  CHECK_FALSE(fs::exists(fs::path(out) / "weights.txt"));
  CHECK_FALSE(fs::exists(fs::path(out) / "weights.bin"));
}

TEST_CASE("zero-weight network predicts 128 everywhere at the input size") {
  const std::string out = dir("zeros");
  REQUIRE(cli("predict --input " + corpus() + " --init zeros --config III --width 0.125 --target 32 --out " + out) == 0);
  CHECK(fs::exists(fs::path(out) / "run_config.json"));
  for (const auto& e : fs::directory_iterator(fs::path(corpus()) / "image")) {
    const auto g = read_gray8(fs::path(out) / e.path().filename());
    CHECK(g.rows == 64);
    CHECK(g.cols == 64);
    for (auto v : g.data) CHECK(v == 128);
  }
}

TEST_CASE("predict rejects incompatible weights with a named error") {
  const std::string out = dir("train_tiny");
  REQUIRE(cli("train --data " + corpus() + " --out " + out + " --config I --width 0.25 --target 32 --iters 1") == 0);
  CHECK(cli("predict --input " + corpus() + " --weights " + out + "/weights.txt --config I --width 0.5 --out " + dir("bad_pred")) == 2);
  CHECK(last_log().find("conv1_1") != std::string::npos);
}

TEST_CASE("eval on perfect and inverted maps") {
  const fs::path gt = fs::path(corpus()) / "gt";
  const std::string perfect = dir("maps_perfect"), inverted = dir("maps_inverted");
  fs::create_directories(perfect);
  fs::create_directories(inverted);
  std::vector<GroundTruth> gts;
  for (const auto& e : fs::directory_iterator(gt)) {
    const GroundTruth g = read_mask(e.path());
    BlurMap p(g.rows, g.cols), q(g.rows, g.cols);
    for (std::size_t i = 0; i < g.size(); ++i) {
      p.data[i] = g.data[i];
      q.data[i] = 1.0 - g.data[i];
    }
    write_map(fs::path(perfect) / e.path().filename(), p);
    write_map(fs::path(inverted) / e.path().filename(), q);
  }

  const std::string r1 = dir("eval_perfect");
  REQUIRE(cli("eval --maps " + perfect + " --gt " + corpus() + " --out " + r1) == 0);
  auto rep = read_json(fs::path(r1) / "report.json");
  CHECK(rep["ods"] == 1.0);
  CHECK(rep["ois"] == 1.0);
  CHECK(rep["ap"] == 1.0);
  CHECK(rep["per_image"].size() == 4);
  CHECK(fs::exists(fs::path(r1) / "per_image.csv"));

  const std::string r2 = dir("eval_inverted");
  REQUIRE(cli("eval --maps " + inverted + " --gt " + gt.string() + " --out " + r2 + " --thresholds 11") == 0);
  std::ifstream csv(fs::path(r2) / "pr_curve.csv");
  std::string line;
  std::getline(csv, line);
  int row = 0;
  while (std::getline(csv, line)) {
    const double f = std::stod(line.substr(line.rfind(',') + 1));
    if (row > 0) CHECK(f == 0.0);
    ++row;
  }
  CHECK(row == 11);

  // report equals the library on the same files
  std::vector<BlurMap> maps;
  for (const auto& e : fs::directory_iterator(gt)) {
    gts.push_back(read_mask(e.path()));
    maps.push_back(read_map(fs::path(inverted) / e.path().filename()));
  }
  // directory order is arbitrary; aggregate scores do not depend on it
  const EvalReport lib = evaluate(maps, gts, 11);
  auto rep2 = read_json(fs::path(r2) / "report.json");
  CHECK(rep2["ods"] == lib.ods_f);
  CHECK(rep2["ois"] == doctest::Approx(lib.ois_f).epsilon(1e-15));
  CHECK(rep2["ap"] == lib.ap);
}

TEST_CASE("eval lists unmatched stems") {
  const std::string maps = dir("maps_partial");
  fs::create_directories(maps);
  write_map(fs::path(maps) / "synth_0000.png", BlurMap(64, 64, 0.5));
  write_map(fs::path(maps) / "stray.png", BlurMap(64, 64, 0.5));
  CHECK(cli("eval --maps " + maps + " --gt " + corpus() + " --out " + dir("eval_bad")) == 2);
  CHECK(last_log().find("stray") != std::string::npos);
  CHECK(last_log().find("synth_0001") != std::string::npos);
}

TEST_CASE("baselines") {
  const std::string flat = dir("flat");
  fs::create_directories(fs::path(flat) / "image");
  Tensor grey(Shape{1, 3, 32, 32});
  for (double& v : grey.data()) v = 0.5;
  write_rgb(fs::path(flat) / "image" / "grey.png", grey);
  const std::string out = dir("grad_flat");
  REQUIRE(cli("baseline --which gradstat --input " + flat + " --out " + out) == 0);
  for (auto v : read_gray8(fs::path(out) / "grey.png").data) CHECK(v == 255);

  for (const char* which : {"gradstat", "specslope"}) {
    const std::string maps = dir(std::string("base_") + which), ev = dir(std::string("eval_") + which);
    REQUIRE(cli(std::string("baseline --which ") + which + " --input " + corpus() + " --out " + maps) == 0);
    REQUIRE(cli("eval --maps " + maps + " --gt " + corpus() + " --out " + ev) == 0);
    auto rep = read_json(fs::path(ev) / "report.json");
    CHECK(std::isfinite(rep["ods"].get<double>()));
    CHECK(std::isfinite(rep["ap"].get<double>()));
  }
  CHECK(cli("baseline --which sobel --input " + corpus() + " --out " + dir("bad_base")) == 1);
}

TEST_CASE("applications") {
  const std::string maps = dir("app_maps");
  fs::create_directories(maps);
  const fs::path images = fs::path(corpus()) / "image";
  double v = 0.9;
  for (const auto& e : fs::directory_iterator(images)) {
    write_map(fs::path(maps) / e.path().filename(), BlurMap(64, 64, v));
    v -= 0.3;
    if (v < 0) v = 0.0;
  }

  const std::string deg = dir("degree");
  REQUIRE(cli("apps --which degree --maps " + maps + " --out " + deg) == 0);
  std::ifstream f(fs::path(deg) / "degree.csv");
  std::string line;
  std::getline(f, line);
  CHECK(line == "id,degree");
  double prev = -1;
  bool saw_zero = false;
  while (std::getline(f, line)) {
    const double d = std::stod(line.substr(line.find(',') + 1));
    CHECK(d >= prev);
    saw_zero = saw_zero || d == 0.0;
    prev = d;
  }
  CHECK(saw_zero);

  const std::string tri = dir("trimap");
  REQUIRE(cli("apps --which trimap --maps " + maps + " --out " + tri) == 0);
  CHECK(std::distance(fs::directory_iterator(tri), fs::directory_iterator{}) == 5);   // 4 trimaps + run config

  const std::string zero_maps = dir("zero_maps"), mag = dir("magnify");
  fs::create_directories(zero_maps);
  for (const auto& e : fs::directory_iterator(images)) write_map(fs::path(zero_maps) / e.path().filename(), BlurMap(64, 64, 0.0));
  REQUIRE(cli("apps --which magnify --maps " + zero_maps + " --images " + corpus() + " --out " + mag) == 0);
  for (const auto& e : fs::directory_iterator(images)) CHECK(bytes(e.path()) == bytes(fs::path(mag) / e.path().filename()));

  CHECK(cli("apps --which magnify --maps " + maps + " --out " + dir("mag_noimg")) == 1);
}

TEST_CASE("predict then eval on an overfit toy run") {
  const std::string data = dir("toy"), run = dir("toy_run"), pred = dir("toy_pred"), ev = dir("toy_eval");
  REQUIRE(cli("synth --out " + data + " --count 8 --size 64 --seed 7") == 0);
  REQUIRE(cli("train --data " + data + " --out " + run +
              " --config V --width 0.125 --target 64 --iters 1000 --lr 7.62939453125e-06 --subset all --seed 7") == 0);
  REQUIRE(cli("predict --input " + data + " --weights " + run + "/weights.txt --config V --width 0.125 --target 64 --out " + pred) == 0);
  REQUIRE(cli("eval --maps " + pred + " --gt " + data + " --out " + ev) == 0);
  const double ods = read_json(fs::path(ev) / "report.json")["ods"];
  MESSAGE("toy ODS " << ods);
  CHECK(ods >= 0.95);
}

TEST_CASE("exit codes") {
  CHECK(cli("") == 1);
  CHECK(cli("frobnicate") == 1);
  CHECK(cli("gradcheck --config VI") == 1);
  CHECK(cli("gradcheck --config I --width 0.125 --size 8") == 0);
  CHECK(cli("gradcheck --config I --width 0.125 --size 8 --tol 0") == 3);
  CHECK(cli("--help") == 0);
}
