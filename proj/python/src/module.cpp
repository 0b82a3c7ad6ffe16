#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <cstring>

#include "blurmap/applications.hpp"
#include "blurmap/baselines.hpp"
#include "blurmap/data.hpp"
#include "blurmap/error.hpp"
#include "blurmap/evaluation.hpp"
#include "blurmap/model.hpp"
#include "blurmap/training.hpp"

namespace py = pybind11;
using namespace blurmap;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Mask = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

// (3, h, w) or (h, w, 3) array -> (1, 3, h, w) tensor.
Tensor image_tensor(const Array& a) {
  if (a.ndim() != 3) throw ShapeError("image must be a 3-d array (3, h, w) or (h, w, 3)");
  const bool chw = a.shape(0) == 3;
  if (!chw && a.shape(2) != 3) throw ShapeError("image must have 3 channels");
  const auto h = static_cast<std::size_t>(chw ? a.shape(1) : a.shape(0));
  const auto w = static_cast<std::size_t>(chw ? a.shape(2) : a.shape(1));
  Tensor t(Shape{1, 3, h, w});
  auto r = a.unchecked<3>();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        t.at(0, c, y, x) = chw ? r(c, y, x) : r(y, x, c);
  return t;
}

Array tensor_image(const Tensor& t) {
  const Shape& s = t.shape();
  Array out({s.c, s.h, s.w});
  std::memcpy(out.mutable_data(), t.data().data(), s.c * s.h * s.w * sizeof(double));
  return out;
}

Grid<double> grid_of(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d array");
  Grid<double> g(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), g.data.begin());
  return g;
}

GroundTruth mask_of(const Mask& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d mask");
  GroundTruth g(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto v = a.data()[i];
    if (v > 1) throw DataError("mask values must be 0 or 1");
    g.data[i] = v;
  }
  return g;
}

template <typename T>
py::array_t<T> array_of(const Grid<T>& g) {
  py::array_t<T> out({g.rows, g.cols});
  std::copy(g.data.begin(), g.data.end(), out.mutable_data());
  return out;
}

ConfigId config_of(const py::object& o) {
  if (py::isinstance<py::int_>(o)) return parse_config(std::to_string(o.cast<int>()));
  return parse_config(o.cast<std::string>());
}

InitScheme init_of(const std::string& init, std::uint64_t seed, const std::string& weights) {
  if (init == "scratch") return InitScheme::scratch(seed);
  if (init == "zeros") return InitScheme::zeros();
  if (init == "pretrained") return InitScheme::pretrained(weights, seed);
  throw ConfigError("unknown init '" + init + "'");
}

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["ods"] = r.ods_f;
  d["ods_threshold"] = r.ods_threshold;
  d["ois"] = r.ois_f;
  d["ap"] = r.ap;
  d["thresholds"] = r.curve.thresholds;
  d["precision"] = r.curve.precision;
  d["recall"] = r.curve.recall;
  d["f"] = r.curve.f;
  py::list per;
  for (const auto& s : r.per_image) per.append(py::make_tuple(s.best_threshold, s.best_f));
  d["per_image"] = per;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Blur mapping with fully convolutional networks";

  auto base = py::register_exception<Error>(m, "BlurmapError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  auto data_err = py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<WeightFormatError>(m, "WeightFormatError", data_err.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());

  py::class_<Network>(m, "Network")
      .def_property_readonly("config", [](const Network& n) { return to_string(n.config); })
      .def_readonly("width_multiplier", &Network::width_multiplier)
      .def_readonly("upsample_factor", &Network::upsample_factor)
      .def_property_readonly("weight_layer_count", &Network::weight_layer_count)
      .def_property_readonly("parameter_count", &Network::parameter_count)
      .def_property_readonly("layer_names", [](const Network& n) {
        std::vector<std::string> names;
        for (const auto& c : n.convs) names.push_back(c.name);
        return names;
      })
      .def("forward", [](const Network& n, const Array& image) {
        const Tensor x = image_tensor(image);
        py::gil_scoped_release release;
        BlurMap m = forward(n, x);
        py::gil_scoped_acquire acquire;
        return array_of(m);
      }, py::arg("image"), "Blur map (h, w) of a mean-subtracted image")
      .def("save", [](const Network& n, const std::filesystem::path& p) { save_weights(n, p); }, py::arg("manifest"));

  m.def("build", [](const py::object& config, double width, const std::string& init, std::uint64_t seed,
                    const std::string& weights) { return build(config_of(config), width, init_of(init, seed, weights)); },
        py::arg("config") = "V", py::arg("width") = 1.0, py::arg("init") = "scratch", py::arg("seed") = 0,
        py::arg("weights") = "");
  m.def("load_weights", [](const std::filesystem::path& p, const py::object& config, double width) {
    return load_weights(p, config_of(config), width);
  }, py::arg("manifest"), py::arg("config") = "V", py::arg("width") = 1.0);

  m.def("poly_lr", [](std::size_t iter, double base_lr, std::size_t max_iter, double power) {
    Hyperparams hp;
    hp.base_lr = base_lr;
    hp.max_iter = max_iter;
    hp.lr_power = power;
    return poly_lr(iter, hp);
  }, py::arg("iter"), py::arg("base_lr") = 1.0 / 1024, py::arg("max_iter") = 10000, py::arg("power") = 0.9);

  m.def("cross_entropy", [](const Array& logits, const Mask& gt, bool balance) {
    const Grid<double> z = grid_of(logits);
    Tensor t(Shape{1, 1, z.rows, z.cols});
    std::copy(z.data.begin(), z.data.end(), t.data().begin());
    LossResult r = cross_entropy_loss(t, mask_of(gt), balance);
    Grid<double> d(z.rows, z.cols);
    std::copy(r.dlogits.data().begin(), r.dlogits.data().end(), d.data.begin());
    return py::make_tuple(r.loss, array_of(d));
  }, py::arg("logits"), py::arg("gt"), py::arg("balance") = false);

  m.def("train", [](const std::vector<Array>& images, const std::vector<Mask>& gts, const py::object& config,
                    double width, double lr, std::size_t iters, std::size_t batch, std::uint64_t seed,
                    bool balance) {
    if (images.size() != gts.size()) throw DataError("images and gts differ in length");
    std::vector<Sample> data;
    for (std::size_t i = 0; i < images.size(); ++i) {
      Sample s;
      s.image = image_tensor(images[i]);
      s.gt = mask_of(gts[i]);
      s.id = std::to_string(i);
      data.push_back(std::move(s));
    }
    Hyperparams hp;
    hp.base_lr = lr;
    hp.max_iter = iters;
    hp.batch_size = batch;
    hp.class_balance = balance;
    const ConfigId id = config_of(config);
    py::gil_scoped_release release;
    TrainResult r = train(data, id, width, hp, InitScheme::scratch(seed), seed);
    py::gil_scoped_acquire acquire;
    std::vector<double> losses;
    for (const auto& row : r.log.rows) losses.push_back(row.loss_per_pixel);
    return py::make_tuple(std::move(r.net), losses);
  }, py::arg("images"), py::arg("gts"), py::arg("config") = "V", py::arg("width") = 1.0,
     py::arg("lr") = 1.0 / 1024, py::arg("iters") = 10000, py::arg("batch") = 3, py::arg("seed") = 0,
     py::arg("balance") = false, "Returns (network, per-iteration loss per pixel)");

  m.def("grad_check", [](const Network& net, const Array& image, const Mask& gt, std::size_t samples,
                         std::uint64_t seed) {
    GradCheckOptions o;
    o.n_samples = samples;
    o.seed = seed;
    const GradCheckResult r = grad_check(net, image_tensor(image), mask_of(gt), o);
    py::dict d;
    d["max_relative_error"] = r.max_relative_error;
    d["checked"] = r.checked;
    d["exempt"] = r.exempt;
    d["redrawn"] = r.kinked;
    return d;
  }, py::arg("net"), py::arg("image"), py::arg("gt"), py::arg("samples") = 200, py::arg("seed") = 0);

  m.def("evaluate", [](const std::vector<Array>& maps, const std::vector<Mask>& gts, std::size_t n) {
    std::vector<BlurMap> mm;
    std::vector<GroundTruth> gg;
    for (const auto& a : maps) mm.push_back(grid_of(a));
    for (const auto& g : gts) gg.push_back(mask_of(g));
    return report_dict(evaluate(mm, gg, n));
  }, py::arg("maps"), py::arg("gts"), py::arg("n_thresholds") = kDefaultThresholds);

  m.def("gradient_stat_map", [](const Array& gray, std::size_t patch, std::size_t stride, double tau) {
    return array_of(gradient_stat_map(grid_of(gray), PatchOptions{patch, stride}, tau));
  }, py::arg("gray"), py::arg("patch") = 17, py::arg("stride") = 1, py::arg("tau") = kGradientTau);
  m.def("spectral_slope_map", [](const Array& gray, std::size_t patch, std::size_t stride) {
    return array_of(spectral_slope_map(grid_of(gray), PatchOptions{patch, stride}));
  }, py::arg("gray"), py::arg("patch") = 17, py::arg("stride") = 1);
  m.def("patch_spectral_slope", [](const Array& patch) { return patch_spectral_slope(grid_of(patch)); },
        py::arg("patch"));
  m.def("to_luma", [](const Array& image) { return array_of(to_luma(image_tensor(image))); }, py::arg("image"));

  m.def("blur_degree", [](const Array& map) { return blur_degree(grid_of(map)); }, py::arg("map"));
  m.def("trimap", [](const Array& map) { return array_of(trimap_codes(trimap(grid_of(map)))); }, py::arg("map"));
  m.def("magnify_blur", [](const Array& image, const Array& map, double sigma, double thresh) {
    return tensor_image(magnify_blur(image_tensor(image), grid_of(map), sigma, thresh));
  }, py::arg("image"), py::arg("map"), py::arg("sigma") = kDefaultMagnifySigma, py::arg("thresh") = kMagnifyThreshold);

  m.def("make_synthetic", [](std::size_t n, std::size_t size, std::uint64_t seed, bool flat_patches) {
    py::list out;
    for (const Sample& s : make_synthetic(n, size, seed, SyntheticOptions{flat_patches, 2.0, 6.0})) {
      py::dict d;
      d["id"] = s.id;
      d["image"] = tensor_image(s.image);
      d["gt"] = array_of(s.gt);
      if (s.flat_patch) {
        const Region& r = *s.flat_patch;
        d["flat_patch"] = py::make_tuple(r.top, r.left, r.height, r.width);
      } else {
        d["flat_patch"] = py::none();
      }
      out.append(d);
    }
    return out;
  }, py::arg("n"), py::arg("size") = 64, py::arg("seed") = 0, py::arg("flat_patches") = true,
     "Images are (3, size, size) in [0, 1]");
  m.def("preprocess", [](const Array& image, std::size_t target, std::array<double, 3> mean) {
    Sample s;
    s.image = image_tensor(image);
    s.gt = GroundTruth(s.image.shape().h, s.image.shape().w);
    return tensor_image(preprocess(s, target, mean).image);
  }, py::arg("image"), py::arg("target") = 384, py::arg("mean_rgb") = kDefaultMeanRgb);

  m.def("set_num_threads", &set_num_threads, py::arg("n"));
  m.def("set_deterministic", &set_deterministic, py::arg("on"));
}
