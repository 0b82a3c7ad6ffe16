#include "blurmap/model.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "blurmap/error.hpp"

namespace blurmap {

namespace {

constexpr std::array<std::size_t, 5> kStageChannels = {64, 128, 256, 512, 512};
constexpr std::array<std::size_t, 5> kStageConvs = {2, 2, 3, 3, 3};
constexpr std::string_view kManifestMagic = "blurmap-weights";
constexpr int kManifestVersion = 1;
constexpr std::string_view kScoreLayer = "score";

void fill_gaussian(ConvParams& p, std::mt19937_64& rng) {
  const Shape& s = p.weight.shape();
  const double fan_in = static_cast<double>(s.c * s.h * s.w);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (double& v : p.weight.data()) v = dist(rng);
  std::fill(p.bias.begin(), p.bias.end(), 0.0);
}

struct Record {
  std::string kind;
  Shape shape;
  std::size_t offset = 0;
  std::size_t count = 0;
};

Shape parse_dims(const std::string& text, const std::string& name) {
  std::array<std::size_t, 4> d{1, 1, 1, 1};
  std::vector<std::size_t> parts;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      parts.push_back(std::stoul(tok));
    } catch (const std::exception&) {
      throw WeightFormatError("weights: bad shape '" + text + "' for " + name);
    }
  }
  if (parts.empty() || parts.size() > 4) {
    throw WeightFormatError("weights: bad shape '" + text + "' for " + name);
  }
  if (parts.size() == 1) return Shape{parts[0], 1, 1, 1};
  for (std::size_t i = 0; i < parts.size(); ++i) d[i] = parts[i];
  return Shape{d[0], d[1], d[2], d[3]};
}

std::string dims(const Shape& s) {
  return std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w);
}

float from_le(float v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    u = (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
    std::memcpy(&v, &u, 4);
  }
  return v;
}

struct Container {
  std::map<std::string, Record> records;
  std::vector<float> blob;
};

Container read_container(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw WeightFormatError("weights: cannot open manifest " + manifest.string());
  Container c;
  std::string line;
  std::filesystem::path blob_path;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == kManifestMagic) {
      int version = 0;
      ls >> version;
      if (version != kManifestVersion) {
        throw WeightFormatError("weights: unsupported manifest version " + std::to_string(version));
      }
      header = true;
    } else if (key == "config" || key == "width") {
      continue;
    } else if (key == "blob") {
      std::string name;
      ls >> name;
      blob_path = manifest.parent_path() / name;
    } else if (key == "layer") {
      std::string name, kind, shape;
      Record r;
      ls >> name >> kind >> shape >> r.offset >> r.count;
      if (!ls) throw WeightFormatError("weights: malformed record: " + line);
      r.kind = kind;
      r.shape = parse_dims(shape, name);
      if (r.shape.numel() != r.count) {
        throw WeightFormatError("weights: element count disagrees with shape for " + name);
      }
      if (r.offset % sizeof(float) != 0) {
        throw WeightFormatError("weights: misaligned offset for " + name);
      }
      c.records.emplace(name, r);
    } else {
      throw WeightFormatError("weights: unknown manifest key '" + key + "'");
    }
  }
  if (!header) throw WeightFormatError("weights: " + manifest.string() + " is not a weight manifest");
  if (blob_path.empty()) throw WeightFormatError("weights: manifest names no blob");

  std::ifstream bin(blob_path, std::ios::binary | std::ios::ate);
  if (!bin) throw WeightFormatError("weights: cannot open blob " + blob_path.string());
  const auto bytes = static_cast<std::size_t>(bin.tellg());
  bin.seekg(0);
  if (bytes % sizeof(float) != 0) throw WeightFormatError("weights: truncated blob");
  c.blob.resize(bytes / sizeof(float));
  bin.read(reinterpret_cast<char*>(c.blob.data()), static_cast<std::streamsize>(bytes));
  for (float& v : c.blob) v = from_le(v);
  for (const auto& [name, r] : c.records) {
    if (r.offset / sizeof(float) + r.count > c.blob.size()) {
      throw WeightFormatError("weights: truncated blob (layer " + name + " extends past end)");
    }
  }
  return c;
}

std::span<const float> slice(const Container& c, const Record& r) {
  return std::span<const float>(c.blob).subspan(r.offset / sizeof(float), r.count);
}

}  // namespace

std::string to_string(ConfigId id) {
  static constexpr std::array<const char*, 5> names = {"I", "II", "III", "IV", "V"};
  return names[static_cast<std::size_t>(id) - 1];
}

ConfigId parse_config(std::string_view s) {
  static constexpr std::array<std::string_view, 5> roman = {"I", "II", "III", "IV", "V"};
  static constexpr std::array<std::string_view, 5> arabic = {"1", "2", "3", "4", "5"};
  std::string upper(s);
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  for (std::size_t i = 0; i < roman.size(); ++i) {
    if (upper == roman[i] || upper == arabic[i]) return static_cast<ConfigId>(i + 1);
  }
  throw ConfigError("unknown configuration '" + std::string(s) + "' (expected I..V)");
}

std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv3: return "conv3";
    case LayerKind::conv1: return "conv1";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::upsample: return "upsample";
    case LayerKind::sigmoid: return "sigmoid";
  }
  return "?";
}

std::size_t scaled_channels(std::size_t base, double width_multiplier) {
  const auto c = static_cast<std::size_t>(std::llround(static_cast<double>(base) * width_multiplier));
  return std::max<std::size_t>(1, c);
}

std::vector<LayerSpec> Network::layers() const {
  std::vector<LayerSpec> out;
  for (const ConvLayer& l : convs) {
    const auto kind = l.params.kernel() == 3 ? LayerKind::conv3 : LayerKind::conv1;
    out.push_back({kind, l.name, l.params.in_channels(), l.params.out_channels()});
    if (l.relu) out.push_back({LayerKind::relu, {}, l.params.out_channels(), l.params.out_channels()});
    if (l.pool_after) {
      out.push_back({LayerKind::maxpool, {}, l.params.out_channels(), l.params.out_channels()});
    }
  }
  out.push_back({LayerKind::upsample, {}, 1, 1});
  out.push_back({LayerKind::sigmoid, {}, 1, 1});
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const ConvLayer& l : convs) n += l.params.weight.size() + l.params.bias.size();
  return n;
}

void init_scratch(ConvParams& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  fill_gaussian(p, rng);
}

Network build(ConfigId config, double width_multiplier, const InitScheme& init) {
  if (!(width_multiplier > 0.0 && width_multiplier <= 1.0)) {
    throw ConfigError("width multiplier must be in (0, 1], got " + std::to_string(width_multiplier));
  }
  const auto stages = static_cast<std::size_t>(config);
  Network net;
  net.config = config;
  net.width_multiplier = width_multiplier;
  net.upsample_factor = std::size_t{1} << (stages - 1);

  std::size_t in_c = 3;
  for (std::size_t s = 0; s < stages; ++s) {
    const std::size_t out_c = scaled_channels(kStageChannels[s], width_multiplier);
    for (std::size_t i = 0; i < kStageConvs[s]; ++i) {
      ConvLayer l;
      l.name = "conv" + std::to_string(s + 1) + "_" + std::to_string(i + 1);
      l.params = ConvParams(in_c, out_c, 3);
      l.pool_after = (i + 1 == kStageConvs[s]) && (s + 1 < stages);
      net.convs.push_back(std::move(l));
      in_c = out_c;
    }
  }
  ConvLayer score;
  score.name = std::string(kScoreLayer);
  score.params = ConvParams(in_c, 1, 1);
  score.relu = false;
  net.convs.push_back(std::move(score));

  if (init.kind == InitScheme::Kind::zeros) return net;
  std::mt19937_64 rng(init.seed);
  for (ConvLayer& l : net.convs) fill_gaussian(l.params, rng);
  if (init.kind == InitScheme::Kind::pretrained) load_into(net, init.weights, true);
  return net;
}

Trace forward_trace(const Network& net, const Tensor& x) {
  const Shape& s = x.shape();
  if (s.c != 3) throw ShapeError("forward: expected 3 input channels, got " + std::to_string(s.c));
  if (s.h == 0 || s.w == 0 || s.h % net.upsample_factor != 0 || s.w % net.upsample_factor != 0) {
    throw ShapeError("forward: input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                     " is not divisible by the upsample factor " +
                     std::to_string(net.upsample_factor));
  }
  Trace t;
  Tensor a = x;
  for (const ConvLayer& l : net.convs) {
    Forward f = conv_forward(a, l.params);
    t.conv.push_back(std::move(f.cache));
    a = std::move(f.y);
    if (l.relu) {
      Forward r = relu(a);
      t.relu.push_back(std::move(r.cache));
      a = std::move(r.y);
    }
    if (l.pool_after) {
      Forward p = maxpool2x2(a);
      t.pool.push_back(std::move(p.cache));
      a = std::move(p.y);
    }
  }
  t.logit_shape = a.shape();
  t.logits_up = upsample_forward(a, net.upsample_factor);
  return t;
}

Gradients backward(const Network& net, Trace& trace, const Tensor& d_logits_up) {
  if (trace.conv.size() != net.convs.size()) throw ContractError("backward: trace does not match network");
  Gradients grads(net.convs.size());
  Tensor d = upsample_backward(d_logits_up, net.upsample_factor, trace.logit_shape);
  std::size_t relu_i = trace.relu.size();
  std::size_t pool_i = trace.pool.size();
  for (std::size_t li = net.convs.size(); li-- > 0;) {
    const ConvLayer& l = net.convs[li];
    if (l.pool_after) d = maxpool_backward(d, trace.pool[--pool_i]);
    if (l.relu) d = relu_backward(d, trace.relu[--relu_i]);
    ConvGrads g = conv_backward(d, trace.conv[li], l.params);
    grads[li] = {std::move(g.dweight), std::move(g.dbias)};
    d = std::move(g.dx);
  }
  return grads;
}

Gradients zero_gradients(const Network& net) {
  Gradients g;
  g.reserve(net.convs.size());
  for (const ConvLayer& l : net.convs) {
    g.push_back({Tensor(l.params.weight.shape()), std::vector<double>(l.params.bias.size(), 0.0)});
  }
  return g;
}

Tensor forward_logits(const Network& net, const Tensor& x) {
  const Shape& s = x.shape();
  if (s.n != 1) throw ShapeError("forward: batch size must be 1");
  if (s.c != 3) throw ShapeError("forward: expected 3 input channels, got " + std::to_string(s.c));
  if (s.h == 0 || s.w == 0 || s.h % net.upsample_factor != 0 || s.w % net.upsample_factor != 0) {
    throw ShapeError("forward: input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                     " is not divisible by the upsample factor " +
                     std::to_string(net.upsample_factor));
  }
  Tensor a = x;
  for (const ConvLayer& l : net.convs) {
    a = conv_forward(a, l.params).y;
    if (l.relu) a = relu(a).y;
    if (l.pool_after) a = maxpool2x2(a).y;
  }
  return a;
}

BlurMap forward(const Network& net, const Tensor& x) {
  const Tensor logits = forward_logits(net, x);
  const Tensor up = upsample_forward(logits, net.upsample_factor);
  const Shape& s = up.shape();
  BlurMap map(s.h, s.w);
  auto src = up.plane(0, 0);
  for (std::size_t i = 0; i < map.size(); ++i) map.data[i] = sigmoid(src[i]);
  return map;
}

void save_weights(const Network& net, const std::filesystem::path& manifest) {
  std::filesystem::path blob = manifest;
  blob.replace_extension(".bin");
  std::ofstream bin(blob, std::ios::binary | std::ios::trunc);
  std::ofstream man(manifest, std::ios::trunc);
  if (!bin || !man) throw DataError("weights: cannot write " + manifest.string());

  man << kManifestMagic << ' ' << kManifestVersion << '\n';
  man << "config " << to_string(net.config) << '\n';
  man.precision(17);
  man << "width " << net.width_multiplier << '\n';
  man << "blob " << blob.filename().string() << '\n';
  man << "# layer <name> <kind> <shape> <byte offset> <element count>\n";

  std::size_t offset = 0;
  auto emit = [&](const std::string& name, std::string_view kind, const Shape& shape,
                  std::span<const float> values, bool is_bias) {
    man << "layer " << name << ' ' << kind << ' '
        << (is_bias ? std::to_string(shape.n) : dims(shape)) << ' ' << offset << ' '
        << values.size() << '\n';
    for (float v : values) {
      float le = from_le(v);
      bin.write(reinterpret_cast<const char*>(&le), sizeof(float));
    }
    offset += values.size() * sizeof(float);
  };
  for (const ConvLayer& l : net.convs) {
    const auto kind = l.params.kernel() == 3 ? "conv3" : "conv1";
    const auto w = l.params.weight.to_f32();
    std::vector<float> b(l.params.bias.begin(), l.params.bias.end());
    emit(l.name + ".weight", std::string(kind) + "_weight", l.params.weight.shape(), w, false);
    emit(l.name + ".bias", std::string(kind) + "_bias", Shape{b.size(), 1, 1, 1}, b, true);
  }
  if (!bin || !man) throw DataError("weights: write failed for " + manifest.string());
}

std::size_t load_into(Network& net, const std::filesystem::path& manifest,
                      bool allow_missing_score) {
  const Container c = read_container(manifest);
  std::size_t loaded = 0;
  for (ConvLayer& l : net.convs) {
    const auto wi = c.records.find(l.name + ".weight");
    const auto bi = c.records.find(l.name + ".bias");
    if (wi == c.records.end() || bi == c.records.end()) {
      if (allow_missing_score && l.name == kScoreLayer) continue;
      throw WeightFormatError("weights: layer " + l.name + " is absent from " + manifest.string());
    }
    const Shape& want = l.params.weight.shape();
    if (!(wi->second.shape == want)) {
      throw WeightFormatError("weights: layer " + l.name + " has shape " + dims(wi->second.shape) +
                              ", network expects " + dims(want));
    }
    if (bi->second.count != l.params.bias.size()) {
      throw WeightFormatError("weights: layer " + l.name + " bias has " +
                              std::to_string(bi->second.count) + " values, network expects " +
                              std::to_string(l.params.bias.size()));
    }
    l.params.weight = Tensor::from_f32(want, slice(c, wi->second));
    const auto b = slice(c, bi->second);
    l.params.bias.assign(b.begin(), b.end());
    ++loaded;
  }
  return loaded;
}

Network load_weights(const std::filesystem::path& manifest, ConfigId config,
                     double width_multiplier) {
  Network net = build(config, width_multiplier, InitScheme::zeros());
  load_into(net, manifest, false);
  return net;
}

}  // namespace blurmap
