#include "loopkit/backbone.hpp"

#include <cmath>
#include <ostream>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

namespace loopkit {

namespace {

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::kStandardConv: return "conv";
    case LayerKind::kDepthwiseConv: return "depthwise";
    case LayerKind::kPointwiseConv: return "pointwise";
    case LayerKind::kMaxPool: return "maxpool";
  }
  return "?";
}

LayerKind kind_from_name(const std::string& s) {
  if (s == "conv") return LayerKind::kStandardConv;
  if (s == "depthwise") return LayerKind::kDepthwiseConv;
  if (s == "pointwise") return LayerKind::kPointwiseConv;
  if (s == "maxpool") return LayerKind::kMaxPool;
  throw std::invalid_argument("unknown layer kind: " + s);
}

int conv_out(int n, int stride) { return (n + stride - 1) / stride; }

}  // namespace

std::size_t LayerSpec::param_count() const {
  const std::size_t k2 = std::size_t(kernel) * kernel;
  switch (kind) {
    case LayerKind::kStandardConv: return k2 * in_channels * out_channels;
    case LayerKind::kDepthwiseConv: return k2 * in_channels;
    case LayerKind::kPointwiseConv: return std::size_t(in_channels) * out_channels;
    case LayerKind::kMaxPool: return 0;
  }
  return 0;
}

int BackboneSpec::out_channels() const { return layers.empty() ? 0 : layers.back().out_channels; }

void BackboneSpec::validate() const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.kernel < 1 || l.stride < 1 || l.in_channels < 1 || l.out_channels < 1) {
      throw std::invalid_argument(fmt::format("layer {} ({}): non-positive size", i, l.name));
    }
    if ((l.kind == LayerKind::kDepthwiseConv || l.kind == LayerKind::kMaxPool) &&
        l.in_channels != l.out_channels) {
      throw std::invalid_argument(fmt::format("layer {} ({}): {} must keep channels", i, l.name, kind_name(l.kind)));
    }
    if (l.kind == LayerKind::kPointwiseConv && l.kernel != 1) {
      throw std::invalid_argument(fmt::format("layer {} ({}): pointwise kernel must be 1", i, l.name));
    }
    if (i > 0 && layers[i - 1].out_channels != l.in_channels) {
      throw std::invalid_argument(fmt::format("layer {} ({}): expects {} input channels, previous layer gives {}",
                                              i, l.name, l.in_channels, layers[i - 1].out_channels));
    }
  }
}

BackboneSpec BackboneSpec::truncated(const std::string& last_layer) const {
  BackboneSpec out{name + "/" + last_layer, {}};
  for (const auto& l : layers) {
    out.layers.push_back(l);
    if (l.name == last_layer) return out;
  }
  throw std::invalid_argument("no layer named " + last_layer + " in " + name);
}

BackboneSpec BackboneSpec::from_json(const nlohmann::json& j) {
  BackboneSpec spec;
  spec.name = j.value("name", std::string("custom"));
  for (const auto& lj : j.at("layers")) {
    LayerSpec l;
    l.kind = kind_from_name(lj.at("kind").get<std::string>());
    l.kernel = lj.value("kernel", l.kind == LayerKind::kPointwiseConv ? 1 : 3);
    l.stride = lj.value("stride", 1);
    l.in_channels = lj.at("in").get<int>();
    l.out_channels = lj.value("out", l.in_channels);
    l.name = lj.value("name", std::string());
    spec.layers.push_back(l);
  }
  spec.validate();
  return spec;
}

nlohmann::json BackboneSpec::to_json() const {
  nlohmann::json layers_j = nlohmann::json::array();
  for (const auto& l : layers) {
    layers_j.push_back({{"kind", kind_name(l.kind)}, {"kernel", l.kernel}, {"stride", l.stride},
                        {"in", l.in_channels}, {"out", l.out_channels}, {"name", l.name}});
  }
  return {{"name", name}, {"layers", layers_j}};
}

BackboneSpec vgg16_spec() {
  BackboneSpec spec{"vgg16", {}};
  const std::vector<std::vector<int>> blocks = {{64, 64}, {128, 128}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}};
  int c = 3;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (std::size_t i = 0; i < blocks[b].size(); ++i) {
      spec.layers.push_back({LayerKind::kStandardConv, 3, 1, c, blocks[b][i], fmt::format("conv{}_{}", b + 1, i + 1)});
      c = blocks[b][i];
    }
    spec.layers.push_back({LayerKind::kMaxPool, 2, 2, c, c, fmt::format("block{}_pool", b + 1)});
  }
  return spec;
}

BackboneSpec decoupled_spec() {
  BackboneSpec spec{"decoupled", {}};
  spec.layers.push_back({LayerKind::kStandardConv, 3, 2, 3, 32, "conv1"});
  const std::vector<std::pair<int, int>> schedule = {{64, 1},  {128, 2}, {128, 1}, {256, 2}, {256, 1},
                                                     {512, 2}, {512, 1}, {512, 1}, {512, 1}, {512, 1},
                                                     {512, 1}, {1024, 2}, {1024, 1}};
  int c = 32;
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const auto [out, stride] = schedule[i];
    spec.layers.push_back({LayerKind::kDepthwiseConv, 3, stride, c, c, fmt::format("dw{}", i + 1)});
    spec.layers.push_back({LayerKind::kPointwiseConv, 1, 1, c, out, fmt::format("pw{}", i + 1)});
    c = out;
  }
  return spec;
}

BackboneSpec builtin_backbone(const std::string& name) {
  if (name == "vgg16") return vgg16_spec();
  if (name == "decoupled") return decoupled_spec();
  throw std::invalid_argument("unknown builtin backbone: " + name);
}

BackboneWeights BackboneWeights::zeros(const BackboneSpec& spec) {
  BackboneWeights w;
  for (const auto& l : spec.layers) w.layers.emplace_back(l.param_count(), 0.0);
  return w;
}

BackboneWeights BackboneWeights::random(const BackboneSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  BackboneWeights w;
  for (const auto& l : spec.layers) {
    // Xavier-uniform on fan-in/fan-out of the layer.
    const double k2 = double(l.kernel) * l.kernel;
    const double fan_in = l.kind == LayerKind::kDepthwiseConv ? k2 : k2 * l.in_channels;
    const double fan_out = l.kind == LayerKind::kDepthwiseConv ? k2 : k2 * l.out_channels;
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> layer(l.param_count());
    for (auto& v : layer) v = dist(rng);
    w.layers.push_back(std::move(layer));
  }
  return w;
}

Tensor conv_layer_forward(const Tensor& in, const LayerSpec& l, const std::vector<double>& w) {
  if (in.channels != l.in_channels) {
    throw std::invalid_argument(fmt::format("layer {}: input has {} channels, expected {}", l.name, in.channels, l.in_channels));
  }
  if (w.size() != l.param_count()) {
    throw std::invalid_argument(fmt::format("layer {}: {} weights, expected {}", l.name, w.size(), l.param_count()));
  }
  if (l.kind == LayerKind::kMaxPool) {
    Tensor out(l.out_channels, in.height / l.stride, in.width / l.stride);
    for (int c = 0; c < out.channels; ++c)
      for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
          double m = -INFINITY;
          for (int ky = 0; ky < l.kernel; ++ky)
            for (int kx = 0; kx < l.kernel; ++kx) {
              const int iy = y * l.stride + ky, ix = x * l.stride + kx;
              if (iy < in.height && ix < in.width) m = std::max(m, in.at(c, iy, ix));
            }
          out.at(c, y, x) = m;
        }
    return out;
  }

  const int pad = (l.kernel - 1) / 2;
  Tensor out(l.out_channels, conv_out(in.height, l.stride), conv_out(in.width, l.stride));
  const int k = l.kernel;
  auto sample = [&](int c, int y, int x, int ky, int kx) {
    const int iy = y * l.stride + ky - pad, ix = x * l.stride + kx - pad;
    if (iy < 0 || ix < 0 || iy >= in.height || ix >= in.width) return 0.0;
    return in.at(c, iy, ix);
  };
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      switch (l.kind) {
        case LayerKind::kStandardConv:
          for (int o = 0; o < l.out_channels; ++o) {
            double acc = 0.0;
            for (int c = 0; c < l.in_channels; ++c)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx)
                  acc += w[((std::size_t(o) * l.in_channels + c) * k + ky) * k + kx] * sample(c, y, x, ky, kx);
            out.at(o, y, x) = acc;
          }
          break;
        case LayerKind::kDepthwiseConv:
          for (int c = 0; c < l.in_channels; ++c) {
            double acc = 0.0;
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) acc += w[(std::size_t(c) * k + ky) * k + kx] * sample(c, y, x, ky, kx);
            out.at(c, y, x) = acc;
          }
          break;
        case LayerKind::kPointwiseConv:
          for (int o = 0; o < l.out_channels; ++o) {
            double acc = 0.0;
            for (int c = 0; c < l.in_channels; ++c) acc += w[std::size_t(o) * l.in_channels + c] * sample(c, y, x, 0, 0);
            out.at(o, y, x) = acc;
          }
          break;
        case LayerKind::kMaxPool: break;
      }
    }
  return out;
}

FeatureMap to_feature_map(const Tensor& t) {
  FeatureMap f(t.width, t.height, t.channels);
  for (int c = 0; c < t.channels; ++c)
    for (int y = 0; y < t.height; ++y)
      for (int x = 0; x < t.width; ++x) f.values(c, y * t.width + x) = t.at(c, y, x);
  return f;
}

FeatureMap backbone_forward(const Tensor& image, const BackboneSpec& spec, const BackboneWeights& weights) {
  spec.validate();
  if (weights.layers.size() != spec.layers.size()) {
    throw std::invalid_argument("backbone_forward: weights do not match layer table");
  }
  Tensor t = image;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) t = conv_layer_forward(t, spec.layers[i], weights.layers[i]);
  return to_feature_map(t);
}

FlopCount count_flops_params(const BackboneSpec& spec, int width, int height) {
  FlopCount fc;
  int h = height, w = width;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::kMaxPool) {
      h /= l.stride;
      w /= l.stride;
      continue;
    }
    h = conv_out(h, l.stride);
    w = conv_out(w, l.stride);
    const double macs = double(h) * w * double(l.param_count());
    fc.flops += 2.0 * macs;
    fc.params += double(l.param_count());
  }
  fc.out_height = h;
  fc.out_width = w;
  fc.out_channels = spec.out_channels();
  return fc;
}

nlohmann::json default_flop_config() {
  using nlohmann::json;
  const json inputs = json::array({json::array({320, 240}), json::array({640, 480})});
  json configs = json::array();
  for (int k : {16, 64}) {
    for (const char* depth : {"block5_pool", "block4_pool", "block3_pool"}) {
      configs.push_back({{"name", fmt::format("VGG16_K{}", k)}, {"backbone", "vgg16"}, {"depth", depth},
                         {"clusters", k}, {"inputs", inputs}});
    }
  }
  for (const auto& [label, k, squash] : {std::tuple{"decoup_K16", 16, 0}, std::tuple{"decoup_K16_r", 16, 32},
                                         std::tuple{"decoup_K64", 64, 0}}) {
    for (const char* depth : {"pw13", "pw10", "pw7"}) {
      json c = {{"name", label}, {"backbone", "decoupled"}, {"depth", depth}, {"clusters", k}, {"inputs", inputs}};
      if (squash > 0) c["squash"] = squash;
      configs.push_back(c);
    }
  }
  return {{"configs", configs}};
}

std::vector<FlopReportRow> flop_report(const nlohmann::json& config) {
  std::vector<FlopReportRow> rows;
  if (!config.contains("configs")) return rows;
  for (const auto& c : config.at("configs")) {
    BackboneSpec spec = c.contains("layers") ? BackboneSpec::from_json(c) : builtin_backbone(c.at("backbone").get<std::string>());
    if (c.contains("depth")) spec = spec.truncated(c.at("depth").get<std::string>());
    spec.validate();
    const int K = c.value("clusters", 16);
    const int squash = c.value("squash", 0);
    const std::string name = c.value("name", spec.name);
    for (const auto& in : c.at("inputs")) {
      const int w = in.at(0).get<int>(), h = in.at(1).get<int>();
      const FlopCount fc = count_flops_params(spec, w, h);
      const int D = squash > 0 ? squash : fc.out_channels;
      const int pixels = fc.out_height * fc.out_width;
      double flops = fc.flops;
      double params = fc.params;
      if (squash > 0) {
        flops += 2.0 * pixels * double(fc.out_channels) * squash;
        params += double(fc.out_channels) * squash;
      }
      const double vlad = netvlad_layer_flops(K, D, pixels);
      params += 2.0 * K * D + K;
      FlopReportRow row;
      row.config = c.contains("depth") ? name + "/" + c.at("depth").get<std::string>() : name;
      row.input = fmt::format("{}x{}", w, h);
      row.backbone_gflops = flops / 1e9;
      row.netvlad_gflops = vlad / 1e9;
      row.gflops = (flops + vlad) / 1e9;
      row.params = params;
      row.desc_dim = long(K) * D;
      rows.push_back(row);
    }
  }
  return rows;
}

void write_flop_csv(std::ostream& os, const std::vector<FlopReportRow>& rows) {
  os << "config,input,gflops,params,desc_dim\n";
  for (const auto& r : rows) {
    os << fmt::format("{},{},{:.4f},{:.0f},{}\n", r.config, r.input, r.gflops, r.params, r.desc_dim);
  }
}

}  // namespace loopkit
