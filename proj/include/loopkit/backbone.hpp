#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "loopkit/netvlad.hpp"

namespace loopkit {

enum class LayerKind { kStandardConv, kDepthwiseConv, kPointwiseConv, kMaxPool };

struct LayerSpec {
  LayerKind kind = LayerKind::kStandardConv;
  int kernel = 3;
  int stride = 1;
  int in_channels = 0;
  int out_channels = 0;
  std::string name;

  std::size_t param_count() const;
};

/// Ordered convolution/pooling table. Convolutions use "same" padding, so a
/// stride-s layer produces ceil(H/s) x ceil(W/s); pooling floors.
struct BackboneSpec {
  std::string name;
  std::vector<LayerSpec> layers;

  int out_channels() const;
  /// Throws std::invalid_argument if the channel chain is broken.
  void validate() const;
  /// Prefix of the table up to and including the layer with this name.
  BackboneSpec truncated(const std::string& last_layer) const;

  static BackboneSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// VGG16 convolutional stack (conv1_1 .. block5_pool).
BackboneSpec vgg16_spec();
/// MobileNet-v1 style decoupled stack (conv1, dw1/pw1 .. dw13/pw13).
BackboneSpec decoupled_spec();
/// Looks up "vgg16" or "decoupled".
BackboneSpec builtin_backbone(const std::string& name);

/// Dense C x H x W activation volume.
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int c, int h, int w) : channels(c), height(h), width(w), data(std::size_t(c) * h * w, 0.0) {}

  double& at(int c, int y, int x) { return data[(std::size_t(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return data[(std::size_t(c) * height + y) * width + x]; }
};

/// Per-layer kernels. Layout: standard conv [out][in][ky][kx];
/// depthwise [c][ky][kx]; pointwise [out][in]; maxpool empty.
struct BackboneWeights {
  std::vector<std::vector<double>> layers;

  static BackboneWeights zeros(const BackboneSpec& spec);
  static BackboneWeights random(const BackboneSpec& spec, std::uint64_t seed);
};

Tensor conv_layer_forward(const Tensor& in, const LayerSpec& layer, const std::vector<double>& w);

FeatureMap to_feature_map(const Tensor& t);

FeatureMap backbone_forward(const Tensor& image, const BackboneSpec& spec, const BackboneWeights& weights);

struct FlopCount {
  double flops = 0.0;
  double params = 0.0;
  int out_height = 0;
  int out_width = 0;
  int out_channels = 0;
};

/// Conv layers only, one multiply-accumulate = 2 FLOPs, biases and
/// activations ignored.
FlopCount count_flops_params(const BackboneSpec& spec, int width, int height);

struct FlopReportRow {
  std::string config;
  std::string input;
  double gflops = 0.0;
  double params = 0.0;
  long desc_dim = 0;
  double backbone_gflops = 0.0;
  double netvlad_gflops = 0.0;
};

/// Builds rows from a config of the form
/// {"configs": [{"name", "backbone", "depth", "clusters", "squash", "inputs": [[w,h], ...]}]}.
std::vector<FlopReportRow> flop_report(const nlohmann::json& config);
nlohmann::json default_flop_config();
void write_flop_csv(std::ostream& os, const std::vector<FlopReportRow>& rows);

}  // namespace loopkit
