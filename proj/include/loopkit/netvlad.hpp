#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

namespace loopkit {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Grid of per-pixel local descriptors. Pixel u = y * width + x is stored as
/// column u of `values` (channels x pixels).
struct FeatureMap {
  int width = 0;
  int height = 0;
  MatrixXd values;

  FeatureMap() = default;
  FeatureMap(int w, int h, int channels);
  FeatureMap(int w, int h, MatrixXd vals);

  int channels() const { return static_cast<int>(values.rows()); }
  int pixels() const { return width * height; }
  auto pixel(int u) const { return values.col(u); }
  auto pixel(int u) { return values.col(u); }
  bool all_finite() const { return values.allFinite(); }
};

/// Learnable NetVLAD layer. Column k of each matrix belongs to cluster k.
/// At initialization the assignment weights are coupled to the centers:
/// w_k = 2 alpha c_k and b_k = -alpha |c_k|^2.
struct VladParams {
  MatrixXd centers;  // D x K
  MatrixXd weights;  // D x K
  VectorXd biases;   // K
  double alpha = 1.0;

  int clusters() const { return static_cast<int>(centers.cols()); }
  int dim() const { return static_cast<int>(centers.rows()); }

  /// Centers, weights, biases with w/b recoupled to the given centers.
  static VladParams coupled(MatrixXd centers, double alpha);
};

/// Per-cluster residual sums, D x K.
struct RawVlad {
  MatrixXd residuals;
};

/// Unit-norm whole-image descriptor of length K * D (clusters concatenated).
struct ImageDescriptor {
  VectorXd values;

  Eigen::Index size() const { return values.size(); }
  double dot(const ImageDescriptor& o) const { return values.dot(o.values); }
};

/// 1x1 convolution reducing D channels to D' (weights are D' x D).
struct ChannelSquash {
  MatrixXd weights;
};

inline constexpr double kZeroColumnNorm = 1e-12;

VladParams init_params(int clusters, int dim, std::uint64_t seed, double alpha = 10.0);

VectorXd soft_assign(const Eigen::Ref<const VectorXd>& h, const VladParams& p);

RawVlad vlad_aggregate(const FeatureMap& f, const VladParams& p);

/// Column-wise L2 normalization; zero columns stay zero.
MatrixXd normalize_columns(const MatrixXd& v);

ImageDescriptor intra_normalize(const RawVlad& v);

FeatureMap apply_squash(const FeatureMap& f, const ChannelSquash& squash);

ImageDescriptor describe(const FeatureMap& f, const VladParams& p,
                         const std::optional<ChannelSquash>& squash = std::nullopt);

/// Gradients of a scalar objective with respect to everything `describe`
/// depends on.
struct DescribeGradient {
  MatrixXd centers;
  MatrixXd weights;
  VectorXd biases;
  MatrixXd squash;    // empty when no squash was applied
  MatrixXd features;  // same layout as FeatureMap::values of the input
};

/// Reverse-mode pass through `describe` given dObjective/dDescriptor.
DescribeGradient describe_backward(const FeatureMap& f, const VladParams& p,
                                   const std::optional<ChannelSquash>& squash,
                                   const VectorXd& grad_descriptor);

/// Multiply-accumulate count of the NetVLAD layer (assignment conv, softmax,
/// residual aggregation, normalization) for an H' x W' x D feature map,
/// expressed in FLOPs.
double netvlad_layer_flops(int clusters, int dim, int feature_pixels);

}  // namespace loopkit
