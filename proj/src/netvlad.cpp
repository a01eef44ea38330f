#include "loopkit/netvlad.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace loopkit {

FeatureMap::FeatureMap(int w, int h, int channels)
    : width(w), height(h), values(MatrixXd::Zero(channels, w * h)) {}

FeatureMap::FeatureMap(int w, int h, MatrixXd vals) : width(w), height(h), values(std::move(vals)) {
  if (values.cols() != static_cast<Eigen::Index>(w) * h) {
    throw std::invalid_argument("FeatureMap: value columns do not match width*height");
  }
}

VladParams VladParams::coupled(MatrixXd centers, double alpha) {
  VladParams p;
  p.alpha = alpha;
  p.weights = 2.0 * alpha * centers;
  p.biases = -alpha * centers.colwise().squaredNorm().transpose();
  p.centers = std::move(centers);
  return p;
}

VladParams init_params(int clusters, int dim, std::uint64_t seed, double alpha) {
  if (clusters < 1 || dim < 1) throw std::invalid_argument("init_params: K and D must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd centers(dim, clusters);
  for (int k = 0; k < clusters; ++k) {
    // Isotropic Gaussian direction is uniform on the sphere.
    double n = 0.0;
    do {
      for (int d = 0; d < dim; ++d) centers(d, k) = normal(rng);
      n = centers.col(k).norm();
    } while (n < 1e-12);
    centers.col(k) /= n;
  }
  return VladParams::coupled(std::move(centers), alpha);
}

VectorXd soft_assign(const Eigen::Ref<const VectorXd>& h, const VladParams& p) {
  if (h.size() != p.dim()) throw std::invalid_argument("soft_assign: dimension mismatch");
  VectorXd r = p.weights.transpose() * h + p.biases;
  r.array() -= r.maxCoeff();
  r = r.array().exp();
  return r / r.sum();
}

RawVlad vlad_aggregate(const FeatureMap& f, const VladParams& p) {
  if (f.channels() != p.dim()) {
    throw std::invalid_argument("vlad_aggregate: feature channels " + std::to_string(f.channels()) +
                                " != cluster dim " + std::to_string(p.dim()));
  }
  const int K = p.clusters();
  MatrixXd v = MatrixXd::Zero(p.dim(), K);
  // Row-major pixel order.
  for (int u = 0; u < f.pixels(); ++u) {
    const VectorXd a = soft_assign(f.pixel(u), p);
    for (int k = 0; k < K; ++k) {
      v.col(k) += a(k) * (f.pixel(u) - p.centers.col(k));
    }
  }
  return {std::move(v)};
}

MatrixXd normalize_columns(const MatrixXd& v) {
  MatrixXd out = v;
  for (Eigen::Index k = 0; k < out.cols(); ++k) {
    const double n = out.col(k).norm();
    if (n < kZeroColumnNorm) {
      out.col(k).setZero();
    } else {
      out.col(k) /= n;
    }
  }
  return out;
}

ImageDescriptor intra_normalize(const RawVlad& v) {
  const MatrixXd cols = normalize_columns(v.residuals);
  VectorXd flat = Eigen::Map<const VectorXd>(cols.data(), cols.size());
  const double n = flat.norm();
  if (n < kZeroColumnNorm) {
    flat.setZero();
  } else {
    flat /= n;
  }
  return {std::move(flat)};
}

FeatureMap apply_squash(const FeatureMap& f, const ChannelSquash& squash) {
  if (squash.weights.cols() != f.channels()) {
    throw std::invalid_argument("apply_squash: squash input channels != feature channels");
  }
  return FeatureMap(f.width, f.height, squash.weights * f.values);
}

ImageDescriptor describe(const FeatureMap& f, const VladParams& p,
                         const std::optional<ChannelSquash>& squash) {
  if (squash) return intra_normalize(vlad_aggregate(apply_squash(f, *squash), p));
  return intra_normalize(vlad_aggregate(f, p));
}

DescribeGradient describe_backward(const FeatureMap& input, const VladParams& p,
                                   const std::optional<ChannelSquash>& squash,
                                   const VectorXd& grad_descriptor) {
  const FeatureMap f = squash ? apply_squash(input, *squash) : input;
  if (f.channels() != p.dim()) throw std::invalid_argument("describe_backward: dimension mismatch");
  const int K = p.clusters();
  const int D = p.dim();
  const int U = f.pixels();

  // Forward recomputation, keeping the intermediates.
  MatrixXd assign(K, U);
  MatrixXd v = MatrixXd::Zero(D, K);
  for (int u = 0; u < U; ++u) {
    assign.col(u) = soft_assign(f.pixel(u), p);
    for (int k = 0; k < K; ++k) v.col(k) += assign(k, u) * (f.pixel(u) - p.centers.col(k));
  }
  const MatrixXd vbar = normalize_columns(v);
  const Eigen::Map<const VectorXd> z(vbar.data(), vbar.size());
  const double zn = z.norm();

  DescribeGradient g;
  g.centers = MatrixXd::Zero(D, K);
  g.weights = MatrixXd::Zero(D, K);
  g.biases = VectorXd::Zero(K);
  g.features = MatrixXd::Zero(D, U);
  if (grad_descriptor.size() != z.size()) {
    throw std::invalid_argument("describe_backward: gradient length != descriptor length");
  }
  if (zn < kZeroColumnNorm) {
    if (squash) g.squash = MatrixXd::Zero(squash->weights.rows(), squash->weights.cols());
    g.features = MatrixXd::Zero(input.channels(), U);
    return g;
  }

  // Global normalization.
  const VectorXd eta = z / zn;
  const VectorXd gz = (grad_descriptor - eta * eta.dot(grad_descriptor)) / zn;
  const Eigen::Map<const MatrixXd> gvbar(gz.data(), D, K);

  // Intra-normalization.
  MatrixXd gv = MatrixXd::Zero(D, K);
  for (int k = 0; k < K; ++k) {
    const double n = v.col(k).norm();
    if (n < kZeroColumnNorm) continue;
    gv.col(k) = (gvbar.col(k) - vbar.col(k) * vbar.col(k).dot(gvbar.col(k))) / n;
  }

  // Aggregation and soft assignment.
  for (int u = 0; u < U; ++u) {
    const auto h = f.pixel(u);
    VectorXd ga(K);
    for (int k = 0; k < K; ++k) {
      ga(k) = gv.col(k).dot(h - p.centers.col(k));
      g.centers.col(k) -= assign(k, u) * gv.col(k);
    }
    const VectorXd a = assign.col(u);
    const VectorXd gr = a.array() * (ga.array() - a.dot(ga));
    g.weights.noalias() += h * gr.transpose();
    g.biases += gr;
    g.features.col(u) = gv * a + p.weights * gr;
  }

  if (squash) {
    g.squash = g.features * input.values.transpose();
    g.features = squash->weights.transpose() * g.features;
  }
  return g;
}

double netvlad_layer_flops(int clusters, int dim, int feature_pixels) {
  const double U = feature_pixels;
  const double K = clusters;
  const double D = dim;
  const double assignment = 2.0 * U * K * D;  // 1x1 conv to K logits
  const double softmax = 3.0 * U * K;         // exp, sum, divide
  // Aggregation as F * A^T - C * diag(sum_u a): one matmul plus the center term.
  const double aggregation = 2.0 * U * K * D + U * K + 2.0 * K * D;
  const double normalization = 3.0 * K * D * 2;  // intra + global
  return assignment + softmax + aggregation + normalization;
}

}  // namespace loopkit
