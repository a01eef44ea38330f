#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace loopkit {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class LossKind { kTriplet, kAllPair };

const char* loss_name(LossKind kind);
LossKind parse_loss_kind(const std::string& s);

struct LossConfig {
  double margin = 0.3;
  LossKind kind = LossKind::kAllPair;
};

/// One learning sample: a query with m positives and n negatives, all unit
/// norm.
struct TrainingTuple {
  VectorXd query;
  std::vector<VectorXd> positives;
  std::vector<VectorXd> negatives;

  /// Throws std::invalid_argument on empty sets, size mismatch, or members
  /// that are not unit norm within `tol`.
  void validate(double tol = 1e-7) const;

  VectorXd positive_dots() const;  // Delta_P, length m
  VectorXd negative_dots() const;  // Delta_N, length n
};

double triplet_loss(const TrainingTuple& t, const LossConfig& cfg);
double allpair_loss(const TrainingTuple& t, const LossConfig& cfg);
double tuple_loss(const TrainingTuple& t, const LossConfig& cfg);

/// m x n hinge matrix max(0, 1_m Delta_N^T - Delta_P 1_n^T + margin).
MatrixXd allpair_loss_terms(const TrainingTuple& t, const LossConfig& cfg);
double allpair_loss_matrix(const TrainingTuple& t, const LossConfig& cfg);

struct TupleGradient {
  VectorXd query;
  std::vector<VectorXd> positives;
  std::vector<VectorXd> negatives;
};

/// Subgradient of the configured loss. Hinge kinks take the zero branch; ties
/// for the worst positive pick the lowest index.
TupleGradient loss_gradient(const TrainingTuple& t, const LossConfig& cfg);

int zero_loss_count(std::span<const TrainingTuple> batch, const LossConfig& cfg);

struct SpreadStats {
  double pos_mean = 0.0;
  double pos_sigma = 0.0;
  double neg_mean = 0.0;
  double neg_sigma = 0.0;
};

/// Mean and population standard deviation of query/positive and
/// query/negative dot products over the whole batch.
SpreadStats spread_stats(std::span<const TrainingTuple> batch);

/// Fraction of (positive, negative) pairs with <q,P_i> > <q,N_j>.
double correct_pair_fraction(const TrainingTuple& t);

}  // namespace loopkit
