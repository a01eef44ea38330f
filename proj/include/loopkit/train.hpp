#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "loopkit/loss.hpp"
#include "loopkit/netvlad.hpp"

namespace loopkit {

/// A training tuple before description: feature maps for the query, its
/// positives and its negatives.
struct FeatureTuple {
  FeatureMap query;
  std::vector<FeatureMap> positives;
  std::vector<FeatureMap> negatives;
};

struct ToyDataset {
  std::vector<FeatureTuple> train;
  std::vector<FeatureTuple> validation;
  int dim = 0;
};

enum class OptimizerKind { kAdaDelta, kGradientDescent };

struct ToyTrainConfig {
  int batch_size = 4;
  int positives = 6;
  int negatives = 6;
  int epochs = 1;
  int iterations_per_epoch = 500;
  /// Stop after this many iterations in total; 0 runs every epoch fully.
  int max_iterations = 0;
  double learning_rate = 1.0;
  double lr_decay = 0.7;
  int patience_epochs = 50;
  double regularization = 0.001;
  std::uint64_t seed = 1;

  OptimizerKind optimizer = OptimizerKind::kAdaDelta;
  double adadelta_rho = 0.95;
  double adadelta_eps = 1e-6;

  double margin = 0.3;
  int clusters = 4;
  double alpha = 10.0;
  /// Learnable 1x1 channel squash to this many channels; 0 disables it.
  int squash_channels = 0;

  void validate() const;
  static ToyTrainConfig from_json(const nlohmann::json& j);
};

/// Everything `describe` learns.
struct DescriptorModel {
  VladParams vlad;
  std::optional<ChannelSquash> squash;

  ImageDescriptor describe(const FeatureMap& f) const;
  double squared_norm() const;
};

DescriptorModel init_model(int dim, const ToyTrainConfig& cfg);

TrainingTuple describe_tuple(const DescriptorModel& model, const FeatureTuple& t);

/// Mean tuple loss over `batch` plus regularization * |theta|^2, together
/// with its gradient packed in the same order as `pack_parameters`.
struct BatchObjective {
  double fit_loss = 0.0;
  double total = 0.0;
  VectorXd gradient;
  std::vector<TrainingTuple> described;
};

VectorXd pack_parameters(const DescriptorModel& m);
void unpack_parameters(const VectorXd& theta, DescriptorModel& m);

BatchObjective batch_objective(const DescriptorModel& model, std::span<const FeatureTuple> batch,
                               const LossConfig& loss, double regularization);

struct TrainLogRow {
  int iter = 0;
  double loss = 0.0;
  double loss_rel = 0.0;
  double train_pairs_pct = 0.0;
  double val_pairs_pct = 0.0;
  SpreadStats spread;
  int zero_loss_count = 0;
  double learning_rate = 0.0;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  DescriptorModel model;
  bool diverged = false;
  int cumulative_zero_loss = 0;  // zero-loss tuples over all batches
  int zero_loss_batches = 0;
};

TrainResult toy_train(const ToyDataset& data, const ToyTrainConfig& cfg, LossKind kind);

/// Mean percentage of correctly ordered (positive, negative) pairs.
double pair_identification_pct(const DescriptorModel& model, std::span<const FeatureTuple> tuples);

void write_train_log_csv(std::ostream& os, const std::vector<TrainLogRow>& log);

struct GradcheckConfig {
  std::uint64_t seed = 3;
  int tuples = 100;
  double tolerance = 1e-5;
  double step = 1e-6;
  /// Tuples with any hinge slack (or worst-positive gap) below this are
  /// resampled.
  double kink_margin = 1e-3;
  double margin = 0.3;
  /// Negates the analytic gradient; used to check that the suite can fail.
  bool flip_sign = false;
};

struct GradcheckResult {
  std::string name;
  int checked = 0;
  double max_relative_error = 0.0;
  bool passed = false;
};

/// Central finite differences against the analytic gradients, for both
/// losses at the descriptor level and through the NetVLAD layer.
std::vector<GradcheckResult> run_gradcheck(const GradcheckConfig& cfg);

}  // namespace loopkit
