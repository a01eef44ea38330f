#pragma once

#include <filesystem>
#include <map>
#include <utility>

#include <nlohmann/json.hpp>

#include "loopkit/pipeline.hpp"
#include "loopkit/sim.hpp"
#include "loopkit/train.hpp"

namespace loopkit {

struct SimulationConfig {
  SimConfig sim;
  PipelineConfig pipeline;

  /// {"sim": {...}, "pipeline": {...}}; both keys optional.
  static SimulationConfig from_json(const nlohmann::json& j);
};

struct SwitchSummary {
  int inliers = 0;
  int outliers = 0;
  double max_outlier_switch = 0.0;
  double min_inlier_switch = 1.0;
  double inlier_above_09 = 1.0;  // fraction of inlier switches > 0.9
};

struct SimulationRun {
  SimOutput data;
  PipelineResult pipeline;
  /// Outlier flag of each measured loop (query, match).
  std::map<std::pair<KeyframeId, KeyframeId>, bool> loop_outliers;
  AteResult ate_odometry;
  AteResult ate_optimized;
  PrCurve pr;
  SwitchSummary switches;

  nlohmann::json metrics() const;
};

SimulationRun run_simulation(const SimulationConfig& cfg);

/// stream.jsonl, truth.json, world_report.json, solve_report.json,
/// candidates.json, metrics.json, pr.csv and the trajectory CSVs.
void write_simulation_reports(const std::filesystem::path& dir, const SimulationRun& run);

struct ToyExperimentConfig {
  ToyDatasetConfig dataset;
  ToyTrainConfig train;

  /// {"dataset": {...}, "train": {...}}; both keys optional.
  static ToyExperimentConfig from_json(const nlohmann::json& j);
};

struct LossComparison {
  TrainResult triplet;
  TrainResult allpair;
  bool val_pairs_dominates = false;  // allpair final val pairs >= triplet
  bool zero_loss_dominates = false;  // allpair zero-loss batches <= triplet

  nlohmann::json summary() const;
};

LossComparison compare_losses(const ToyExperimentConfig& cfg);

}  // namespace loopkit
