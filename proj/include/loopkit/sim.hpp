#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "loopkit/geometry.hpp"
#include "loopkit/placedb.hpp"
#include "loopkit/train.hpp"

namespace loopkit {

struct KidnapSpec {
  int frame = 0;          // first blind frame
  int teleport_to = 0;    // place where tracking resumes
  int duration = 10;      // blind frames
};

/// Deterministic SLAM keyframe stream. Places sit on a closed circuit of
/// `place_count` places spaced `place_spacing` meters apart; the camera
/// advances one place per frame and wraps around.
struct SimConfig {
  std::uint64_t seed = 1;
  int descriptor_dim = 256;
  int place_count = 400;
  double place_spacing = 1.0;
  int frames = 800;
  int start_place = 0;
  double frame_dt = 0.1;
  bool planar = true;

  double odom_sigma_trans = 0.0;  // m per step
  double odom_sigma_rot = 0.0;    // rad per step
  double descriptor_sigma = 0.0;

  std::vector<KidnapSpec> kidnaps;

  int nominal_features = 150;
  int feature_jitter = 20;
  int kidnap_features = 3;

  // Loop-closure relative pose measurements.
  double loop_sigma_trans = 0.0;
  double loop_sigma_rot = 0.0;
  double outlier_rate = 0.0;
  double outlier_min_trans = 5.0;
  double outlier_max_trans = 20.0;

  /// Exclusion window used to define ground-truth loop pairs.
  int exclusion_window = 150;

  void validate() const;
  static SimConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct GroundTruth {
  std::vector<Pose> poses;          // per frame, global frame
  std::vector<int> places;          // per frame, -1 while blind
  std::vector<int> worlds;          // per frame, -1 while blind
  std::vector<Pose> world_origins;  // global pose of each world's frame
  std::vector<std::pair<KeyframeId, KeyframeId>> loop_pairs;  // (later, earlier)
  int exclusion_window = 0;

  /// ^(k)T_(k') from ground truth.
  Pose world_offset(int k, int kp) const;
  /// Earlier frames showing the same place at least the exclusion window back.
  std::vector<KeyframeId> true_matches(KeyframeId id) const;

  nlohmann::json to_json() const;
  static GroundTruth from_json(const nlohmann::json& j);

 private:
  std::vector<std::vector<KeyframeId>> matches_;
  friend GroundTruth ground_truth_from_places(std::vector<Pose>, std::vector<int>, std::vector<int>,
                                              std::vector<Pose>, int);
};

GroundTruth ground_truth_from_places(std::vector<Pose> poses, std::vector<int> places, std::vector<int> worlds,
                                     std::vector<Pose> world_origins, int exclusion_window);

struct SimOutput {
  std::vector<Keyframe> stream;
  GroundTruth truth;
};

/// Throws std::invalid_argument on an invalid config or schedule.
SimOutput generate(const SimConfig& cfg);

/// Unit vector uniformly distributed on the sphere.
Eigen::VectorXd random_unit_vector(int dim, std::mt19937_64& rng);

struct LoopMeasurement {
  Pose relative_pose;  // ^iT_j
  bool outlier = false;
};

/// Relative pose from frame `i` to frame `j` with the configured noise and
/// outlier injection. Seeded by (seed, i, j) so the result does not depend on
/// call order.
LoopMeasurement loop_measurement(KeyframeId i, KeyframeId j, const GroundTruth& truth, const SimConfig& cfg);

struct ToyDatasetConfig {
  std::uint64_t seed = 7;
  int dim = 16;
  int places = 40;
  int width = 4;
  int height = 4;
  int signature_words = 6;
  int clutter_words = 12;
  double clutter_fraction = 0.5;
  double feature_sigma = 0.35;
  int train_tuples = 200;
  int validation_tuples = 40;
  int positives = 6;
  int negatives = 6;

  static ToyDatasetConfig from_json(const nlohmann::json& j);
};

/// Synthetic place-recognition tuples: each place owns a few signature local
/// features, all places share a clutter vocabulary. Views mix the two with
/// Gaussian noise.
ToyDataset generate_toy_dataset(const ToyDatasetConfig& cfg);

void write_trajectory_csv(std::ostream& os, const std::vector<std::pair<KeyframeId, Pose>>& traj);

}  // namespace loopkit
