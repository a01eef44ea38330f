#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "loopkit/geometry.hpp"
#include "loopkit/placedb.hpp"

namespace loopkit {

class WorldManager;

/// Per-component square-root information: rotation (rad^-1) then translation
/// (m^-1).
struct EdgeWeights {
  double rotation = 1.0;
  double translation = 1.0;

  Vec6 vector() const;
};

struct PoseNode {
  KeyframeId id = 0;
  WorldId world = 0;
  Pose odom_pose;  // in its own world's frame
  Pose pose;       // current estimate in the set's root frame
  bool fixed = false;
  bool resolved = true;  // world transform to the set root known
};

struct OdometryEdge {
  KeyframeId from = 0;
  KeyframeId to = 0;
  Pose measurement;  // ^iT_j
  EdgeWeights weights;
};

struct LoopEdge {
  KeyframeId from = 0;
  KeyframeId to = 0;
  Pose measurement;
  EdgeWeights weights;
  double switch_value = 1.0;
  double switch_prior = 1.0;  // lambda
};

struct SolveConfig {
  int max_iterations = 100;
  double initial_damping = 1e-4;  // relative to the largest diagonal entry
  double tolerance = 1e-10;
  double fd_step = 1e-6;
  bool use_switches = true;
};

struct SolveReport {
  int iterations = 0;
  double initial_residual = 0.0;
  double final_residual = 0.0;
  bool converged = false;
  std::vector<double> switches;  // one per loop edge, in insertion order
  std::vector<double> residual_history;  // after each accepted step
};

/// Result of solving a snapshot; applied back with PoseGraph::apply.
struct SolveResult {
  std::map<KeyframeId, Pose> poses;
  SolveReport report;
};

/// Pose graph over every world with switchable loop constraints.
class PoseGraph {
 public:
  /// Node pose starts as the odometry pose.
  void add_node(KeyframeId id, WorldId world, const Pose& odom_pose);
  /// Throws std::invalid_argument when either node is missing.
  void add_odometry_edge(KeyframeId from, KeyframeId to, const Pose& measurement, EdgeWeights w = {});
  void add_loop_edge(KeyframeId from, KeyframeId to, const Pose& measurement, EdgeWeights w = {},
                     double switch_prior = 1.0);

  /// Moves each node into its set-root frame via the world transforms; fixes
  /// the first node of each set. Nodes of worlds with no known transform keep
  /// their odometry pose and are left out of cross-world residuals.
  void initialize(const WorldManager& worlds);
  /// Same with an explicit world -> (root frame transform) map.
  void initialize(const std::map<WorldId, std::optional<Pose>>& world_to_root,
                  const std::map<WorldId, WorldId>& world_root);

  void fix_node(KeyframeId id, bool fixed = true);
  void set_pose(KeyframeId id, const Pose& p);

  /// Sum of squared weighted residuals, including switch priors.
  double total_residual(bool use_switches = true) const;

  void apply(const SolveResult& result);

  const std::vector<PoseNode>& nodes() const { return nodes_; }
  const std::vector<OdometryEdge>& odometry_edges() const { return odometry_; }
  const std::vector<LoopEdge>& loop_edges() const { return loops_; }
  const PoseNode& node(KeyframeId id) const;
  bool has_node(KeyframeId id) const { return index_.count(id) > 0; }

  void write_g2o(std::ostream& os) const;

 private:
  friend SolveResult solve(const PoseGraph& snapshot, const SolveConfig& cfg);

  std::vector<PoseNode> nodes_;
  std::map<KeyframeId, std::size_t> index_;
  std::vector<OdometryEdge> odometry_;
  std::vector<LoopEdge> loops_;
  std::map<WorldId, WorldId> world_set_;  // world -> set root world
};

/// Levenberg-Marquardt over node twists (right perturbation) and switch
/// variables, with central finite-difference Jacobians.
SolveResult solve(const PoseGraph& snapshot, const SolveConfig& cfg = {});

/// Solves and applies in place.
SolveReport optimize(PoseGraph& graph, const SolveConfig& cfg = {});

/// Residual of the relative-pose constraint: log(Z^-1 Xi^-1 Xj).
Vec6 relative_pose_error(const Pose& xi, const Pose& xj, const Pose& measurement);

struct AteResult {
  double rmse_translation = 0.0;
  double rmse_rotation = 0.0;
};

/// Absolute trajectory error after rigid alignment of the estimate onto the
/// ground truth (least-squares on positions).
AteResult ate(std::span<const Pose> estimated, std::span<const Pose> ground_truth);

}  // namespace loopkit
