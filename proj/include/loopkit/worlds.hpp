#pragma once

#include <map>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "loopkit/geometry.hpp"
#include "loopkit/placedb.hpp"

namespace loopkit {

/// Union-find over world ids with path compression and union by rank.
/// Grows on demand when an unseen id is referenced.
class DisjointSets {
 public:
  explicit DisjointSets(int n = 0);

  int add();
  int find(int x);
  int find(int x) const;
  /// Returns the representative of the merged set.
  int unite(int a, int b);
  bool same_set(int a, int b) { return find(a) == find(b); }
  int size() const { return static_cast<int>(parent_.size()); }

 private:
  void ensure(int x);

  std::vector<int> parent_;
  std::vector<int> rank_;
};

struct KidnapEvent {
  enum class Type { kStart, kEnd };
  Type type;
  WorldId world;  // new world for kEnd, current world for kStart
};

struct KidnapConfig {
  int enter_threshold = 10;  // kidnapped when tracked features < this
  int exit_threshold = 20;   // recovered after `dwell` frames >= this
  int dwell = 2;
};

class KidnapDetector {
 public:
  enum class State { kTracking, kKidnapped };

  explicit KidnapDetector(KidnapConfig cfg = {}) : cfg_(cfg) {}

  std::optional<KidnapEvent> update(int feature_count);

  State state() const { return state_; }
  WorldId world() const { return world_; }
  bool tracking() const { return state_ == State::kTracking; }

 private:
  KidnapConfig cfg_;
  State state_ = State::kTracking;
  WorldId world_ = 0;
  int good_frames_ = 0;
};

/// Directed edges k -> k' carrying ^(k)T_(k'); the reverse edge is implied
/// with the inverse pose. Only the first edge per unordered pair is kept.
class WorldGraph {
 public:
  /// Returns false if the pair already had an edge.
  bool add_edge(WorldId from, WorldId to, const Pose& T_from_to);

  std::optional<Pose> edge(WorldId from, WorldId to) const;
  /// Fewest-hop chain from `from` to `to`, ties broken by lowest neighbor id.
  std::optional<Pose> path_pose(WorldId from, WorldId to) const;
  std::optional<std::vector<WorldId>> path(WorldId from, WorldId to) const;

  struct Edge {
    WorldId from;
    WorldId to;
    Pose pose;
  };
  const std::vector<Edge>& edges() const { return edges_; }

 private:
  std::vector<Edge> edges_;
  std::map<WorldId, std::map<WorldId, Pose>> adjacency_;
};

struct KidnapInterval {
  WorldId world;  // world that was lost
  KeyframeId start_id;
  KeyframeId end_id;  // first keyframe of the next world
};

/// Bookkeeping of worlds: kidnap detection, set membership and inter-world
/// transforms.
class WorldManager {
 public:
  explicit WorldManager(KidnapConfig cfg = {});

  /// Feeds a keyframe's feature count. Returns the world the keyframe belongs
  /// to, or nullopt while kidnapped (such keyframes are dropped).
  std::optional<WorldId> observe(KeyframeId id, int feature_count);

  /// Registers an inter-world loop: stores ^(k)T_(k') computed from the odometry
  /// poses and the measured ^iT_j, then merges the sets. Throws
  /// std::invalid_argument if both nodes are in the same world.
  void register_inter_world(WorldId world_i, const Pose& odom_i, WorldId world_j, const Pose& odom_j,
                            const Pose& T_i_j);

  bool same_set(WorldId a, WorldId b);
  std::optional<Pose> relative_pose_between_worlds(WorldId from, WorldId to) const;

  /// Lowest world id in the set containing `w`.
  WorldId set_root(WorldId w) const;
  int world_count() const { return world_count_; }
  std::vector<std::vector<WorldId>> sets() const;

  const WorldGraph& graph() const { return graph_; }
  const std::vector<KidnapInterval>& kidnaps() const { return kidnaps_; }
  WorldId current_world() const { return detector_.world(); }

  nlohmann::json report() const;

 private:
  KidnapDetector detector_;
  DisjointSets sets_;
  WorldGraph graph_;
  std::vector<KidnapInterval> kidnaps_;
  std::optional<KeyframeId> kidnap_start_;
  int world_count_ = 1;
};

}  // namespace loopkit
