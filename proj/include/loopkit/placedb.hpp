#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "loopkit/geometry.hpp"

namespace loopkit {

using KeyframeId = std::int64_t;
using WorldId = int;

struct Keyframe {
  KeyframeId id = 0;
  double timestamp = 0.0;
  WorldId world = 0;
  Pose odom_pose;
  Eigen::VectorXd descriptor;
  int tracked_features = 0;
};

/// JSON-lines record `{id, t, world, pose:[7], desc:[...], feat_count}`.
nlohmann::json keyframe_to_json(const Keyframe& kf);
Keyframe keyframe_from_json(const nlohmann::json& j);
void write_keyframes_jsonl(std::ostream& os, std::span<const Keyframe> kfs);
std::vector<Keyframe> read_keyframes_jsonl(std::istream& is);

nlohmann::json pose_to_json(const Pose& p);
Pose pose_from_json(const nlohmann::json& j);

struct PlaceDbConfig {
  int exclusion_window = 150;     // T, keyframes
  double accept_threshold = 0.7;  // tau
  int consecutive = 3;            // c
  int locality_window = 6;        // L, keyframes

  void validate() const;
  static PlaceDbConfig from_json(const nlohmann::json& j);
};

enum class LoopKind { kIntraWorld, kInterWorld };

struct LoopCandidate {
  KeyframeId query_id = 0;
  KeyframeId match_id = 0;
  double score = 0.0;
  Pose relative_pose;  // ^iT_j from query (i) to match (j)
  LoopKind kind = LoopKind::kIntraWorld;
};

/// Best retrieval for one query.
struct QueryHit {
  KeyframeId query_id = 0;
  KeyframeId match_id = 0;
  double score = 0.0;
};

/// Dense scores against every keyframe with id <= latest - T.
struct QueryResult {
  std::vector<KeyframeId> ids;
  std::vector<double> scores;

  std::optional<QueryHit> best(KeyframeId query_id) const;
};

/// Naive store-and-compare descriptor database. Single writer; `query` is
/// const and may run concurrently with other queries.
class PlaceDb {
 public:
  explicit PlaceDb(PlaceDbConfig cfg = {});

  /// Throws std::invalid_argument unless kf.id exceeds every stored id.
  void insert(const Keyframe& kf);

  /// Scores `desc` against keyframes with id <= latest_id - T, where
  /// latest_id defaults to the newest stored id.
  QueryResult query(const Eigen::VectorXd& desc, std::optional<KeyframeId> latest_id = std::nullopt) const;

  std::size_t size() const { return ids_.size(); }
  const Keyframe& keyframe(std::size_t index) const { return keyframes_[index]; }
  const Keyframe* find(KeyframeId id) const;
  const PlaceDbConfig& config() const { return cfg_; }

 private:
  PlaceDbConfig cfg_;
  std::vector<KeyframeId> ids_;
  std::vector<Keyframe> keyframes_;
  std::vector<double> descriptors_;  // row-major, one row per keyframe
  Eigen::Index dim_ = -1;
};

/// Acceptance rule over the last `cfg.consecutive` hits (oldest first): every
/// score above tau and every match within L keyframes of the first hit's
/// match. The candidate reported is the first hit's query/match pair.
std::optional<LoopCandidate> detect_loop(std::span<const QueryHit> recent, const PlaceDbConfig& cfg);

/// Keeps the sliding window of hits fed to `detect_loop`. Queries with no
/// eligible keyframe break the run of consecutive hits.
class LoopDetector {
 public:
  explicit LoopDetector(PlaceDbConfig cfg) : cfg_(cfg) {}

  std::optional<LoopCandidate> push(const std::optional<QueryHit>& hit);
  void reset() { recent_.clear(); }

 private:
  PlaceDbConfig cfg_;
  std::deque<QueryHit> recent_;
};

}  // namespace loopkit
