#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "loopkit/placedb.hpp"
#include "loopkit/posegraph.hpp"
#include "loopkit/pr.hpp"
#include "loopkit/worlds.hpp"

namespace loopkit {

/// Blocking FIFO with a capacity limit. `pop` returns nullopt once the queue
/// is closed and drained.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(T item) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
    items_.push_back(std::move(item));
    not_empty_.notify_one();
  }

  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::deque<T> items_;
  bool closed_ = false;
  std::mutex mu_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
};

/// Supplies ^iT_j for an accepted candidate (query i, match j), or nullopt
/// when no pose can be computed.
using MeasurementFn = std::function<std::optional<Pose>(KeyframeId query, KeyframeId match)>;

struct PipelineConfig {
  PlaceDbConfig placedb;
  KidnapConfig kidnap;
  EdgeWeights odometry_weights;
  EdgeWeights loop_weights;
  double switch_prior = 1.0;
  SolveConfig solve;
  bool concurrent = false;
  std::size_t queue_capacity = 16;
  bool optimize = true;

  static PipelineConfig from_json(const nlohmann::json& j);
};

struct PipelineResult {
  std::vector<LoopCandidate> candidates;
  std::vector<std::pair<KeyframeId, Pose>> initial_trajectory;  // odometry chained through world transforms
  std::vector<std::pair<KeyframeId, Pose>> trajectory;          // after optimization
  std::vector<RetrievalRecord> retrievals;
  nlohmann::json world_report;
  SolveReport solve_report;
  PoseGraph graph;
  int dropped_keyframes = 0;
};

/// Kidnap monitoring -> descriptor query and loop detection -> world
/// bookkeeping and pose-graph construction -> solve. `truth` (optional)
/// fills the ground-truth matches of the retrieval records.
PipelineResult run_pipeline(std::span<const Keyframe> stream, const PipelineConfig& cfg, const MeasurementFn& measure,
                            const std::function<std::vector<KeyframeId>(KeyframeId)>& truth = {});

nlohmann::json solve_report_json(const SolveReport& r, const PoseGraph& g);

}  // namespace loopkit
