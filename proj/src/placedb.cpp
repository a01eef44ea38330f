#include "loopkit/placedb.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace loopkit {

nlohmann::json pose_to_json(const Pose& p) { return p.to_array(); }

Pose pose_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 7) throw std::invalid_argument("pose must be an array of 7 numbers");
  return Pose::from_array(j.get<std::array<double, 7>>());
}

nlohmann::json keyframe_to_json(const Keyframe& kf) {
  return {{"id", kf.id},
          {"t", kf.timestamp},
          {"world", kf.world},
          {"pose", pose_to_json(kf.odom_pose)},
          {"desc", std::vector<double>(kf.descriptor.data(), kf.descriptor.data() + kf.descriptor.size())},
          {"feat_count", kf.tracked_features}};
}

Keyframe keyframe_from_json(const nlohmann::json& j) {
  Keyframe kf;
  kf.id = j.at("id").get<KeyframeId>();
  kf.timestamp = j.at("t").get<double>();
  kf.world = j.at("world").get<WorldId>();
  kf.odom_pose = pose_from_json(j.at("pose"));
  const auto d = j.at("desc").get<std::vector<double>>();
  kf.descriptor = Eigen::Map<const Eigen::VectorXd>(d.data(), Eigen::Index(d.size()));
  kf.tracked_features = j.at("feat_count").get<int>();
  return kf;
}

void write_keyframes_jsonl(std::ostream& os, std::span<const Keyframe> kfs) {
  for (const auto& kf : kfs) os << keyframe_to_json(kf).dump() << '\n';
}

std::vector<Keyframe> read_keyframes_jsonl(std::istream& is) {
  std::vector<Keyframe> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(keyframe_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::invalid_argument("keyframe stream line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void PlaceDbConfig::validate() const {
  if (exclusion_window < 0 || locality_window < 1 || consecutive < 1) {
    throw std::invalid_argument("PlaceDbConfig: need T >= 0, L >= 1, c >= 1");
  }
}

PlaceDbConfig PlaceDbConfig::from_json(const nlohmann::json& j) {
  PlaceDbConfig c;
  c.exclusion_window = j.value("exclusion_window", c.exclusion_window);
  c.accept_threshold = j.value("accept_threshold", c.accept_threshold);
  c.consecutive = j.value("consecutive", c.consecutive);
  c.locality_window = j.value("locality_window", c.locality_window);
  c.validate();
  return c;
}

std::optional<QueryHit> QueryResult::best(KeyframeId query_id) const {
  if (scores.empty()) return std::nullopt;
  std::size_t b = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[b]) b = i;
  return QueryHit{query_id, ids[b], scores[b]};
}

PlaceDb::PlaceDb(PlaceDbConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void PlaceDb::insert(const Keyframe& kf) {
  if (!ids_.empty() && kf.id <= ids_.back()) {
    throw std::invalid_argument("PlaceDb::insert: keyframe id " + std::to_string(kf.id) +
                                " is not greater than " + std::to_string(ids_.back()));
  }
  if (dim_ < 0) dim_ = kf.descriptor.size();
  if (kf.descriptor.size() != dim_) throw std::invalid_argument("PlaceDb::insert: descriptor dimension mismatch");
  ids_.push_back(kf.id);
  keyframes_.push_back(kf);
  descriptors_.insert(descriptors_.end(), kf.descriptor.data(), kf.descriptor.data() + dim_);
}

QueryResult PlaceDb::query(const Eigen::VectorXd& desc, std::optional<KeyframeId> latest_id) const {
  QueryResult r;
  if (ids_.empty()) return r;
  if (desc.size() != dim_) throw std::invalid_argument("PlaceDb::query: descriptor dimension mismatch");
  const KeyframeId latest = latest_id.value_or(ids_.back());
  const KeyframeId limit = latest - cfg_.exclusion_window;
  // ids_ is sorted, so the eligible keyframes form a prefix.
  const auto end = std::upper_bound(ids_.begin(), ids_.end(), limit);
  const auto n = static_cast<Eigen::Index>(end - ids_.begin());
  if (n == 0) return r;
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMajor> db(descriptors_.data(), n, dim_);
  const Eigen::VectorXd s = db * desc;
  r.ids.assign(ids_.begin(), end);
  r.scores.assign(s.data(), s.data() + n);
  return r;
}

const Keyframe* PlaceDb::find(KeyframeId id) const {
  const auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
  if (it == ids_.end() || *it != id) return nullptr;
  return &keyframes_[std::size_t(it - ids_.begin())];
}

std::optional<LoopCandidate> detect_loop(std::span<const QueryHit> recent, const PlaceDbConfig& cfg) {
  if (recent.size() < std::size_t(cfg.consecutive)) return std::nullopt;
  const auto window = recent.last(std::size_t(cfg.consecutive));
  const QueryHit& anchor = window.front();
  for (const auto& h : window) {
    if (!(h.score > cfg.accept_threshold)) return std::nullopt;
    if (std::llabs(h.match_id - anchor.match_id) > cfg.locality_window) return std::nullopt;
    if (h.query_id - h.match_id < cfg.exclusion_window) return std::nullopt;
  }
  LoopCandidate c;
  c.query_id = anchor.query_id;
  c.match_id = anchor.match_id;
  c.score = anchor.score;
  return c;
}

std::optional<LoopCandidate> LoopDetector::push(const std::optional<QueryHit>& hit) {
  if (!hit) {
    recent_.clear();
    return std::nullopt;
  }
  recent_.push_back(*hit);
  while (recent_.size() > std::size_t(cfg_.consecutive)) recent_.pop_front();
  const std::vector<QueryHit> window(recent_.begin(), recent_.end());
  return detect_loop(window, cfg_);
}

}  // namespace loopkit
