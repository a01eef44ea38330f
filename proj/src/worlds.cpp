#include "loopkit/worlds.hpp"

#include <algorithm>
#include <deque>
#include <stdexcept>
#include <string>

#include "loopkit/placedb.hpp"

namespace loopkit {

DisjointSets::DisjointSets(int n) {
  for (int i = 0; i < n; ++i) add();
}

int DisjointSets::add() {
  const int id = size();
  parent_.push_back(id);
  rank_.push_back(0);
  return id;
}

void DisjointSets::ensure(int x) {
  if (x < 0) throw std::out_of_range("DisjointSets: negative id");
  while (x >= size()) add();
}

int DisjointSets::find(int x) {
  ensure(x);
  int root = x;
  while (parent_[root] != root) root = parent_[root];
  while (parent_[x] != root) {
    const int next = parent_[x];
    parent_[x] = root;
    x = next;
  }
  return root;
}

int DisjointSets::find(int x) const {
  if (x < 0) throw std::out_of_range("DisjointSets: negative id");
  if (x >= size()) return x;
  while (parent_[x] != x) x = parent_[x];
  return x;
}

int DisjointSets::unite(int a, int b) {
  a = find(a);
  b = find(b);
  if (a == b) return a;
  if (rank_[a] < rank_[b]) std::swap(a, b);
  parent_[b] = a;
  if (rank_[a] == rank_[b]) ++rank_[a];
  return a;
}

std::optional<KidnapEvent> KidnapDetector::update(int feature_count) {
  if (state_ == State::kTracking) {
    if (feature_count < cfg_.enter_threshold) {
      state_ = State::kKidnapped;
      good_frames_ = 0;
      return KidnapEvent{KidnapEvent::Type::kStart, world_};
    }
    return std::nullopt;
  }
  if (feature_count >= cfg_.exit_threshold) {
    if (++good_frames_ >= cfg_.dwell) {
      state_ = State::kTracking;
      good_frames_ = 0;
      ++world_;
      return KidnapEvent{KidnapEvent::Type::kEnd, world_};
    }
  } else {
    good_frames_ = 0;
  }
  return std::nullopt;
}

bool WorldGraph::add_edge(WorldId from, WorldId to, const Pose& T_from_to) {
  if (from == to) throw std::invalid_argument("WorldGraph: self edge");
  if (edge(from, to)) return false;
  edges_.push_back({from, to, T_from_to});
  adjacency_[from][to] = T_from_to;
  adjacency_[to][from] = inverse(T_from_to);
  return true;
}

std::optional<Pose> WorldGraph::edge(WorldId from, WorldId to) const {
  const auto it = adjacency_.find(from);
  if (it == adjacency_.end()) return std::nullopt;
  const auto jt = it->second.find(to);
  if (jt == it->second.end()) return std::nullopt;
  return jt->second;
}

std::optional<std::vector<WorldId>> WorldGraph::path(WorldId from, WorldId to) const {
  if (from == to) return std::vector<WorldId>{from};
  std::map<WorldId, WorldId> parent{{from, from}};
  std::deque<WorldId> frontier{from};
  while (!frontier.empty()) {
    const WorldId w = frontier.front();
    frontier.pop_front();
    const auto it = adjacency_.find(w);
    if (it == adjacency_.end()) continue;
    // std::map iterates neighbors in ascending id order.
    for (const auto& [nb, pose] : it->second) {
      if (parent.count(nb)) continue;
      parent[nb] = w;
      if (nb == to) {
        std::vector<WorldId> out{to};
        for (WorldId c = to; c != from;) {
          c = parent[c];
          out.push_back(c);
        }
        return std::vector<WorldId>(out.rbegin(), out.rend());
      }
      frontier.push_back(nb);
    }
  }
  return std::nullopt;
}

std::optional<Pose> WorldGraph::path_pose(WorldId from, WorldId to) const {
  const auto p = path(from, to);
  if (!p) return std::nullopt;
  Pose acc;
  for (std::size_t i = 1; i < p->size(); ++i) acc = compose(acc, *edge((*p)[i - 1], (*p)[i]));
  return acc;
}

WorldManager::WorldManager(KidnapConfig cfg) : detector_(cfg), sets_(1) {}

std::optional<WorldId> WorldManager::observe(KeyframeId id, int feature_count) {
  if (auto ev = detector_.update(feature_count)) {
    if (ev->type == KidnapEvent::Type::kStart) {
      kidnap_start_ = id;
    } else {
      kidnaps_.push_back({ev->world - 1, kidnap_start_.value_or(id), id});
      kidnap_start_.reset();
      world_count_ = ev->world + 1;
      sets_.find(ev->world);
    }
  }
  if (!detector_.tracking()) return std::nullopt;
  return detector_.world();
}

void WorldManager::register_inter_world(WorldId world_i, const Pose& odom_i, WorldId world_j, const Pose& odom_j,
                                        const Pose& T_i_j) {
  if (world_i == world_j) {
    throw std::invalid_argument("register_inter_world: both nodes are in world " + std::to_string(world_i));
  }
  graph_.add_edge(world_i, world_j, relative_world_pose(odom_i, T_i_j, odom_j));
  sets_.unite(world_i, world_j);
  world_count_ = std::max({world_count_, world_i + 1, world_j + 1});
}

bool WorldManager::same_set(WorldId a, WorldId b) { return sets_.same_set(a, b); }

std::optional<Pose> WorldManager::relative_pose_between_worlds(WorldId from, WorldId to) const {
  if (from == to) return Pose::identity();
  if (sets_.find(from) != sets_.find(to)) return std::nullopt;
  return graph_.path_pose(from, to);
}

WorldId WorldManager::set_root(WorldId w) const {
  const int rep = sets_.find(w);
  for (WorldId k = 0; k < world_count_; ++k)
    if (sets_.find(k) == rep) return k;
  return w;
}

std::vector<std::vector<WorldId>> WorldManager::sets() const {
  std::map<int, std::vector<WorldId>> by_rep;
  for (WorldId k = 0; k < world_count_; ++k) by_rep[set_root(k)].push_back(k);
  std::vector<std::vector<WorldId>> out;
  for (auto& [rep, members] : by_rep) out.push_back(std::move(members));
  return out;
}

nlohmann::json WorldManager::report() const {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : graph_.edges()) edges.push_back({{"from", e.from}, {"to", e.to}, {"pose", pose_to_json(e.pose)}});
  nlohmann::json kidnaps = nlohmann::json::array();
  for (const auto& k : kidnaps_) kidnaps.push_back({{"world", k.world}, {"start_id", k.start_id}, {"end_id", k.end_id}});
  return {{"world_count", world_count_}, {"sets", sets()}, {"edges", edges}, {"kidnap_intervals", kidnaps}};
}

}  // namespace loopkit
