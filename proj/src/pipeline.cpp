#include "loopkit/pipeline.hpp"

#include <thread>

namespace loopkit {

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
  PipelineConfig c;
  if (j.contains("placedb")) c.placedb = PlaceDbConfig::from_json(j.at("placedb"));
  if (j.contains("kidnap")) {
    const auto& k = j.at("kidnap");
    c.kidnap.enter_threshold = k.value("enter_threshold", c.kidnap.enter_threshold);
    c.kidnap.exit_threshold = k.value("exit_threshold", c.kidnap.exit_threshold);
    c.kidnap.dwell = k.value("dwell", c.kidnap.dwell);
  }
  auto weights = [&](const char* key, EdgeWeights& w) {
    if (!j.contains(key)) return;
    w.rotation = j.at(key).value("rotation", w.rotation);
    w.translation = j.at(key).value("translation", w.translation);
  };
  weights("odometry_weights", c.odometry_weights);
  weights("loop_weights", c.loop_weights);
  c.switch_prior = j.value("switch_prior", c.switch_prior);
  if (j.contains("solve")) {
    const auto& s = j.at("solve");
    c.solve.max_iterations = s.value("max_iterations", c.solve.max_iterations);
    c.solve.initial_damping = s.value("initial_damping", c.solve.initial_damping);
    c.solve.tolerance = s.value("tolerance", c.solve.tolerance);
    c.solve.use_switches = s.value("use_switches", c.solve.use_switches);
  }
  c.concurrent = j.value("concurrent", c.concurrent);
  c.queue_capacity = j.value("queue_capacity", c.queue_capacity);
  c.optimize = j.value("optimize", c.optimize);
  return c;
}

namespace {

struct CandidateMsg {
  LoopCandidate candidate;
  WorldId query_world = 0;
  Pose query_odom;
  WorldId match_world = 0;
  Pose match_odom;
};

// Stage state. Each stage is only touched by one thread at a time.
struct Stages {
  const PipelineConfig& cfg;
  const MeasurementFn& measure;
  const std::function<std::vector<KeyframeId>(KeyframeId)>& truth;

  WorldManager worlds;
  std::mutex worlds_mu;
  PlaceDb db;
  LoopDetector detector;
  PoseGraph graph;
  std::optional<Keyframe> last_in_graph;
  PipelineResult result;

  Stages(const PipelineConfig& c, const MeasurementFn& m, const std::function<std::vector<KeyframeId>(KeyframeId)>& t)
      : cfg(c), measure(m), truth(t), worlds(c.kidnap), db(c.placedb), detector(c.placedb) {}

  // Stage 1: kidnap monitor. Returns the keyframe tagged with its world, or
  // nothing while kidnapped.
  std::optional<Keyframe> monitor(const Keyframe& in) {
    std::lock_guard lock(worlds_mu);
    const auto world = worlds.observe(in.id, in.tracked_features);
    if (!world) {
      ++result.dropped_keyframes;
      return std::nullopt;
    }
    Keyframe kf = in;
    kf.world = *world;
    return kf;
  }

  // Stage 2: store, query and apply the acceptance rule.
  std::optional<CandidateMsg> retrieve(const Keyframe& kf) {
    db.insert(kf);
    const auto hit = db.query(kf.descriptor, kf.id).best(kf.id);
    RetrievalRecord rec;
    rec.query_id = kf.id;
    if (hit) {
      rec.match_id = hit->match_id;
      rec.score = hit->score;
    }
    if (truth) rec.true_matches = truth(kf.id);
    result.retrievals.push_back(std::move(rec));

    const auto cand = detector.push(hit);
    if (!cand) return std::nullopt;
    const Keyframe* q = db.find(cand->query_id);
    const Keyframe* m = db.find(cand->match_id);
    CandidateMsg msg{*cand, q->world, q->odom_pose, m->world, m->odom_pose};
    msg.candidate.kind = q->world == m->world ? LoopKind::kIntraWorld : LoopKind::kInterWorld;
    return msg;
  }

  // Stage 3a: odometry into the pose graph.
  void add_keyframe(const Keyframe& kf) {
    graph.add_node(kf.id, kf.world, kf.odom_pose);
    if (last_in_graph && last_in_graph->world == kf.world) {
      graph.add_odometry_edge(last_in_graph->id, kf.id, compose(inverse(last_in_graph->odom_pose), kf.odom_pose),
                              cfg.odometry_weights);
    }
    last_in_graph = kf;
  }

  // Stage 3b: candidate pose, world bookkeeping and loop edge.
  void add_candidate(CandidateMsg msg) {
    const auto pose = measure ? measure(msg.candidate.query_id, msg.candidate.match_id) : std::nullopt;
    if (!pose) return;
    msg.candidate.relative_pose = *pose;
    if (msg.candidate.kind == LoopKind::kInterWorld) {
      std::lock_guard lock(worlds_mu);
      worlds.register_inter_world(msg.query_world, msg.query_odom, msg.match_world, msg.match_odom, *pose);
    }
    graph.add_loop_edge(msg.candidate.query_id, msg.candidate.match_id, *pose, cfg.loop_weights, cfg.switch_prior);
    result.candidates.push_back(msg.candidate);
  }
};

struct GraphMsg {
  Keyframe kf;
  std::optional<CandidateMsg> candidate;
};

}  // namespace

PipelineResult run_pipeline(std::span<const Keyframe> stream, const PipelineConfig& cfg, const MeasurementFn& measure,
                            const std::function<std::vector<KeyframeId>(KeyframeId)>& truth) {
  Stages st(cfg, measure, truth);

  if (!cfg.concurrent) {
    for (const auto& in : stream) {
      auto kf = st.monitor(in);
      if (!kf) continue;
      auto cand = st.retrieve(*kf);
      st.add_keyframe(*kf);
      if (cand) st.add_candidate(std::move(*cand));
    }
  } else {
    BoundedQueue<Keyframe> tracked(cfg.queue_capacity);
    BoundedQueue<GraphMsg> to_graph(cfg.queue_capacity);
    std::exception_ptr error;
    std::mutex error_mu;
    auto guard = [&](auto&& body, auto&... queues) {
      try {
        body();
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
      (queues.close(), ...);
    };
    std::thread retrieval([&] {
      guard([&] {
        while (auto kf = tracked.pop()) {
          auto cand = st.retrieve(*kf);
          to_graph.push({std::move(*kf), std::move(cand)});
        }
      }, to_graph, tracked);
    });
    std::thread graph_builder([&] {
      guard([&] {
        while (auto msg = to_graph.pop()) {
          st.add_keyframe(msg->kf);
          if (msg->candidate) st.add_candidate(std::move(*msg->candidate));
        }
      }, to_graph, tracked);
    });
    guard([&] {
      for (const auto& in : stream)
        if (auto kf = st.monitor(in)) tracked.push(std::move(*kf));
    }, tracked);
    retrieval.join();
    graph_builder.join();
    if (error) std::rethrow_exception(error);
  }

  st.graph.initialize(st.worlds);
  for (const auto& n : st.graph.nodes()) st.result.initial_trajectory.emplace_back(n.id, n.pose);
  if (cfg.optimize) {
    // Solve on a snapshot, then publish.
    const PoseGraph snapshot = st.graph;
    const SolveResult solved = solve(snapshot, cfg.solve);
    st.graph.apply(solved);
    st.result.solve_report = solved.report;
  }
  for (const auto& n : st.graph.nodes()) st.result.trajectory.emplace_back(n.id, n.pose);
  st.result.world_report = st.worlds.report();
  st.result.graph = std::move(st.graph);
  return std::move(st.result);
}

nlohmann::json solve_report_json(const SolveReport& r, const PoseGraph& g) {
  nlohmann::json loops = nlohmann::json::array();
  for (std::size_t k = 0; k < g.loop_edges().size(); ++k) {
    const auto& e = g.loop_edges()[k];
    loops.push_back({{"from", e.from}, {"to", e.to}, {"switch", k < r.switches.size() ? r.switches[k] : e.switch_value}});
  }
  return {{"iterations", r.iterations}, {"initial_residual", r.initial_residual}, {"final_residual", r.final_residual},
          {"converged", r.converged}, {"loop_edges", loops}};
}

}  // namespace loopkit
