#include "loopkit/experiment.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace loopkit {

SimulationConfig SimulationConfig::from_json(const nlohmann::json& j) {
  SimulationConfig c;
  if (j.contains("sim")) c.sim = SimConfig::from_json(j.at("sim"));
  if (j.contains("pipeline")) c.pipeline = PipelineConfig::from_json(j.at("pipeline"));
  c.pipeline.placedb.exclusion_window = c.sim.exclusion_window;
  return c;
}

namespace {

std::set<WorldId> root_set(const nlohmann::json& world_report, WorldId w) {
  for (const auto& s : world_report.at("sets")) {
    auto worlds = s.get<std::vector<WorldId>>();
    if (std::find(worlds.begin(), worlds.end(), w) != worlds.end()) return {worlds.begin(), worlds.end()};
  }
  return {w};
}

// ATE over the keyframes that share a frame with the first one.
AteResult trajectory_ate(const std::vector<std::pair<KeyframeId, Pose>>& traj, const PoseGraph& graph,
                         const std::set<WorldId>& worlds, const GroundTruth& truth) {
  std::vector<Pose> est, gt;
  for (std::size_t k = 0; k < traj.size(); ++k) {
    if (!worlds.count(graph.nodes()[k].world)) continue;
    est.push_back(traj[k].second);
    gt.push_back(truth.poses.at(std::size_t(traj[k].first)));
  }
  if (est.size() < 3) return {};
  return ate(est, gt);
}

}  // namespace

SimulationRun run_simulation(const SimulationConfig& cfg) {
  SimulationRun run;
  run.data = generate(cfg.sim);
  const GroundTruth& truth = run.data.truth;

  std::mutex mu;
  MeasurementFn measure = [&](KeyframeId i, KeyframeId j) -> std::optional<Pose> {
    const LoopMeasurement m = loop_measurement(i, j, truth, cfg.sim);
    std::lock_guard lock(mu);
    run.loop_outliers[{i, j}] = m.outlier;
    return m.relative_pose;
  };
  auto truth_fn = [&](KeyframeId id) { return truth.true_matches(id); };
  run.pipeline = run_pipeline(run.data.stream, cfg.pipeline, measure, truth_fn);

  const auto& nodes = run.pipeline.graph.nodes();
  if (!nodes.empty()) {
    const auto worlds = root_set(run.pipeline.world_report, nodes.front().world);
    run.ate_odometry = trajectory_ate(run.pipeline.initial_trajectory, run.pipeline.graph, worlds, truth);
    run.ate_optimized = trajectory_ate(run.pipeline.trajectory, run.pipeline.graph, worlds, truth);
  }

  bool any_truth = false;
  for (const auto& r : run.pipeline.retrievals) any_truth = any_truth || !r.true_matches.empty();
  if (any_truth) run.pr = pr_curve(run.pipeline.retrievals);

  const auto& loops = run.pipeline.graph.loop_edges();
  const auto& sw = run.pipeline.solve_report.switches;
  int above = 0;
  for (std::size_t k = 0; k < loops.size(); ++k) {
    const double s = k < sw.size() ? sw[k] : loops[k].switch_value;
    const auto it = run.loop_outliers.find({loops[k].from, loops[k].to});
    const bool outlier = it != run.loop_outliers.end() && it->second;
    if (outlier) {
      ++run.switches.outliers;
      run.switches.max_outlier_switch = std::max(run.switches.max_outlier_switch, s);
    } else {
      ++run.switches.inliers;
      run.switches.min_inlier_switch = std::min(run.switches.min_inlier_switch, s);
      above += s > 0.9;
    }
  }
  if (run.switches.inliers > 0) run.switches.inlier_above_09 = double(above) / run.switches.inliers;
  return run;
}

nlohmann::json SimulationRun::metrics() const {
  return {{"keyframes", data.stream.size()},
          {"dropped_keyframes", pipeline.dropped_keyframes},
          {"loop_candidates", pipeline.candidates.size()},
          {"world_count", pipeline.world_report.at("world_count")},
          {"set_count", pipeline.world_report.at("sets").size()},
          {"ate_odometry", {{"translation", ate_odometry.rmse_translation}, {"rotation", ate_odometry.rmse_rotation}}},
          {"ate_optimized",
           {{"translation", ate_optimized.rmse_translation}, {"rotation", ate_optimized.rmse_rotation}}},
          {"pr_auc", pr.auc},
          {"switches",
           {{"inliers", switches.inliers},
            {"outliers", switches.outliers},
            {"max_outlier_switch", switches.max_outlier_switch},
            {"min_inlier_switch", switches.min_inlier_switch},
            {"inlier_fraction_above_0_9", switches.inlier_above_09}}}};
}

void write_simulation_reports(const std::filesystem::path& dir, const SimulationRun& run) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream os(dir / name);
    if (!os) throw std::runtime_error("cannot write " + (dir / name).string());
    return os;
  };
  {
    auto os = open("stream.jsonl");
    write_keyframes_jsonl(os, run.data.stream);
  }
  open("truth.json") << run.data.truth.to_json().dump() << '\n';
  open("world_report.json") << run.pipeline.world_report.dump(2) << '\n';

  nlohmann::json solve = solve_report_json(run.pipeline.solve_report, run.pipeline.graph);
  for (auto& e : solve.at("loop_edges")) {
    const auto it = run.loop_outliers.find({e.at("from").get<KeyframeId>(), e.at("to").get<KeyframeId>()});
    e["injected_outlier"] = it != run.loop_outliers.end() && it->second;
    e["flagged_outlier"] = e.at("switch").get<double>() < 0.5;
  }
  open("solve_report.json") << solve.dump(2) << '\n';

  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : run.pipeline.candidates) {
    cands.push_back({{"query", c.query_id},
                     {"match", c.match_id},
                     {"score", c.score},
                     {"kind", c.kind == LoopKind::kInterWorld ? "inter_world" : "intra_world"},
                     {"pose", pose_to_json(c.relative_pose)}});
  }
  open("candidates.json") << cands.dump(2) << '\n';
  open("metrics.json") << run.metrics().dump(2) << '\n';
  {
    auto os = open("pr.csv");
    write_pr_csv(os, run.pr);
  }
  {
    auto os = open("trajectory.csv");
    write_trajectory_csv(os, run.pipeline.trajectory);
  }
  {
    auto os = open("trajectory_odometry.csv");
    write_trajectory_csv(os, run.pipeline.initial_trajectory);
  }
  {
    std::vector<std::pair<KeyframeId, Pose>> gt;
    for (std::size_t f = 0; f < run.data.truth.poses.size(); ++f)
      if (run.data.truth.places[f] >= 0) gt.emplace_back(KeyframeId(f), run.data.truth.poses[f]);
    auto os = open("trajectory_truth.csv");
    write_trajectory_csv(os, gt);
  }
}

ToyExperimentConfig ToyExperimentConfig::from_json(const nlohmann::json& j) {
  ToyExperimentConfig c;
  if (j.contains("dataset")) c.dataset = ToyDatasetConfig::from_json(j.at("dataset"));
  if (j.contains("train")) c.train = ToyTrainConfig::from_json(j.at("train"));
  return c;
}

LossComparison compare_losses(const ToyExperimentConfig& cfg) {
  const ToyDataset data = generate_toy_dataset(cfg.dataset);
  LossComparison c;
  c.triplet = toy_train(data, cfg.train, LossKind::kTriplet);
  c.allpair = toy_train(data, cfg.train, LossKind::kAllPair);
  if (!c.triplet.log.empty() && !c.allpair.log.empty()) {
    c.val_pairs_dominates = c.allpair.log.back().val_pairs_pct >= c.triplet.log.back().val_pairs_pct;
  }
  c.zero_loss_dominates = c.allpair.zero_loss_batches <= c.triplet.zero_loss_batches;
  return c;
}

nlohmann::json LossComparison::summary() const {
  auto side = [](const TrainResult& r) {
    nlohmann::json j = {{"zero_loss_batches", r.zero_loss_batches},
                         {"zero_loss_tuples", r.cumulative_zero_loss},
                         {"diverged", r.diverged}};
    if (!r.log.empty()) {
      j["final_iter"] = r.log.back().iter;
      j["final_val_pairs_pct"] = r.log.back().val_pairs_pct;
      j["final_train_pairs_pct"] = r.log.back().train_pairs_pct;
      j["final_loss_rel"] = r.log.back().loss_rel;
    }
    return j;
  };
  return {{"triplet", side(triplet)},
          {"allpair", side(allpair)},
          {"allpair_val_pairs_ge_triplet", val_pairs_dominates},
          {"allpair_zero_loss_le_triplet", zero_loss_dominates}};
}

}  // namespace loopkit
