#include <doctest.h>

#include <set>
#include <sstream>

#include "loopkit/experiment.hpp"

using namespace loopkit;

namespace {

SimulationConfig chained_kidnaps(bool noisy) {
  // Three worlds: w0 on places 0..99, w1 on 150..229, w2 revisits both.
  SimulationConfig c;
  c.sim.seed = 3;
  c.sim.place_count = 300;
  c.sim.frames = 530;
  c.sim.kidnaps = {{100, 150, 10}, {190, 40, 10}};
  if (noisy) {
    c.sim.odom_sigma_trans = 0.01;
    c.sim.odom_sigma_rot = 0.002;
    c.sim.descriptor_sigma = 0.2;
    c.sim.loop_sigma_trans = 0.01;
    c.sim.loop_sigma_rot = 0.002;
  }
  c.pipeline.placedb.exclusion_window = c.sim.exclusion_window;
  return c;
}

std::set<std::pair<KeyframeId, KeyframeId>> candidate_set(const PipelineResult& r) {
  std::set<std::pair<KeyframeId, KeyframeId>> s;
  for (const auto& c : r.candidates) s.emplace(c.query_id, c.match_id);
  return s;
}

}  // namespace

TEST_CASE("no revisits and no kidnaps leaves odometry untouched") {
  SimulationConfig c;
  c.sim.place_count = 500;
  c.sim.frames = 300;
  c.sim.odom_sigma_trans = 0.01;
  const SimulationRun run = run_simulation(c);
  CHECK(run.pipeline.candidates.empty());
  CHECK(run.pipeline.graph.loop_edges().empty());
  CHECK(run.pipeline.world_report.at("world_count") == 1);
  REQUIRE(run.pipeline.trajectory.size() == 300);
  for (std::size_t i = 0; i < 300; ++i)
    CHECK(approx_equal(run.pipeline.trajectory[i].second, run.data.stream[i].odom_pose, 1e-9));
}

TEST_CASE("chained kidnaps merge through the middle world") {
  const SimulationRun run = run_simulation(chained_kidnaps(false));
  const auto& report = run.pipeline.world_report;
  CHECK(report.at("world_count") == 3);
  REQUIRE(report.at("sets").size() == 1);
  // Only w2 ever closes loops with the others.
  for (const auto& e : report.at("edges")) CHECK(e.at("from") == 2);
  // Rebuild the world graph from the report to query w0 <-> w1.
  WorldGraph g;
  for (const auto& e : report.at("edges")) g.add_edge(e.at("from"), e.at("to"), pose_from_json(e.at("pose")));
  REQUIRE(g.path_pose(0, 1));
  CHECK(approx_equal(*g.path_pose(0, 1), run.data.truth.world_offset(0, 1), 1e-6));
  CHECK(run.ate_optimized.rmse_translation < 1e-6);
}

TEST_CASE("chained kidnaps with noise: optimization beats odometry") {
  const SimulationRun run = run_simulation(chained_kidnaps(true));
  CHECK(run.pipeline.world_report.at("sets").size() == 1);
  CHECK(run.ate_optimized.rmse_translation < run.ate_odometry.rmse_translation);
}

TEST_CASE("concurrent mode accepts the same candidates") {
  SimulationConfig c = chained_kidnaps(true);
  const SimulationRun seq = run_simulation(c);
  for (std::size_t cap : {1u, 4u, 64u}) {
    c.pipeline.concurrent = true;
    c.pipeline.queue_capacity = cap;
    const SimulationRun par = run_simulation(c);
    CHECK(candidate_set(par.pipeline) == candidate_set(seq.pipeline));
    CHECK(par.pipeline.world_report == seq.pipeline.world_report);
    CHECK(par.metrics().dump() == seq.metrics().dump());
  }
}

TEST_CASE("simulation is deterministic") {
  const SimulationConfig c = chained_kidnaps(true);
  const SimulationRun a = run_simulation(c), b = run_simulation(c);
  CHECK(a.metrics().dump() == b.metrics().dump());
  std::ostringstream ta, tb;
  write_trajectory_csv(ta, a.pipeline.trajectory);
  write_trajectory_csv(tb, b.pipeline.trajectory);
  CHECK(ta.str() == tb.str());
  CHECK(ta.str().rfind("frame,x,y,z,qw,qx,qy,qz\n", 0) == 0);
}

TEST_CASE("blind keyframes never reach the graph") {
  const SimulationRun run = run_simulation(chained_kidnaps(false));
  for (const auto& n : run.pipeline.graph.nodes()) CHECK(run.data.truth.places[std::size_t(n.id)] >= 0);
  // 10 blind frames plus one dwell frame per kidnap.
  CHECK(run.pipeline.dropped_keyframes == 2 * 11);
}

TEST_CASE("simulation config parsing") {
  const auto c = SimulationConfig::from_json(
      {{"sim", {{"frames", 10}, {"exclusion_window", 20}}}, {"pipeline", {{"concurrent", true}, {"switch_prior", 2.0}}}});
  CHECK(c.sim.frames == 10);
  CHECK(c.pipeline.concurrent);
  CHECK(c.pipeline.switch_prior == 2.0);
  CHECK(c.pipeline.placedb.exclusion_window == 20);
}
