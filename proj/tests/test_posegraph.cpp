#include <doctest.h>

#include <random>
#include <sstream>

#include "helpers.hpp"
#include "loopkit/posegraph.hpp"
#include "loopkit/worlds.hpp"

using namespace loopkit;

namespace {

Pose ring_pose(int i, int n, double radius = 10.0) {
  const double a = 2 * M_PI * i / n;
  return {Quat(Eigen::AngleAxisd(a + M_PI / 2, Vec3::UnitZ())), Vec3(radius * std::cos(a), radius * std::sin(a), 0)};
}

Pose noise(std::mt19937_64& rng, double st, double sr) {
  std::normal_distribution<double> n(0.0, 1.0);
  Twist t;
  t.rotational = Vec3(0, 0, sr * n(rng));
  t.translational = Vec3(st * n(rng), st * n(rng), 0);
  return se3_exp(t);
}

struct Ring {
  std::vector<Pose> truth;
  PoseGraph graph;
};

// Closed circle of n nodes walked twice, odometry drifting, loops between laps.
Ring make_ring(int n, double odom_sigma, std::mt19937_64& rng, int loops, int stride) {
  Ring r;
  Pose odom;
  for (int i = 0; i < 2 * n; ++i) {
    const Pose t = ring_pose(i, n);
    if (i > 0) {
      const Pose rel = compose(inverse(r.truth.back()), t);
      odom = compose(odom, compose(rel, noise(rng, odom_sigma, odom_sigma * 0.2)));
    } else {
      odom = t;
    }
    r.truth.push_back(t);
    r.graph.add_node(i, 0, odom);
    if (i > 0) r.graph.add_odometry_edge(i - 1, i, compose(inverse(r.graph.node(i - 1).odom_pose), odom));
  }
  for (int k = 0; k < loops; ++k) {
    const int j = (k * stride) % n, i = j + n;
    r.graph.add_loop_edge(i, j, compose(inverse(r.truth[i]), r.truth[j]));
  }
  r.graph.fix_node(0);
  return r;
}

std::vector<Pose> poses_of(const PoseGraph& g) {
  std::vector<Pose> out;
  for (const auto& n : g.nodes()) out.push_back(n.pose);
  return out;
}

}  // namespace

TEST_CASE("two nodes at ground truth have zero residual") {
  PoseGraph g;
  const Pose a = ring_pose(0, 8), b = ring_pose(1, 8);
  g.add_node(0, 0, a);
  g.add_node(1, 0, b);
  g.add_odometry_edge(0, 1, compose(inverse(a), b));
  CHECK(g.total_residual() < 1e-20);
  CHECK_THROWS_AS(g.add_odometry_edge(0, 5, a), std::invalid_argument);
  CHECK_THROWS_AS(g.add_loop_edge(9, 1, a), std::invalid_argument);
  g.add_loop_edge(1, 0, compose(inverse(b), a));
  CHECK(g.loop_edges().front().switch_value == 1.0);
}

TEST_CASE("relative pose error is zero for a consistent triple") {
  std::mt19937_64 rng(1);
  const Pose xi = testing::random_pose(rng, 5, 1.0), xj = testing::random_pose(rng, 5, 1.0);
  CHECK(relative_pose_error(xi, xj, compose(inverse(xi), xj)).norm() < 1e-9);
}

TEST_CASE("graph at ground truth does not move") {
  std::mt19937_64 rng(2);
  Ring r = make_ring(20, 0.0, rng, 10, 2);
  const auto before = poses_of(r.graph);
  optimize(r.graph);
  const auto after = poses_of(r.graph);
  for (std::size_t i = 0; i < before.size(); ++i) {
    const PoseDelta d = pose_delta(before[i], after[i]);
    CHECK(d.distance < 1e-8);
    CHECK(d.angle < 1e-8);
  }
}

TEST_CASE("consistent graph from a perturbed start converges to zero residual") {
  std::mt19937_64 rng(3);
  Ring r = make_ring(20, 0.0, rng, 10, 2);
  for (int i = 1; i < 40; ++i) r.graph.set_pose(i, compose(r.truth[i], noise(rng, 0.05, 0.02)));
  const SolveReport rep = optimize(r.graph);
  CHECK(rep.converged);
  CHECK(rep.final_residual < 1e-12);
  for (double s : rep.switches) CHECK(s > 0.999);
  for (std::size_t k = 1; k < rep.residual_history.size(); ++k)
    CHECK(rep.residual_history[k] <= rep.residual_history[k - 1] + 1e-15);
}

TEST_CASE("switches off equals switches on for an outlier-free problem") {
  std::mt19937_64 rng(4);
  Ring r = make_ring(16, 0.0, rng, 8, 2);
  for (int i = 1; i < 32; ++i) r.graph.set_pose(i, compose(r.truth[i], noise(rng, 0.1, 0.03)));
  SolveConfig on, off;
  off.use_switches = false;
  const SolveResult a = solve(r.graph, on), b = solve(r.graph, off);
  for (const auto& [id, p] : a.poses) {
    const PoseDelta d = pose_delta(p, b.poses.at(id));
    CHECK(d.distance < 1e-6);
    CHECK(d.angle < 1e-6);
  }
}

TEST_CASE("one wrong loop among ten correct is switched off") {
  std::mt19937_64 rng(5);
  Ring r = make_ring(30, 0.02, rng, 10, 3);
  // Loop between the laps with a 10 m error.
  r.graph.add_loop_edge(45, 20, compose(compose(inverse(r.truth[45]), r.truth[20]), Pose::from_translation({10, 0, 0})));
  const SolveReport rep = optimize(r.graph);
  REQUIRE(rep.switches.size() == 11);
  CHECK(rep.switches.back() < 0.5);
  for (int k = 0; k < 10; ++k) CHECK(rep.switches[k] > 0.9);
}

TEST_CASE("drifted odometry with correct loops improves ATE") {
  std::mt19937_64 rng(6);
  Ring r = make_ring(40, 0.05, rng, 20, 2);
  const AteResult before = ate(poses_of(r.graph), r.truth);
  optimize(r.graph);
  const AteResult after = ate(poses_of(r.graph), r.truth);
  CHECK(after.rmse_translation < before.rmse_translation);
  CHECK(after.rmse_rotation < before.rmse_rotation);
}

TEST_CASE("ATE") {
  std::mt19937_64 rng(7);
  std::vector<Pose> gt;
  for (int i = 0; i < 50; ++i) gt.push_back(ring_pose(i, 50));
  CHECK(ate(gt, gt).rmse_translation < 1e-12);

  const Pose offset = testing::random_pose(rng);
  std::vector<Pose> shifted;
  for (const auto& p : gt) shifted.push_back(compose(offset, p));
  const AteResult a = ate(shifted, gt);
  CHECK(a.rmse_translation < 1e-9);
  CHECK(a.rmse_rotation < 1e-9);

  // Isotropic position noise sigma per axis gives rmse ~ sigma * sqrt(3).
  std::normal_distribution<double> n(0.0, 0.1);
  std::vector<Pose> big, noisy;
  for (int i = 0; i < 5000; ++i) {
    const Pose p = testing::random_pose(rng, 20.0);
    big.push_back(p);
    noisy.push_back({p.rotation, p.translation + Vec3(n(rng), n(rng), n(rng))});
  }
  CHECK(ate(noisy, big).rmse_translation == doctest::Approx(0.1 * std::sqrt(3.0)).epsilon(0.05));
}

TEST_CASE("initialize from world transforms") {
  std::mt19937_64 rng(8);
  const Pose off01 = testing::random_pose(rng), off21 = testing::random_pose(rng);
  PoseGraph g;
  const Pose a = testing::random_pose(rng), b = testing::random_pose(rng), c = testing::random_pose(rng);
  g.add_node(0, 0, a);
  g.add_node(1, 1, b);
  g.add_node(2, 2, c);
  g.add_node(3, 3, a);
  // Worlds 0-2 and 1-2 linked; world 1 reaches 0 only through 2.
  WorldManager wm;
  const Pose pose02 = compose(off01, inverse(off21));  // ^0T_2
  wm.register_inter_world(0, Pose::identity(), 2, Pose::identity(), pose02);
  wm.register_inter_world(1, Pose::identity(), 2, Pose::identity(), inverse(off21));
  g.initialize(wm);
  CHECK(approx_equal(g.node(0).pose, a, 1e-12));
  CHECK(approx_equal(g.node(1).pose, compose(off01, b), 1e-9));
  CHECK(approx_equal(g.node(2).pose, compose(pose02, c), 1e-9));
  CHECK(g.node(0).fixed);
  CHECK(!g.node(1).fixed);
  // World 3 has no link: its own set, own first node fixed, odometry pose kept.
  CHECK(approx_equal(g.node(3).pose, a, 0.0));
  CHECK(g.node(3).fixed);
}

TEST_CASE("single world initialization equals odometry") {
  std::mt19937_64 rng(9);
  PoseGraph g;
  std::vector<Pose> odo;
  for (int i = 0; i < 5; ++i) {
    odo.push_back(testing::random_pose(rng));
    g.add_node(i, 0, odo.back());
  }
  g.initialize(WorldManager{});
  for (int i = 0; i < 5; ++i) CHECK(approx_equal(g.node(i).pose, odo[i], 0.0));
}

TEST_CASE("g2o export") {
  std::mt19937_64 rng(10);
  Ring r = make_ring(5, 0.0, rng, 2, 1);
  std::ostringstream os;
  r.graph.write_g2o(os);
  const std::string s = os.str();
  CHECK(s.find("VERTEX_SE3:QUAT 0 ") != std::string::npos);
  CHECK(s.find("EDGE_SE3:QUAT 0 1 ") != std::string::npos);
  CHECK(s.find("FIX 0") != std::string::npos);
}
