#include "loopkit/posegraph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <fmt/format.h>

#include "loopkit/worlds.hpp"

namespace loopkit {

Vec6 EdgeWeights::vector() const {
  Vec6 w;
  w << rotation, rotation, rotation, translation, translation, translation;
  return w;
}

Vec6 relative_pose_error(const Pose& xi, const Pose& xj, const Pose& measurement) {
  return se3_log(compose(inverse(measurement), compose(inverse(xi), xj))).stacked();
}

void PoseGraph::add_node(KeyframeId id, WorldId world, const Pose& odom_pose) {
  if (index_.count(id)) throw std::invalid_argument("PoseGraph: duplicate node " + std::to_string(id));
  index_[id] = nodes_.size();
  nodes_.push_back({id, world, odom_pose, odom_pose, false, true});
  world_set_.try_emplace(world, world);
}

const PoseNode& PoseGraph::node(KeyframeId id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw std::invalid_argument("PoseGraph: no node " + std::to_string(id));
  return nodes_[it->second];
}

void PoseGraph::add_odometry_edge(KeyframeId from, KeyframeId to, const Pose& measurement, EdgeWeights w) {
  if (!has_node(from) || !has_node(to)) {
    throw std::invalid_argument(fmt::format("PoseGraph: odometry edge {}->{} references a missing node", from, to));
  }
  odometry_.push_back({from, to, measurement, w});
}

void PoseGraph::add_loop_edge(KeyframeId from, KeyframeId to, const Pose& measurement, EdgeWeights w,
                              double switch_prior) {
  if (!has_node(from) || !has_node(to)) {
    throw std::invalid_argument(fmt::format("PoseGraph: loop edge {}->{} references a missing node", from, to));
  }
  loops_.push_back({from, to, measurement, w, 1.0, switch_prior});
}

void PoseGraph::fix_node(KeyframeId id, bool fixed) { nodes_[index_.at(id)].fixed = fixed; }
void PoseGraph::set_pose(KeyframeId id, const Pose& p) { nodes_[index_.at(id)].pose = p; }

void PoseGraph::initialize(const WorldManager& worlds) {
  std::map<WorldId, std::optional<Pose>> to_root;
  std::map<WorldId, WorldId> root;
  for (const auto& n : nodes_) {
    if (to_root.count(n.world)) continue;
    const WorldId r = worlds.set_root(n.world);
    root[n.world] = r;
    to_root[n.world] = worlds.relative_pose_between_worlds(r, n.world);
  }
  initialize(to_root, root);
}

void PoseGraph::initialize(const std::map<WorldId, std::optional<Pose>>& world_to_root,
                           const std::map<WorldId, WorldId>& world_root) {
  std::map<WorldId, bool> anchored;
  for (auto& n : nodes_) {
    const auto rt = world_root.find(n.world);
    const auto tf = world_to_root.find(n.world);
    const bool known = rt != world_root.end() && tf != world_to_root.end() && tf->second.has_value();
    n.resolved = known;
    // Unresolved worlds form their own set.
    const WorldId set = known ? rt->second : n.world;
    world_set_[n.world] = set;
    n.pose = known ? compose(*tf->second, n.odom_pose) : n.odom_pose;
    // Nodes are stored in id order, so the first seen per set is the anchor.
    n.fixed = !anchored[set];
    anchored[set] = true;
  }
}

namespace {

struct Problem {
  std::vector<Pose> poses;
  std::vector<double> switches;
  std::vector<int> var_of_node;  // first column of the node's 6 twist vars, -1 if fixed
  std::vector<int> var_of_switch;
  int num_vars = 0;
};

struct Block {
  int i, j;            // node indices
  const Pose* z;
  Vec6 w;
  int loop = -1;       // loop index for switched edges
};

}  // namespace

double PoseGraph::total_residual(bool use_switches) const {
  double cost = 0.0;
  auto ok = [&](const PoseNode& a, const PoseNode& b) {
    return world_set_.at(a.world) == world_set_.at(b.world);
  };
  for (const auto& e : odometry_) {
    const auto& a = node(e.from);
    const auto& b = node(e.to);
    if (!ok(a, b)) continue;
    cost += (e.weights.vector().cwiseProduct(relative_pose_error(a.pose, b.pose, e.measurement))).squaredNorm();
  }
  for (const auto& e : loops_) {
    const auto& a = node(e.from);
    const auto& b = node(e.to);
    if (!ok(a, b)) continue;
    const double s = use_switches ? e.switch_value : 1.0;
    cost += s * s * (e.weights.vector().cwiseProduct(relative_pose_error(a.pose, b.pose, e.measurement))).squaredNorm();
    if (use_switches) cost += std::pow(e.switch_prior * (1.0 - s), 2);
  }
  return cost;
}

void PoseGraph::apply(const SolveResult& result) {
  for (const auto& [id, p] : result.poses) nodes_[index_.at(id)].pose = p;
  for (std::size_t k = 0; k < loops_.size() && k < result.report.switches.size(); ++k) {
    loops_[k].switch_value = result.report.switches[k];
  }
}

SolveResult solve(const PoseGraph& g, const SolveConfig& cfg) {
  const auto& nodes = g.nodes_;
  Problem p;
  p.poses.reserve(nodes.size());
  for (const auto& n : nodes) {
    p.var_of_node.push_back(n.fixed ? -1 : p.num_vars);
    if (!n.fixed) p.num_vars += 6;
    p.poses.push_back(n.pose);
  }

  auto same_set = [&](std::size_t a, std::size_t b) {
    return g.world_set_.at(nodes[a].world) == g.world_set_.at(nodes[b].world);
  };

  std::vector<Block> blocks;
  for (const auto& e : g.odometry_) {
    const int i = int(g.index_.at(e.from)), j = int(g.index_.at(e.to));
    if (same_set(i, j)) blocks.push_back({i, j, &e.measurement, e.weights.vector(), -1});
  }
  for (std::size_t k = 0; k < g.loops_.size(); ++k) {
    const auto& e = g.loops_[k];
    p.switches.push_back(e.switch_value);
    const int i = int(g.index_.at(e.from)), j = int(g.index_.at(e.to));
    const bool active = same_set(i, j);
    if (cfg.use_switches && active) {
      p.var_of_switch.push_back(p.num_vars++);
    } else {
      p.var_of_switch.push_back(-1);
    }
    if (active) blocks.push_back({i, j, &e.measurement, e.weights.vector(), int(k)});
  }

  auto switch_of = [&](const Problem& st, const Block& b) {
    return (b.loop >= 0 && cfg.use_switches) ? st.switches[b.loop] : 1.0;
  };
  auto block_residual = [&](const Block& b, const Pose& xi, const Pose& xj, double s) -> Vec6 {
    return s * b.w.cwiseProduct(relative_pose_error(xi, xj, *b.z));
  };

  auto cost_of = [&](const Problem& st) {
    double c = 0.0;
    for (const auto& b : blocks) c += block_residual(b, st.poses[b.i], st.poses[b.j], switch_of(st, b)).squaredNorm();
    if (cfg.use_switches) {
      for (std::size_t k = 0; k < g.loops_.size(); ++k)
        if (p.var_of_switch[k] >= 0) c += std::pow(g.loops_[k].switch_prior * (1.0 - st.switches[k]), 2);
    }
    return c;
  };

  SolveResult out;
  out.report.initial_residual = cost_of(p);
  double cost = out.report.initial_residual;
  double mu = -1.0;
  double nu = 2.0;
  const double h = cfg.fd_step;

  for (int iter = 0; iter < cfg.max_iterations && p.num_vars > 0; ++iter) {
    if (cost < 1e-24) {
      out.report.converged = true;
      break;
    }
    // Assemble the Jacobian by central differences, block by block.
    std::vector<Eigen::Triplet<double>> jt;
    std::vector<double> r;
    int row = 0;
    for (const auto& b : blocks) {
      const double s = switch_of(p, b);
      const Vec6 r0 = block_residual(b, p.poses[b.i], p.poses[b.j], s);
      for (int side = 0; side < 2; ++side) {
        const int node = side == 0 ? b.i : b.j;
        const int col0 = p.var_of_node[node];
        if (col0 < 0) continue;
        for (int d = 0; d < 6; ++d) {
          Vec6 delta = Vec6::Zero();
          delta(d) = h;
          const Pose plus = compose(p.poses[node], se3_exp(Twist::from_stacked(delta)));
          const Pose minus = compose(p.poses[node], se3_exp(Twist::from_stacked(-delta)));
          const Vec6 rp = side == 0 ? block_residual(b, plus, p.poses[b.j], s) : block_residual(b, p.poses[b.i], plus, s);
          const Vec6 rm = side == 0 ? block_residual(b, minus, p.poses[b.j], s) : block_residual(b, p.poses[b.i], minus, s);
          const Vec6 col = (rp - rm) / (2.0 * h);
          for (int k = 0; k < 6; ++k)
            if (col(k) != 0.0) jt.emplace_back(row + k, col0 + d, col(k));
        }
      }
      if (b.loop >= 0 && p.var_of_switch[b.loop] >= 0) {
        // Residual is linear in the switch.
        const Vec6 col = b.w.cwiseProduct(relative_pose_error(p.poses[b.i], p.poses[b.j], *b.z));
        for (int k = 0; k < 6; ++k)
          if (col(k) != 0.0) jt.emplace_back(row + k, p.var_of_switch[b.loop], col(k));
      }
      for (int k = 0; k < 6; ++k) r.push_back(r0(k));
      row += 6;
    }
    if (cfg.use_switches) {
      for (std::size_t k = 0; k < g.loops_.size(); ++k) {
        if (p.var_of_switch[k] < 0) continue;
        const double lambda = g.loops_[k].switch_prior;
        jt.emplace_back(row, p.var_of_switch[k], -lambda);
        r.push_back(lambda * (1.0 - p.switches[k]));
        ++row;
      }
    }

    Eigen::SparseMatrix<double> J(row, p.num_vars);
    J.setFromTriplets(jt.begin(), jt.end());
    const Eigen::Map<const Eigen::VectorXd> rv(r.data(), Eigen::Index(r.size()));
    const Eigen::SparseMatrix<double> H = J.transpose() * J;
    const Eigen::VectorXd grad = J.transpose() * rv;
    if (grad.lpNorm<Eigen::Infinity>() < 1e-14) {
      out.report.converged = true;
      break;
    }
    if (mu < 0) {
      double max_diag = 0.0;
      for (int k = 0; k < H.outerSize(); ++k) max_diag = std::max(max_diag, H.coeff(k, k));
      mu = cfg.initial_damping * std::max(max_diag, 1e-12);
    }

    bool accepted = false;
    bool small_step = false;
    for (int attempt = 0; attempt < 30 && !accepted; ++attempt) {
      Eigen::SparseMatrix<double> A = H;
      for (int k = 0; k < p.num_vars; ++k) A.coeffRef(k, k) += mu;
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(A);
      if (ldlt.info() != Eigen::Success) {
        mu *= nu;
        nu *= 2.0;
        continue;
      }
      const Eigen::VectorXd step = ldlt.solve(-grad);
      Problem trial = p;
      for (std::size_t n = 0; n < nodes.size(); ++n) {
        const int c0 = p.var_of_node[n];
        if (c0 < 0) continue;
        trial.poses[n] = compose(p.poses[n], se3_exp(Twist::from_stacked(step.segment<6>(c0))));
      }
      for (std::size_t k = 0; k < p.switches.size(); ++k) {
        const int c = p.var_of_switch[k];
        if (c >= 0) trial.switches[k] = std::clamp(p.switches[k] + step(c), 0.0, 1.0);
      }
      double new_cost;
      try {
        new_cost = cost_of(trial);
      } catch (const std::domain_error&) {
        new_cost = std::numeric_limits<double>::infinity();
      }
      const double predicted = -step.dot(grad) - 0.5 * step.dot(H * step);
      const double rho = predicted > 0 ? (cost - new_cost) / (2.0 * predicted) : -1.0;
      if (new_cost < cost) {
        accepted = true;
        small_step = step.norm() < cfg.tolerance * (1.0 + std::sqrt(double(p.num_vars)));
        const double rel = (cost - new_cost) / std::max(cost, 1e-300);
        p = std::move(trial);
        cost = new_cost;
        mu *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * std::clamp(rho, 0.0, 1.0) - 1.0, 3));
        nu = 2.0;
        if (rel < cfg.tolerance) small_step = true;
      } else {
        mu *= nu;
        nu *= 2.0;
      }
    }
    out.report.iterations = iter + 1;
    if (!accepted) {
      // No descent direction left at this damping: local minimum.
      out.report.converged = true;
      break;
    }
    out.report.residual_history.push_back(cost);
    if (small_step) {
      out.report.converged = true;
      break;
    }
  }
  if (p.num_vars == 0) out.report.converged = true;

  out.report.final_residual = cost;
  out.report.switches = p.switches;
  for (std::size_t n = 0; n < nodes.size(); ++n) out.poses[nodes[n].id] = p.poses[n];
  return out;
}

SolveReport optimize(PoseGraph& graph, const SolveConfig& cfg) {
  SolveResult r = solve(graph, cfg);
  graph.apply(r);
  return r.report;
}

void PoseGraph::write_g2o(std::ostream& os) const {
  auto pose_str = [](const Pose& p) {
    return fmt::format("{:.12g} {:.12g} {:.12g} {:.12g} {:.12g} {:.12g} {:.12g}", p.translation.x(), p.translation.y(),
                       p.translation.z(), p.rotation.x(), p.rotation.y(), p.rotation.z(), p.rotation.w());
  };
  auto info_str = [](const EdgeWeights& w) {
    // Upper triangle of the 6x6 information matrix in g2o order (translation first).
    const double t = w.translation * w.translation, r = w.rotation * w.rotation;
    const double diag[6] = {t, t, t, r, r, r};
    std::string s;
    for (int a = 0; a < 6; ++a)
      for (int b = a; b < 6; ++b) s += fmt::format(" {:.12g}", a == b ? diag[a] : 0.0);
    return s;
  };
  for (const auto& n : nodes_) {
    os << "VERTEX_SE3:QUAT " << n.id << ' ' << pose_str(n.pose) << '\n';
    if (n.fixed) os << "FIX " << n.id << '\n';
  }
  for (const auto& e : odometry_) {
    os << "EDGE_SE3:QUAT " << e.from << ' ' << e.to << ' ' << pose_str(e.measurement) << info_str(e.weights) << '\n';
  }
  for (std::size_t k = 0; k < loops_.size(); ++k) {
    const auto& e = loops_[k];
    os << "EDGE_SE3:QUAT " << e.from << ' ' << e.to << ' ' << pose_str(e.measurement) << info_str(e.weights) << '\n';
    os << fmt::format("SWITCH {} {} {} {:.12g} {:.12g}\n", k, e.from, e.to, e.switch_value, e.switch_prior);
  }
}

AteResult ate(std::span<const Pose> est, std::span<const Pose> gt) {
  if (est.size() != gt.size()) throw std::invalid_argument("ate: trajectories differ in length");
  AteResult r;
  const auto n = Eigen::Index(est.size());
  if (n == 0) return r;
  Eigen::Matrix3Xd src(3, n), dst(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    src.col(i) = est[i].translation;
    dst.col(i) = gt[i].translation;
  }
  Pose align;
  if (n >= 3) {
    const Eigen::Matrix4d T = Eigen::umeyama(src, dst, false);
    align = Pose(Quat(Eigen::Matrix3d(T.topLeftCorner<3, 3>())), T.topRightCorner<3, 1>());
  } else {
    align = Pose::from_translation((dst - src).rowwise().mean());
  }
  double st = 0.0, sr = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Pose e = compose(align, est[i]);
    st += (e.translation - gt[i].translation).squaredNorm();
    const double a = pose_delta(e, gt[i]).angle;
    sr += a * a;
  }
  r.rmse_translation = std::sqrt(st / double(n));
  r.rmse_rotation = std::sqrt(sr / double(n));
  return r;
}

}  // namespace loopkit
