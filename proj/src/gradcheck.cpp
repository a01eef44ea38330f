#include <cmath>
#include <random>

#include "loopkit/sim.hpp"
#include "loopkit/train.hpp"

namespace loopkit {

namespace {

double relative_error(const VectorXd& analytic, const VectorXd& numeric) {
  const double scale = std::max({analytic.norm(), numeric.norm(), 1e-8});
  return (analytic - numeric).norm() / scale;
}

// Smallest distance of any hinge argument (and, for the triplet loss, the gap
// between the two smallest positive dots) from a kink.
double kink_distance(const TrainingTuple& t, const LossConfig& cfg) {
  const VectorXd pd = t.positive_dots();
  const VectorXd nd = t.negative_dots();
  double d = INFINITY;
  if (cfg.kind == LossKind::kTriplet) {
    const double worst = pd.minCoeff();
    for (Eigen::Index j = 0; j < nd.size(); ++j) d = std::min(d, std::abs(nd(j) - worst + cfg.margin));
    for (Eigen::Index i = 0; i < pd.size(); ++i)
      if (pd(i) != worst) d = std::min(d, pd(i) - worst);
    int ties = 0;
    for (Eigen::Index i = 0; i < pd.size(); ++i) ties += pd(i) == worst;
    if (ties > 1) d = 0.0;
  } else {
    for (Eigen::Index i = 0; i < pd.size(); ++i)
      for (Eigen::Index j = 0; j < nd.size(); ++j) d = std::min(d, std::abs(nd(j) - pd(i) + cfg.margin));
  }
  return d;
}

// Random tuple whose query correlates with its positives, so both active and
// inactive hinges occur.
TrainingTuple random_tuple(int dim, int m, int n, std::mt19937_64& rng) {
  TrainingTuple t;
  t.query = random_unit_vector(dim, rng);
  std::uniform_real_distribution<double> mix(0.0, 1.5);
  for (int i = 0; i < m; ++i) t.positives.push_back((t.query + mix(rng) * random_unit_vector(dim, rng)).normalized());
  for (int j = 0; j < n; ++j) t.negatives.push_back((0.4 * t.query + mix(rng) * random_unit_vector(dim, rng)).normalized());
  return t;
}

GradcheckResult check_descriptor_level(const GradcheckConfig& cfg, LossKind kind) {
  GradcheckResult res;
  res.name = std::string(loss_name(kind)) + "/descriptor";
  std::mt19937_64 rng(cfg.seed + (kind == LossKind::kTriplet ? 11 : 13));
  const LossConfig loss{cfg.margin, kind};
  while (res.checked < cfg.tuples) {
    TrainingTuple t = random_tuple(8, 3, 4, rng);
    if (kink_distance(t, loss) < cfg.kink_margin) continue;
    const TupleGradient g = loss_gradient(t, loss);

    // Flatten (query, positives, negatives) for the numeric check.
    std::vector<VectorXd*> members{&t.query};
    std::vector<const VectorXd*> grads{&g.query};
    for (std::size_t i = 0; i < t.positives.size(); ++i) {
      members.push_back(&t.positives[i]);
      grads.push_back(&g.positives[i]);
    }
    for (std::size_t j = 0; j < t.negatives.size(); ++j) {
      members.push_back(&t.negatives[j]);
      grads.push_back(&g.negatives[j]);
    }
    const Eigen::Index dim = t.query.size();
    VectorXd analytic(Eigen::Index(members.size()) * dim), numeric(analytic.size());
    for (std::size_t k = 0; k < members.size(); ++k) {
      analytic.segment(Eigen::Index(k) * dim, dim) = *grads[k];
      for (Eigen::Index d = 0; d < dim; ++d) {
        const double orig = (*members[k])(d);
        (*members[k])(d) = orig + cfg.step;
        const double up = tuple_loss(t, loss);
        (*members[k])(d) = orig - cfg.step;
        const double down = tuple_loss(t, loss);
        (*members[k])(d) = orig;
        numeric(Eigen::Index(k) * dim + d) = (up - down) / (2.0 * cfg.step);
      }
    }
    if (cfg.flip_sign) analytic = -analytic;
    res.max_relative_error = std::max(res.max_relative_error, relative_error(analytic, numeric));
    ++res.checked;
  }
  res.passed = res.max_relative_error <= cfg.tolerance;
  return res;
}

GradcheckResult check_netvlad_level(const GradcheckConfig& cfg, LossKind kind) {
  GradcheckResult res;
  res.name = std::string(loss_name(kind)) + "/netvlad";
  std::mt19937_64 rng(cfg.seed + (kind == LossKind::kTriplet ? 21 : 23));
  std::normal_distribution<double> normal(0.0, 1.0);
  const LossConfig loss{cfg.margin, kind};
  const int dim = 6, clusters = 3, m = 3, n = 3;

  while (res.checked < cfg.tuples) {
    ToyTrainConfig tc;
    tc.clusters = clusters;
    tc.alpha = 2.0;
    tc.seed = rng();
    tc.squash_channels = (res.checked % 2 == 0) ? 0 : 4;
    DescriptorModel model = init_model(dim, tc);
    // Decouple w, b from the centers as training would.
    VectorXd theta = pack_parameters(model);
    for (Eigen::Index k = 0; k < theta.size(); ++k) theta(k) += 0.1 * normal(rng);
    unpack_parameters(theta, model);

    const Eigen::VectorXd anchor = random_unit_vector(dim, rng);
    auto view = [&](double shared) {
      FeatureMap f(3, 2, dim);
      for (int u = 0; u < f.pixels(); ++u)
        for (int d = 0; d < dim; ++d) f.values(d, u) = shared * anchor(d) + normal(rng);
      return f;
    };
    FeatureTuple ft;
    ft.query = view(1.0);
    for (int i = 0; i < m; ++i) ft.positives.push_back(view(1.0));
    for (int j = 0; j < n; ++j) ft.negatives.push_back(view(0.0));
    const std::vector<FeatureTuple> batch{ft};

    if (kink_distance(describe_tuple(model, ft), loss) < cfg.kink_margin) continue;

    BatchObjective obj = batch_objective(model, batch, loss, 0.0);
    VectorXd analytic = obj.gradient;
    VectorXd numeric(theta.size());
    DescriptorModel probe = model;
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
      VectorXd tp = theta, tm = theta;
      tp(k) += cfg.step;
      tm(k) -= cfg.step;
      unpack_parameters(tp, probe);
      const double up = batch_objective(probe, batch, loss, 0.0).fit_loss;
      unpack_parameters(tm, probe);
      const double down = batch_objective(probe, batch, loss, 0.0).fit_loss;
      numeric(k) = (up - down) / (2.0 * cfg.step);
    }
    if (cfg.flip_sign) analytic = -analytic;
    res.max_relative_error = std::max(res.max_relative_error, relative_error(analytic, numeric));
    ++res.checked;
  }
  res.passed = res.max_relative_error <= cfg.tolerance;
  return res;
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck(const GradcheckConfig& cfg) {
  return {check_descriptor_level(cfg, LossKind::kTriplet), check_descriptor_level(cfg, LossKind::kAllPair),
          check_netvlad_level(cfg, LossKind::kTriplet), check_netvlad_level(cfg, LossKind::kAllPair)};
}

}  // namespace loopkit
