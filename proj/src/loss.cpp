#include "loopkit/loss.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace loopkit {

const char* loss_name(LossKind kind) { return kind == LossKind::kTriplet ? "triplet" : "allpair"; }

LossKind parse_loss_kind(const std::string& s) {
  if (s == "triplet") return LossKind::kTriplet;
  if (s == "allpair") return LossKind::kAllPair;
  throw std::invalid_argument("unknown loss kind: " + s);
}

void TrainingTuple::validate(double tol) const {
  if (positives.empty() || negatives.empty()) {
    throw std::invalid_argument("TrainingTuple: need at least one positive and one negative");
  }
  auto check = [&](const VectorXd& v, const char* what) {
    if (v.size() != query.size()) throw std::invalid_argument(std::string("TrainingTuple: ") + what + " dimension mismatch");
    if (std::abs(v.norm() - 1.0) > tol) throw std::invalid_argument(std::string("TrainingTuple: ") + what + " is not unit norm");
  };
  check(query, "query");
  for (const auto& p : positives) check(p, "positive");
  for (const auto& n : negatives) check(n, "negative");
}

VectorXd TrainingTuple::positive_dots() const {
  VectorXd d(positives.size());
  for (std::size_t i = 0; i < positives.size(); ++i) d(i) = query.dot(positives[i]);
  return d;
}

VectorXd TrainingTuple::negative_dots() const {
  VectorXd d(negatives.size());
  for (std::size_t j = 0; j < negatives.size(); ++j) d(j) = query.dot(negatives[j]);
  return d;
}

namespace {

void require_nonempty(const TrainingTuple& t) {
  if (t.positives.empty() || t.negatives.empty()) {
    throw std::invalid_argument("loss: empty positive or negative set");
  }
}

Eigen::Index worst_positive(const VectorXd& pdots) {
  Eigen::Index i = 0;
  for (Eigen::Index k = 1; k < pdots.size(); ++k)
    if (pdots(k) < pdots(i)) i = k;
  return i;
}

}  // namespace

double triplet_loss(const TrainingTuple& t, const LossConfig& cfg) {
  require_nonempty(t);
  const VectorXd pd = t.positive_dots();
  const VectorXd nd = t.negative_dots();
  const double worst = pd.minCoeff();
  double loss = 0.0;
  for (Eigen::Index j = 0; j < nd.size(); ++j) loss += std::max(0.0, nd(j) - worst + cfg.margin);
  return loss;
}

double allpair_loss(const TrainingTuple& t, const LossConfig& cfg) {
  require_nonempty(t);
  const VectorXd pd = t.positive_dots();
  const VectorXd nd = t.negative_dots();
  double loss = 0.0;
  for (Eigen::Index i = 0; i < pd.size(); ++i)
    for (Eigen::Index j = 0; j < nd.size(); ++j) loss += std::max(0.0, nd(j) - pd(i) + cfg.margin);
  return loss;
}

double tuple_loss(const TrainingTuple& t, const LossConfig& cfg) {
  return cfg.kind == LossKind::kTriplet ? triplet_loss(t, cfg) : allpair_loss(t, cfg);
}

MatrixXd allpair_loss_terms(const TrainingTuple& t, const LossConfig& cfg) {
  require_nonempty(t);
  const VectorXd dp = t.positive_dots();
  const VectorXd dn = t.negative_dots();
  const auto m = dp.size();
  const auto n = dn.size();
  const MatrixXd inner = VectorXd::Ones(m) * dn.transpose() - dp * VectorXd::Ones(n).transpose() +
                         cfg.margin * MatrixXd::Ones(m, n);
  return inner.cwiseMax(MatrixXd::Zero(m, n));
}

double allpair_loss_matrix(const TrainingTuple& t, const LossConfig& cfg) {
  return allpair_loss_terms(t, cfg).sum();
}

TupleGradient loss_gradient(const TrainingTuple& t, const LossConfig& cfg) {
  require_nonempty(t);
  const VectorXd pd = t.positive_dots();
  const VectorXd nd = t.negative_dots();
  TupleGradient g;
  g.query = VectorXd::Zero(t.query.size());
  g.positives.assign(t.positives.size(), VectorXd::Zero(t.query.size()));
  g.negatives.assign(t.negatives.size(), VectorXd::Zero(t.query.size()));

  // Each active term <q,N_j> - <q,P_i> + margin contributes
  // d/dq = N_j - P_i, d/dN_j = q, d/dP_i = -q.
  auto add_term = [&](Eigen::Index i, Eigen::Index j) {
    g.query += t.negatives[j] - t.positives[i];
    g.negatives[j] += t.query;
    g.positives[i] -= t.query;
  };

  if (cfg.kind == LossKind::kTriplet) {
    const Eigen::Index worst = worst_positive(pd);
    for (Eigen::Index j = 0; j < nd.size(); ++j)
      if (nd(j) - pd(worst) + cfg.margin > 0.0) add_term(worst, j);
  } else {
    for (Eigen::Index i = 0; i < pd.size(); ++i)
      for (Eigen::Index j = 0; j < nd.size(); ++j)
        if (nd(j) - pd(i) + cfg.margin > 0.0) add_term(i, j);
  }
  return g;
}

int zero_loss_count(std::span<const TrainingTuple> batch, const LossConfig& cfg) {
  int count = 0;
  for (const auto& t : batch)
    if (tuple_loss(t, cfg) == 0.0) ++count;
  return count;
}

SpreadStats spread_stats(std::span<const TrainingTuple> batch) {
  double ps = 0, pss = 0, ns = 0, nss = 0;
  std::size_t pc = 0, nc = 0;
  for (const auto& t : batch) {
    for (const auto& p : t.positives) {
      const double d = t.query.dot(p);
      ps += d;
      pss += d * d;
      ++pc;
    }
    for (const auto& n : t.negatives) {
      const double d = t.query.dot(n);
      ns += d;
      nss += d * d;
      ++nc;
    }
  }
  SpreadStats s;
  if (pc > 0) {
    s.pos_mean = ps / pc;
    s.pos_sigma = std::sqrt(std::max(0.0, pss / pc - s.pos_mean * s.pos_mean));
  }
  if (nc > 0) {
    s.neg_mean = ns / nc;
    s.neg_sigma = std::sqrt(std::max(0.0, nss / nc - s.neg_mean * s.neg_mean));
  }
  return s;
}

double correct_pair_fraction(const TrainingTuple& t) {
  const VectorXd pd = t.positive_dots();
  const VectorXd nd = t.negative_dots();
  int correct = 0;
  for (Eigen::Index i = 0; i < pd.size(); ++i)
    for (Eigen::Index j = 0; j < nd.size(); ++j)
      if (pd(i) > nd(j)) ++correct;
  return double(correct) / double(pd.size() * nd.size());
}

}  // namespace loopkit
