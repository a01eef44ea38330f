#include "loopkit/train.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

namespace loopkit {

void ToyTrainConfig::validate() const {
  if (batch_size < 1 || positives < 1 || negatives < 1 || epochs < 1 || iterations_per_epoch < 1 ||
      max_iterations < 0 || clusters < 1 || patience_epochs < 1) {
    throw std::invalid_argument("ToyTrainConfig: sizes and counts must be positive");
  }
  if (learning_rate < 0 || regularization < 0 || margin < 0 || lr_decay <= 0 || alpha <= 0) {
    throw std::invalid_argument("ToyTrainConfig: invalid rate, margin or regularization");
  }
}

ImageDescriptor DescriptorModel::describe(const FeatureMap& f) const { return loopkit::describe(f, vlad, squash); }

double DescriptorModel::squared_norm() const {
  double s = vlad.centers.squaredNorm() + vlad.weights.squaredNorm() + vlad.biases.squaredNorm();
  if (squash) s += squash->weights.squaredNorm();
  return s;
}

DescriptorModel init_model(int dim, const ToyTrainConfig& cfg) {
  DescriptorModel m;
  const int vlad_dim = cfg.squash_channels > 0 ? cfg.squash_channels : dim;
  m.vlad = init_params(cfg.clusters, vlad_dim, cfg.seed, cfg.alpha);
  if (cfg.squash_channels > 0) {
    std::mt19937_64 rng(cfg.seed ^ 0x5157A511ULL);
    const double limit = std::sqrt(6.0 / (dim + cfg.squash_channels));
    std::uniform_real_distribution<double> u(-limit, limit);
    MatrixXd w(cfg.squash_channels, dim);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
    m.squash = ChannelSquash{std::move(w)};
  }
  return m;
}

TrainingTuple describe_tuple(const DescriptorModel& model, const FeatureTuple& t) {
  TrainingTuple out;
  out.query = model.describe(t.query).values;
  for (const auto& p : t.positives) out.positives.push_back(model.describe(p).values);
  for (const auto& n : t.negatives) out.negatives.push_back(model.describe(n).values);
  return out;
}

VectorXd pack_parameters(const DescriptorModel& m) {
  const auto& v = m.vlad;
  const Eigen::Index n = v.centers.size() + v.weights.size() + v.biases.size() + (m.squash ? m.squash->weights.size() : 0);
  VectorXd theta(n);
  Eigen::Index o = 0;
  auto put = [&](const auto& mat) {
    theta.segment(o, mat.size()) = Eigen::Map<const VectorXd>(mat.data(), mat.size());
    o += mat.size();
  };
  put(v.centers);
  put(v.weights);
  put(v.biases);
  if (m.squash) put(m.squash->weights);
  return theta;
}

void unpack_parameters(const VectorXd& theta, DescriptorModel& m) {
  Eigen::Index o = 0;
  auto take = [&](auto& mat) {
    Eigen::Map<VectorXd>(mat.data(), mat.size()) = theta.segment(o, mat.size());
    o += mat.size();
  };
  take(m.vlad.centers);
  take(m.vlad.weights);
  take(m.vlad.biases);
  if (m.squash) take(m.squash->weights);
  if (o != theta.size()) throw std::invalid_argument("unpack_parameters: length mismatch");
}

namespace {

void accumulate(const DescribeGradient& g, DescriptorModel& acc) {
  acc.vlad.centers += g.centers;
  acc.vlad.weights += g.weights;
  acc.vlad.biases += g.biases;
  if (acc.squash) acc.squash->weights += g.squash;
}

DescriptorModel zero_like(const DescriptorModel& m) {
  DescriptorModel z = m;
  z.vlad.centers.setZero();
  z.vlad.weights.setZero();
  z.vlad.biases.setZero();
  if (z.squash) z.squash->weights.setZero();
  return z;
}

}  // namespace

BatchObjective batch_objective(const DescriptorModel& model, std::span<const FeatureTuple> batch,
                               const LossConfig& loss, double regularization) {
  BatchObjective obj;
  DescriptorModel grad = zero_like(model);
  const double scale = 1.0 / double(batch.size());
  for (const auto& ft : batch) {
    TrainingTuple t = describe_tuple(model, ft);
    obj.fit_loss += scale * tuple_loss(t, loss);
    const TupleGradient tg = loss_gradient(t, loss);
    auto back = [&](const FeatureMap& f, const VectorXd& gd) {
      if (gd.isZero(0.0)) return;
      accumulate(describe_backward(f, model.vlad, model.squash, scale * gd), grad);
    };
    back(ft.query, tg.query);
    for (std::size_t i = 0; i < ft.positives.size(); ++i) back(ft.positives[i], tg.positives[i]);
    for (std::size_t j = 0; j < ft.negatives.size(); ++j) back(ft.negatives[j], tg.negatives[j]);
    obj.described.push_back(std::move(t));
  }
  const VectorXd theta = pack_parameters(model);
  obj.total = obj.fit_loss + regularization * theta.squaredNorm();
  obj.gradient = pack_parameters(grad) + 2.0 * regularization * theta;
  return obj;
}

double pair_identification_pct(const DescriptorModel& model, std::span<const FeatureTuple> tuples) {
  if (tuples.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& ft : tuples) sum += correct_pair_fraction(describe_tuple(model, ft));
  return 100.0 * sum / double(tuples.size());
}

TrainResult toy_train(const ToyDataset& data, const ToyTrainConfig& cfg, LossKind kind) {
  cfg.validate();
  if (data.train.empty()) throw std::invalid_argument("toy_train: empty training set");

  TrainResult result;
  result.model = init_model(data.dim, cfg);
  const LossConfig loss{cfg.margin, kind};

  VectorXd theta = pack_parameters(result.model);
  VectorXd sq_grad = VectorXd::Zero(theta.size());
  VectorXd sq_step = VectorXd::Zero(theta.size());

  std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 17);
  std::uniform_int_distribution<std::size_t> pick(0, data.train.size() - 1);

  const int total_iters = cfg.max_iterations > 0 ? cfg.max_iterations : cfg.epochs * cfg.iterations_per_epoch;
  double lr = cfg.learning_rate;
  double first_loss = std::numeric_limits<double>::quiet_NaN();
  double best_epoch_loss = std::numeric_limits<double>::infinity();
  double epoch_loss = 0.0;
  int epoch_iters = 0;
  int stagnant_epochs = 0;

  std::vector<FeatureTuple> batch(cfg.batch_size);
  for (int iter = 0; iter < total_iters; ++iter) {
    for (auto& b : batch) {
      const FeatureTuple& src = data.train[pick(rng)];
      b.query = src.query;
      b.positives.assign(src.positives.begin(), src.positives.begin() + std::min<std::size_t>(cfg.positives, src.positives.size()));
      b.negatives.assign(src.negatives.begin(), src.negatives.begin() + std::min<std::size_t>(cfg.negatives, src.negatives.size()));
    }
    const BatchObjective obj = batch_objective(result.model, batch, loss, cfg.regularization);
    if (!std::isfinite(obj.total) || !obj.gradient.allFinite()) {
      result.diverged = true;
      break;
    }
    if (std::isnan(first_loss)) first_loss = obj.fit_loss;

    TrainLogRow row;
    row.iter = iter;
    row.loss = obj.fit_loss;
    row.loss_rel = first_loss > 0 ? obj.fit_loss / first_loss : 0.0;
    double pairs = 0.0;
    for (const auto& t : obj.described) pairs += correct_pair_fraction(t);
    row.train_pairs_pct = 100.0 * pairs / double(obj.described.size());
    row.spread = spread_stats(obj.described);
    row.zero_loss_count = zero_loss_count(obj.described, loss);
    row.learning_rate = lr;

    const VectorXd& g = obj.gradient;
    VectorXd step;
    if (cfg.optimizer == OptimizerKind::kAdaDelta) {
      const double rho = cfg.adadelta_rho, eps = cfg.adadelta_eps;
      sq_grad = rho * sq_grad + (1.0 - rho) * g.cwiseAbs2();
      step = -((sq_step.array() + eps).sqrt() / (sq_grad.array() + eps).sqrt() * g.array()).matrix();
      sq_step = rho * sq_step + (1.0 - rho) * step.cwiseAbs2();
      step *= lr;
    } else {
      step = -lr * g;
    }
    theta += step;
    unpack_parameters(theta, result.model);

    row.val_pairs_pct = pair_identification_pct(result.model, data.validation);
    result.cumulative_zero_loss += row.zero_loss_count;
    if (obj.fit_loss == 0.0) ++result.zero_loss_batches;
    result.log.push_back(row);

    epoch_loss += obj.fit_loss;
    if (++epoch_iters == cfg.iterations_per_epoch) {
      const double mean = epoch_loss / epoch_iters;
      if (mean < best_epoch_loss) {
        best_epoch_loss = mean;
        stagnant_epochs = 0;
      } else if (++stagnant_epochs >= cfg.patience_epochs) {
        lr *= cfg.lr_decay;
        stagnant_epochs = 0;
      }
      epoch_loss = 0.0;
      epoch_iters = 0;
    }
  }
  return result;
}

void write_train_log_csv(std::ostream& os, const std::vector<TrainLogRow>& log) {
  os << "iter,loss_rel,train_pairs_pct,val_pairs_pct,pos_mu,pos_sigma,neg_mu,neg_sigma,zero_loss_count\n";
  for (const auto& r : log) {
    os << fmt::format("{},{:.10g},{:.6f},{:.6f},{:.10g},{:.10g},{:.10g},{:.10g},{}\n", r.iter, r.loss_rel,
                      r.train_pairs_pct, r.val_pairs_pct, r.spread.pos_mean, r.spread.pos_sigma, r.spread.neg_mean,
                      r.spread.neg_sigma, r.zero_loss_count);
  }
}

}  // namespace loopkit

namespace loopkit {

ToyTrainConfig ToyTrainConfig::from_json(const nlohmann::json& j) {
  ToyTrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.positives = j.value("positives", c.positives);
  c.negatives = j.value("negatives", c.negatives);
  c.epochs = j.value("epochs", c.epochs);
  c.iterations_per_epoch = j.value("iterations_per_epoch", c.iterations_per_epoch);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.patience_epochs = j.value("patience_epochs", c.patience_epochs);
  c.regularization = j.value("regularization", c.regularization);
  c.seed = j.value("seed", c.seed);
  const std::string opt = j.value("optimizer", std::string("adadelta"));
  if (opt == "adadelta") {
    c.optimizer = OptimizerKind::kAdaDelta;
  } else if (opt == "sgd") {
    c.optimizer = OptimizerKind::kGradientDescent;
  } else {
    throw std::invalid_argument("unknown optimizer: " + opt);
  }
  c.adadelta_rho = j.value("adadelta_rho", c.adadelta_rho);
  c.adadelta_eps = j.value("adadelta_eps", c.adadelta_eps);
  c.margin = j.value("margin", c.margin);
  c.clusters = j.value("clusters", c.clusters);
  c.alpha = j.value("alpha", c.alpha);
  c.squash_channels = j.value("squash_channels", c.squash_channels);
  c.validate();
  return c;
}

}  // namespace loopkit
