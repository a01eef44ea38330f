#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "helpers.hpp"
#include "loopkit/netvlad.hpp"

using namespace loopkit;

namespace {

FeatureMap random_map(int w, int h, int d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  FeatureMap f(w, h, d);
  for (int u = 0; u < f.pixels(); ++u)
    for (int c = 0; c < d; ++c) f.values(c, u) = n(rng);
  return f;
}

// Assigns each pixel to its nearest center.
MatrixXd hard_vlad(const FeatureMap& f, const MatrixXd& centers) {
  MatrixXd v = MatrixXd::Zero(centers.rows(), centers.cols());
  for (int u = 0; u < f.pixels(); ++u) {
    Eigen::Index best = 0;
    (centers.colwise() - f.values.col(u)).colwise().squaredNorm().minCoeff(&best);
    v.col(best) += f.values.col(u) - centers.col(best);
  }
  return v;
}

}  // namespace

TEST_CASE("soft_assign equidistant point splits evenly") {
  MatrixXd c(2, 2);
  c << 1, -1, 0, 0;
  const VladParams p = VladParams::coupled(c, 3.0);
  const VectorXd a = soft_assign(Eigen::Vector2d(0, 5), p);
  CHECK(a(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(a(1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("soft_assign hard limit") {
  MatrixXd c(2, 2);
  c << 0, 1, 0, 1;
  const VladParams p = VladParams::coupled(c, 1e6);
  const VectorXd a = soft_assign(Eigen::Vector2d(0.1, 0.2), p);
  CHECK(a(0) > 1 - 1e-6);
}

TEST_CASE("soft_assign matches the Gaussian kernel form") {
  MatrixXd c(1, 2);
  c << 0, 1;
  const double alpha = 1.0, h = 0.25;
  const VectorXd a = soft_assign(VectorXd::Constant(1, h), VladParams::coupled(c, alpha));
  const double e0 = std::exp(-alpha * h * h), e1 = std::exp(-alpha * (h - 1) * (h - 1));
  CHECK(a(0) == doctest::Approx(e0 / (e0 + e1)).epsilon(1e-12));
  CHECK(a(1) == doctest::Approx(e1 / (e0 + e1)).epsilon(1e-12));
}

TEST_CASE("soft_assign lies on the simplex") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const int K = 1 + int(rng() % 16), D = 1 + int(rng() % 12);
    VladParams p = init_params(K, D, rng(), 0.1 + 50.0 * std::abs(n(rng)));
    // Decoupled parameters too.
    if (i % 2) {
      for (Eigen::Index k = 0; k < p.weights.size(); ++k) p.weights.data()[k] += n(rng);
      for (Eigen::Index k = 0; k < p.biases.size(); ++k) p.biases(k) += 10 * n(rng);
    }
    VectorXd h(D);
    for (int d = 0; d < D; ++d) h(d) = 3 * n(rng);
    const VectorXd a = soft_assign(h, p);
    CHECK(a.minCoeff() >= 0.0);
    CHECK(std::abs(a.sum() - 1.0) < 1e-9);
  }
}

TEST_CASE("vlad_aggregate trivial cases") {
  std::mt19937_64 rng(2);
  const VladParams p = init_params(1, 4, 5);
  FeatureMap one = random_map(1, 1, 4, rng);
  const RawVlad v = vlad_aggregate(one, p);
  CHECK((v.residuals.col(0) - (one.values.col(0) - p.centers.col(0))).norm() < 1e-15);

  FeatureMap at_center(3, 2, 4);
  for (int u = 0; u < at_center.pixels(); ++u) at_center.values.col(u) = p.centers.col(0);
  CHECK(vlad_aggregate(at_center, p).residuals.norm() == 0.0);

  FeatureMap wrong = random_map(2, 2, 3, rng);
  CHECK_THROWS_AS(vlad_aggregate(wrong, p), std::invalid_argument);
}

TEST_CASE("pixel permutation invariance") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const FeatureMap f = random_map(5, 4, 6, rng);
    const VladParams p = init_params(4, 6, rng(), 5.0);
    std::vector<int> perm(f.pixels());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    FeatureMap g = f;
    for (int u = 0; u < f.pixels(); ++u) g.values.col(u) = f.values.col(perm[u]);
    CHECK((vlad_aggregate(f, p).residuals - vlad_aggregate(g, p).residuals).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((describe(f, p).values - describe(g, p).values).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("vlad_aggregate is bit-reproducible") {
  std::mt19937_64 rng(4);
  const FeatureMap f = random_map(4, 4, 5, rng);
  const VladParams p = init_params(3, 5, 9);
  CHECK(vlad_aggregate(f, p).residuals == vlad_aggregate(f, p).residuals);
}

TEST_CASE("hard-assignment limit") {
  std::mt19937_64 rng(5);
  int checked = 0;
  while (checked < 100) {
    const FeatureMap f = random_map(3, 3, 4, rng);
    const VladParams p = init_params(5, 4, rng(), 1e6);
    // Skip maps whose nearest centers are nearly tied.
    bool ok = true;
    for (int u = 0; u < f.pixels() && ok; ++u) {
      VectorXd d = (p.centers.colwise() - f.values.col(u)).colwise().squaredNorm();
      std::sort(d.data(), d.data() + d.size());
      ok = d(1) - d(0) > 1e-3;
    }
    if (!ok) continue;
    const MatrixXd oracle = hard_vlad(f, p.centers);
    const MatrixXd got = vlad_aggregate(f, p).residuals;
    CHECK((got - oracle).norm() / oracle.norm() < 1e-6);
    ++checked;
  }
}

TEST_CASE("intra_normalize") {
  MatrixXd v = MatrixXd::Zero(3, 4);
  v.col(2) << 3, 4, 0;
  const ImageDescriptor d = intra_normalize({v});
  VectorXd expect = VectorXd::Zero(12);
  expect.segment(6, 3) << 0.6, 0.8, 0.0;
  CHECK((d.values - expect).norm() < 1e-15);

  const ImageDescriptor z = intra_normalize({MatrixXd::Zero(3, 4)});
  CHECK(z.values.size() == 12);
  CHECK(z.values.norm() == 0.0);

  std::mt19937_64 rng(6);
  for (int i = 0; i < 200; ++i) {
    MatrixXd r = MatrixXd::Random(7, 5) * double(1 + rng() % 1000);
    CHECK(std::abs(intra_normalize({r}).values.norm() - 1.0) < 1e-9);
  }
}

TEST_CASE("describe dimensions") {
  std::mt19937_64 rng(7);
  const FeatureMap f = random_map(2, 2, 512, rng);
  const VladParams p = init_params(16, 512, 1);
  CHECK(describe(f, p).size() == 8192);

  ChannelSquash s{MatrixXd::Random(32, 512)};
  const VladParams ps = init_params(16, 32, 1);
  CHECK(describe(f, ps, s).size() == 512);
  CHECK_THROWS(describe(f, p, s));
}

TEST_CASE("describe output has unit norm and is deterministic") {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 200; ++i) {
    const FeatureMap f = random_map(3, 2, 6, rng);
    const VladParams p = init_params(4, 6, rng(), 10.0);
    const ImageDescriptor a = describe(f, p), b = describe(f, p);
    CHECK(std::abs(a.values.norm() - 1.0) < 1e-7);
    CHECK(a.dot(b) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("init_params coupled invariant") {
  for (std::uint64_t seed : {1ull, 2ull, 99ull}) {
    const VladParams p = init_params(8, 5, seed, 7.0);
    for (int k = 0; k < p.clusters(); ++k) {
      CHECK(std::abs(p.centers.col(k).norm() - 1.0) < 1e-12);
      CHECK((p.weights.col(k) - 2.0 * 7.0 * p.centers.col(k)).norm() == 0.0);
      CHECK(p.biases(k) == -7.0 * p.centers.col(k).squaredNorm());
    }
    const VladParams q = init_params(8, 5, seed, 7.0);
    CHECK(p.centers == q.centers);
    CHECK(p.weights == q.weights);
    CHECK(p.biases == q.biases);
  }
  CHECK(init_params(8, 5, 1).centers != init_params(8, 5, 2).centers);
}

TEST_CASE("describe_backward matches finite differences") {
  std::mt19937_64 rng(9);
  const FeatureMap f = random_map(3, 2, 5, rng);
  VladParams p = init_params(3, 5, 4, 2.0);
  p.biases(1) += 0.3;
  const std::optional<ChannelSquash> squash = ChannelSquash{MatrixXd::Random(5, 5)};
  const VectorXd w = testing::random_unit(15, rng);
  const DescribeGradient g = describe_backward(f, p, squash, w);
  auto objective = [&](const FeatureMap& ff, const VladParams& pp, const ChannelSquash& s) {
    return w.dot(describe(ff, pp, s).values);
  };
  const double h = 1e-6;
  auto fd = [&](double& x, auto&& eval) {
    const double orig = x;
    x = orig + h;
    const double up = eval();
    x = orig - h;
    const double down = eval();
    x = orig;
    return (up - down) / (2 * h);
  };
  VladParams q = p;
  ChannelSquash s = *squash;
  FeatureMap ff = f;
  auto eval = [&] { return objective(ff, q, s); };
  for (Eigen::Index i = 0; i < q.centers.size(); ++i)
    CHECK(fd(q.centers.data()[i], eval) == doctest::Approx(g.centers.data()[i]).epsilon(1e-5));
  for (Eigen::Index i = 0; i < q.weights.size(); ++i)
    CHECK(fd(q.weights.data()[i], eval) == doctest::Approx(g.weights.data()[i]).epsilon(1e-5));
  for (Eigen::Index i = 0; i < q.biases.size(); ++i)
    CHECK(fd(q.biases.data()[i], eval) == doctest::Approx(g.biases.data()[i]).epsilon(1e-5));
  for (Eigen::Index i = 0; i < s.weights.size(); ++i)
    CHECK(fd(s.weights.data()[i], eval) == doctest::Approx(g.squash.data()[i]).epsilon(1e-5));
  for (Eigen::Index i = 0; i < ff.values.size(); ++i)
    CHECK(fd(ff.values.data()[i], eval) == doctest::Approx(g.features.data()[i]).epsilon(1e-5));
}
