#include <doctest.h>

#include <random>
#include <sstream>

#include "helpers.hpp"
#include "loopkit/placedb.hpp"
#include "loopkit/pr.hpp"

using namespace loopkit;

namespace {

Keyframe make_kf(KeyframeId id, Eigen::VectorXd desc) {
  Keyframe kf;
  kf.id = id;
  kf.timestamp = 0.1 * double(id);
  kf.descriptor = std::move(desc);
  kf.tracked_features = 100;
  return kf;
}

PlaceDbConfig window(int T) {
  PlaceDbConfig c;
  c.exclusion_window = T;
  return c;
}

QueryHit hit(KeyframeId q, KeyframeId m, double s) { return {q, m, s}; }

}  // namespace

TEST_CASE("insert then query own descriptor") {
  std::mt19937_64 rng(1);
  PlaceDb db(window(0));
  const auto d = testing::random_unit(16, rng);
  db.insert(make_kf(0, d));
  const auto best = db.query(d).best(0);
  REQUIRE(best);
  CHECK(best->score == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(db.insert(make_kf(0, d)), std::invalid_argument);
  CHECK_THROWS_AS(db.insert(make_kf(1, testing::random_unit(8, rng))), std::invalid_argument);
}

TEST_CASE("query length bookkeeping") {
  std::mt19937_64 rng(2);
  PlaceDb db(window(150));
  for (int i = 0; i < 4000; ++i) db.insert(make_kf(i, testing::random_unit(8, rng)));
  // Eligible ids are 0 .. 3999-150.
  CHECK(db.query(testing::random_unit(8, rng)).scores.size() == 4000 - 150);
  CHECK(db.query(testing::random_unit(8, rng), 100).scores.empty());
}

TEST_CASE("query scores") {
  std::mt19937_64 rng(3);
  PlaceDb db(window(0));
  std::vector<Eigen::VectorXd> stored;
  for (int i = 0; i < 50; ++i) {
    stored.push_back(testing::random_unit(12, rng));
    db.insert(make_kf(10 + i, stored.back()));
  }
  const QueryResult same = db.query(stored[17]);
  CHECK(same.scores[17] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(same.best(99)->match_id == 27);

  const auto q = testing::random_unit(12, rng);
  const QueryResult r = db.query(q);
  for (int i = 0; i < 50; ++i) {
    CHECK(r.ids[i] == 10 + i);
    CHECK(std::abs(r.scores[i] - q.dot(stored[i])) < 1e-12);
  }

  PlaceDb axis(window(0));
  for (int i = 0; i < 5; ++i) axis.insert(make_kf(i, Eigen::VectorXd::Unit(6, i)));
  for (double s : axis.query(Eigen::VectorXd::Unit(6, 5)).scores) CHECK(s == 0.0);
}

TEST_CASE("loop acceptance rule") {
  PlaceDbConfig cfg;  // tau 0.7, c 3, L 6, T 150
  const std::vector<QueryHit> accept{hit(300, 100, 0.9), hit(301, 103, 0.8), hit(302, 105, 0.75)};
  const auto c = detect_loop(accept, cfg);
  REQUIRE(c);
  CHECK(c->match_id == 100);
  CHECK(c->query_id == 300);

  const std::vector<QueryHit> spread{hit(300, 100, 0.9), hit(301, 110, 0.8), hit(302, 104, 0.75)};
  CHECK(!detect_loop(spread, cfg));

  const std::vector<QueryHit> weak{hit(300, 100, 0.9), hit(301, 103, 0.7), hit(302, 105, 0.75)};
  CHECK(!detect_loop(weak, cfg));

  const std::vector<QueryHit> too_few{hit(300, 100, 0.9), hit(301, 103, 0.8)};
  CHECK(!detect_loop(too_few, cfg));
}

TEST_CASE("exclusion window in the acceptance rule") {
  PlaceDbConfig cfg;
  const std::vector<QueryHit> close{hit(249, 100, 0.9), hit(250, 101, 0.9), hit(251, 102, 0.9)};
  CHECK(!detect_loop(close, cfg));
  const std::vector<QueryHit> exact{hit(250, 100, 0.9), hit(251, 101, 0.9), hit(252, 102, 0.9)};
  CHECK(detect_loop(exact, cfg));
}

TEST_CASE("detector replay gives identical decisions") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.5, 1.0);
  std::vector<std::optional<QueryHit>> log;
  for (int i = 0; i < 2000; ++i) {
    if (rng() % 50 == 0) {
      log.push_back(std::nullopt);
    } else {
      log.push_back(hit(200 + i, 20 + i / 2 + KeyframeId(rng() % 8), u(rng)));
    }
  }
  auto replay = [&](double tau) {
    PlaceDbConfig cfg;
    cfg.accept_threshold = tau;
    LoopDetector det(cfg);
    std::vector<std::pair<KeyframeId, KeyframeId>> out;
    for (const auto& h : log)
      if (auto c = det.push(h)) {
        CHECK(c->query_id - c->match_id >= cfg.exclusion_window);
        out.emplace_back(c->query_id, c->match_id);
      }
    return out;
  };
  CHECK(replay(0.7) == replay(0.7));
  std::size_t prev = replay(0.0).size();
  for (double tau : {0.6, 0.7, 0.8, 0.9, 0.99}) {
    const std::size_t n = replay(tau).size();
    CHECK(n <= prev);
    prev = n;
  }
}

TEST_CASE("keyframe JSONL round trip") {
  std::mt19937_64 rng(5);
  std::vector<Keyframe> kfs;
  for (int i = 0; i < 5; ++i) {
    Keyframe kf = make_kf(i, testing::random_unit(6, rng));
    kf.world = i / 2;
    kf.odom_pose = testing::random_pose(rng);
    kfs.push_back(kf);
  }
  std::stringstream ss;
  write_keyframes_jsonl(ss, kfs);
  const auto back = read_keyframes_jsonl(ss);
  REQUIRE(back.size() == kfs.size());
  for (std::size_t i = 0; i < kfs.size(); ++i) {
    CHECK(back[i].id == kfs[i].id);
    CHECK(back[i].world == kfs[i].world);
    CHECK(back[i].tracked_features == kfs[i].tracked_features);
    CHECK(back[i].descriptor == kfs[i].descriptor);
    CHECK(approx_equal(back[i].odom_pose, kfs[i].odom_pose, 1e-15));
  }
}

TEST_CASE("PR curve of perfect scores") {
  std::vector<RetrievalRecord> recs;
  for (int i = 0; i < 20; ++i) {
    RetrievalRecord r;
    r.query_id = 200 + i;
    r.match_id = i;
    if (i % 2 == 0) {
      r.true_matches = {i};
      r.score = 1.0;
    } else {
      r.score = 0.0;
    }
    recs.push_back(r);
  }
  CHECK(pr_curve(recs).auc == doctest::Approx(1.0));
}

TEST_CASE("PR curve hand count") {
  // 10 frames: scores and correctness; 6 frames have a true match.
  const double scores[] = {0.95, 0.9, 0.85, 0.8, 0.75, 0.7, 0.65, 0.6, 0.55, 0.5};
  const bool correct[] = {true, true, false, true, false, true, false, false, true, false};
  const bool has_truth[] = {true, true, true, true, false, true, false, false, true, false};
  std::vector<RetrievalRecord> recs;
  for (int i = 0; i < 10; ++i) {
    RetrievalRecord r;
    r.query_id = 500 + i;
    r.match_id = 100 + i;
    r.score = scores[i];
    if (has_truth[i]) r.true_matches = {correct[i] ? 100 + i : 300};
    recs.push_back(r);
  }
  const PrCurve c = pr_curve(recs);
  REQUIRE(c.points.size() == 10);
  // Threshold 0.75: accepted 5, correct 3 -> precision 0.6, recall 3/6.
  CHECK(c.points[4].threshold == 0.75);
  CHECK(c.points[4].precision == doctest::Approx(0.6));
  CHECK(c.points[4].recall == doctest::Approx(0.5));
  CHECK(c.points.back().recall == doctest::Approx(5.0 / 6.0));
}

TEST_CASE("PR curve of random scores approaches the base rate") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double base : {0.2, 0.5, 0.8}) {
    std::vector<RetrievalRecord> recs;
    for (int i = 0; i < 20000; ++i) {
      RetrievalRecord r;
      r.query_id = i;
      r.match_id = 0;
      r.score = u(rng);
      if (u(rng) < base) r.true_matches = {0};
      recs.push_back(r);
    }
    CHECK(pr_curve(recs).auc == doctest::Approx(base).epsilon(0.05));
  }
}

TEST_CASE("PR curve needs ground truth") {
  std::vector<RetrievalRecord> recs(3);
  CHECK_THROWS_AS(pr_curve(recs), std::invalid_argument);
  std::ostringstream os;
  write_pr_csv(os, {});
  CHECK(os.str() == "threshold,precision,recall\n");
}
