#include "loopkit/pr.hpp"

#include <algorithm>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

namespace loopkit {

bool retrieval_correct(const RetrievalRecord& r, int tolerance) {
  if (!r.match_id) return false;
  return std::any_of(r.true_matches.begin(), r.true_matches.end(),
                     [&](KeyframeId t) { return std::llabs(t - *r.match_id) <= tolerance; });
}

PrCurve pr_curve(std::span<const RetrievalRecord> records, int tolerance) {
  std::size_t total_true = 0;
  struct Scored {
    double score;
    bool correct;
  };
  std::vector<Scored> accepted;
  for (const auto& r : records) {
    if (!r.true_matches.empty()) ++total_true;
    if (r.match_id) accepted.push_back({r.score, retrieval_correct(r, tolerance)});
  }
  if (total_true == 0) throw std::invalid_argument("pr_curve: ground truth has no true matches");

  std::stable_sort(accepted.begin(), accepted.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });

  PrCurve curve;
  std::size_t n_acc = 0, n_correct = 0;
  for (std::size_t i = 0; i < accepted.size();) {
    const double thr = accepted[i].score;
    // Every record with score >= thr is accepted at this threshold.
    while (i < accepted.size() && accepted[i].score == thr) {
      ++n_acc;
      if (accepted[i].correct) ++n_correct;
      ++i;
    }
    curve.points.push_back({thr, double(n_correct) / double(n_acc), double(n_correct) / double(total_true)});
  }

  if (!curve.points.empty()) {
    double prev_r = 0.0;
    double prev_p = curve.points.front().precision;
    for (const auto& p : curve.points) {
      curve.auc += (p.recall - prev_r) * 0.5 * (p.precision + prev_p);
      prev_r = p.recall;
      prev_p = p.precision;
    }
  }
  return curve;
}

void write_pr_csv(std::ostream& os, const PrCurve& curve) {
  os << "threshold,precision,recall\n";
  for (const auto& p : curve.points) os << fmt::format("{:.10g},{:.10g},{:.10g}\n", p.threshold, p.precision, p.recall);
}

}  // namespace loopkit
