#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "loopkit/placedb.hpp"

namespace loopkit {

/// Top-1 retrieval for one live frame together with its ground truth.
struct RetrievalRecord {
  KeyframeId query_id = 0;
  std::optional<KeyframeId> match_id;
  double score = 0.0;
  /// Every stored keyframe that truly shows the same place; empty when the
  /// frame has no true match.
  std::vector<KeyframeId> true_matches;
};

struct PrPoint {
  double threshold = 0.0;
  double precision = 1.0;
  double recall = 0.0;
};

struct PrCurve {
  std::vector<PrPoint> points;  // thresholds descending
  double auc = 0.0;
};

/// A retrieval counts as correct if it lands within `tolerance` indices of a
/// true match.
bool retrieval_correct(const RetrievalRecord& r, int tolerance = 6);

/// Sweeps every observed score as threshold. Throws std::invalid_argument
/// when no record has a true match.
PrCurve pr_curve(std::span<const RetrievalRecord> records, int tolerance = 6);

void write_pr_csv(std::ostream& os, const PrCurve& curve);

/// Top-1 retrieval records for a keyframe stream replayed through a PlaceDb.
/// `true_matches(id)` supplies ground truth per frame.
template <typename TruthFn>
std::vector<RetrievalRecord> retrieval_records(std::span<const Keyframe> stream, const PlaceDbConfig& cfg,
                                               TruthFn&& true_matches) {
  PlaceDb db(cfg);
  std::vector<RetrievalRecord> out;
  for (const auto& kf : stream) {
    db.insert(kf);
    RetrievalRecord r;
    r.query_id = kf.id;
    if (auto hit = db.query(kf.descriptor).best(kf.id)) {
      r.match_id = hit->match_id;
      r.score = hit->score;
    }
    r.true_matches = true_matches(kf.id);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace loopkit
