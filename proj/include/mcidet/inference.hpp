#pragma once

// Segment-level prediction and recording-level aggregation.
//
// Ensemble: label = argmax of the per-class probability sums.
// OR:       label = MCI if any segment's argmax is MCI.
// Ties go to MCI in both, which makes {Ensemble -> MCI} a subset of
// {OR -> MCI} for every prediction set.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mcidet/error.hpp"
#include "mcidet/feature_store.hpp"
#include "mcidet/model.hpp"

namespace mcidet {

enum class Logic { kEnsemble, kOr };

inline const char* to_string(Logic l) { return l == Logic::kOr ? "or" : "ensemble"; }

inline Logic parse_logic(const std::string& s) {
  if (s == "or") return Logic::kOr;
  if (s == "ensemble") return Logic::kEnsemble;
  throw Error(ErrorCode::kInvalidArgument, "unknown inference logic '" + s + "'");
}

struct SegmentPrediction {
  std::string recording_id;
  FrameRange range;
  double p_nc = 0.5;
  double p_mci = 0.5;

  Label label() const { return p_mci >= p_nc ? Label::kMCI : Label::kNC; }
};

struct AggregationVerdict {
  std::string recording_id;
  Logic logic = Logic::kOr;
  Label label = Label::kNC;
  double p_nc_sum = 0.0;
  double p_mci_sum = 0.0;
  int trigger_segment = -1;  // OR only: first segment predicted MCI
};

// Two-class softmax in double precision.
inline std::pair<double, double> class_probabilities(double logit_nc, double logit_mci) {
  const double m = std::max(logit_nc, logit_mci);
  const double e0 = std::exp(logit_nc - m);
  const double e1 = std::exp(logit_mci - m);
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

template <class S>
std::vector<SegmentPrediction> predict_segments(const ModelParams<S>& model, const FeatureSequence& seq,
                                                double window_seconds, int min_frames = 1,
                                                const std::string& recording_id = {}) {
  std::vector<SegmentPrediction> out;
  for (auto range : segment_ranges(seq.frames(), seq.fps(), window_seconds, min_frames)) {
    auto cache = forward(model, seq, range, /*train=*/false);
    auto [p_nc, p_mci] =
        class_probabilities(static_cast<double>(cache.logits(0, 0)), static_cast<double>(cache.logits(1, 0)));
    out.push_back({recording_id, range, p_nc, p_mci});
  }
  return out;
}

namespace detail {

// Order-independent sum.
inline double sorted_sum(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

inline void require_nonempty(std::span<const SegmentPrediction> preds) {
  if (preds.empty()) throw Error(ErrorCode::kEmpty, "no segment predictions to aggregate");
}

}  // namespace detail

inline AggregationVerdict aggregate_ensemble(std::span<const SegmentPrediction> preds) {
  detail::require_nonempty(preds);
  std::vector<double> nc, mci, margin;
  for (const auto& p : preds) {
    nc.push_back(p.p_nc);
    mci.push_back(p.p_mci);
    margin.push_back(p.p_mci - p.p_nc);
  }
  AggregationVerdict v;
  v.recording_id = preds.front().recording_id;
  v.logic = Logic::kEnsemble;
  v.p_nc_sum = detail::sorted_sum(nc);
  v.p_mci_sum = detail::sorted_sum(mci);
  // Deciding on the summed margins keeps the sign exact when every segment
  // leans NC: a sum of negative terms never rounds to >= 0.
  v.label = detail::sorted_sum(margin) >= 0.0 ? Label::kMCI : Label::kNC;
  return v;
}

inline AggregationVerdict aggregate_or(std::span<const SegmentPrediction> preds) {
  detail::require_nonempty(preds);
  AggregationVerdict v = aggregate_ensemble(preds);
  v.logic = Logic::kOr;
  v.label = Label::kNC;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].label() == Label::kMCI) {
      v.label = Label::kMCI;
      v.trigger_segment = static_cast<int>(i);
      break;
    }
  }
  return v;
}

inline AggregationVerdict aggregate(Logic logic, std::span<const SegmentPrediction> preds) {
  return logic == Logic::kOr ? aggregate_or(preds) : aggregate_ensemble(preds);
}

}  // namespace mcidet
