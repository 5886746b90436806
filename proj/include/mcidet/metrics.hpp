#pragma once

// Binary classification metrics, MCI as the positive class.

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mcidet/error.hpp"
#include "mcidet/feature_store.hpp"

namespace mcidet {

struct ConfusionCounts {
  long tp = 0;
  long fp = 0;
  long tn = 0;
  long fn = 0;

  long total() const { return tp + fp + tn + fn; }

  void add(Label predicted, Label gold) {
    if (gold == Label::kMCI)
      (predicted == Label::kMCI ? tp : fn)++;
    else
      (predicted == Label::kMCI ? fp : tn)++;
  }

  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct MetricsReport {
  double acc = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Set when some ratio had a zero denominator and was reported as 0.
  bool degenerate = false;
};

using LabeledIds = std::vector<std::pair<std::string, Label>>;

inline ConfusionCounts confusion(const LabeledIds& predictions, const LabeledIds& gold) {
  std::map<std::string, Label> gold_by_id;
  for (const auto& [id, label] : gold)
    if (!gold_by_id.emplace(id, label).second) throw Error(ErrorCode::kDuplicateKey, "duplicate gold id " + id);
  if (predictions.size() != gold_by_id.size())
    throw Error(ErrorCode::kIdMismatch, "prediction and gold id sets differ in size");
  std::map<std::string, bool> seen;
  ConfusionCounts c;
  for (const auto& [id, label] : predictions) {
    if (!seen.emplace(id, true).second) throw Error(ErrorCode::kDuplicateKey, "duplicate prediction id " + id);
    auto it = gold_by_id.find(id);
    if (it == gold_by_id.end()) throw Error(ErrorCode::kIdMismatch, "no gold label for id " + id);
    c.add(label, it->second);
  }
  return c;
}

// Harmonic mean; 0 when both inputs are 0.
inline double f1_score(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

inline MetricsReport compute_metrics(const ConfusionCounts& c) {
  if (c.total() <= 0) throw Error(ErrorCode::kEmpty, "no scored items");
  MetricsReport m;
  auto ratio = [&m](double num, double den) {
    if (den == 0.0) {
      m.degenerate = true;
      return 0.0;
    }
    return num / den;
  };
  m.acc = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  m.precision = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
  m.recall = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
  m.f1 = f1_score(m.precision, m.recall);
  if (m.precision + m.recall == 0.0) m.degenerate = true;
  return m;
}

}  // namespace mcidet
