#pragma once

// Train/validation partitioning: speaker-grouped (by patient id), general
// (per recording), and speaker-grouped k-fold.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mcidet/error.hpp"
#include "mcidet/feature_store.hpp"
#include "mcidet/rng.hpp"

namespace mcidet {

enum class SplitMode { kSpeaker, kGeneral };

struct SplitSpec {
  SplitMode mode = SplitMode::kSpeaker;
  double val_ratio = 0.2;
  std::uint64_t seed = 0;
};

template <class Item>
struct Split {
  std::vector<Item> train;
  std::vector<Item> val;
};

inline const UtteranceRecord& record_of(const UtteranceRecord& r) { return r; }
inline const UtteranceRecord& record_of(const Recording& r) { return r.record; }

struct PatientInfo {
  std::string id;
  Label label;
};

// Unique patients in first-appearance order; a patient's label is the label of
// its first recording.
template <class Item>
std::vector<PatientInfo> patients_of(const std::vector<Item>& items) {
  std::vector<PatientInfo> out;
  std::map<std::string, bool> seen;
  for (const auto& it : items) {
    const auto& r = record_of(it);
    if (seen.emplace(r.patient_id, true).second) out.push_back({r.patient_id, r.label});
  }
  return out;
}

// Seeded patient permutation with the two label groups interleaved evenly, so
// any contiguous run of the order is close to label-balanced.
template <class Item>
std::vector<std::string> stratified_patient_order(const std::vector<Item>& items, std::uint64_t seed) {
  auto patients = patients_of(items);
  std::vector<std::string> groups[2];
  for (const auto& p : patients) groups[static_cast<int>(p.label)].push_back(p.id);
  Rng rng(derive_seed(seed, "speaker-order"));
  for (auto& g : groups) rng.shuffle(g);

  struct Keyed {
    double key;
    int group;
    std::string id;
  };
  std::vector<Keyed> keyed;
  // MCI first on equal keys
  for (int g : {1, 0}) {
    const double n = static_cast<double>(groups[g].size());
    for (std::size_t j = 0; j < groups[g].size(); ++j)
      keyed.push_back({(static_cast<double>(j) + 0.5) / n, g == 1 ? 0 : 1, groups[g][j]});
  }
  std::stable_sort(keyed.begin(), keyed.end(), [](const Keyed& a, const Keyed& b) {
    return a.key != b.key ? a.key < b.key : a.group < b.group;
  });
  std::vector<std::string> order;
  order.reserve(keyed.size());
  for (auto& k : keyed) order.push_back(std::move(k.id));
  return order;
}

namespace detail {

inline std::size_t val_count(double ratio, std::size_t n) {
  auto v = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  return std::clamp<std::size_t>(v, 1, n - 1);
}

inline void check_ratio(double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error(ErrorCode::kInvalidArgument, "val_ratio must be in (0, 1)");
}

template <class Item>
Split<Item> split_by_patient(const std::vector<Item>& items, const std::map<std::string, bool>& is_val) {
  Split<Item> out;
  for (const auto& it : items) (is_val.at(record_of(it).patient_id) ? out.val : out.train).push_back(it);
  return out;
}

}  // namespace detail

template <class Item>
Split<Item> speaker_split(const std::vector<Item>& items, const SplitSpec& spec) {
  detail::check_ratio(spec.val_ratio);
  auto order = stratified_patient_order(items, spec.seed);
  if (order.size() < 2) throw Error(ErrorCode::kInvalidArgument, "speaker split needs at least 2 patients");
  const std::size_t n_val = detail::val_count(spec.val_ratio, order.size());
  std::map<std::string, bool> is_val;
  for (std::size_t i = 0; i < order.size(); ++i) is_val[order[i]] = i < n_val;
  return detail::split_by_patient(items, is_val);
}

// Recording-level split that ignores patient identity.
template <class Item>
Split<Item> general_split(const std::vector<Item>& items, const SplitSpec& spec) {
  detail::check_ratio(spec.val_ratio);
  if (items.size() < 2) throw Error(ErrorCode::kInvalidArgument, "general split needs at least 2 records");
  std::vector<std::size_t> idx(items.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(derive_seed(spec.seed, "general"));
  rng.shuffle(idx);
  const std::size_t n_val = detail::val_count(spec.val_ratio, items.size());
  std::vector<bool> is_val(items.size(), false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[idx[i]] = true;
  Split<Item> out;
  for (std::size_t i = 0; i < items.size(); ++i) (is_val[i] ? out.val : out.train).push_back(items[i]);
  return out;
}

template <class Item>
Split<Item> split(const std::vector<Item>& items, const SplitSpec& spec) {
  return spec.mode == SplitMode::kSpeaker ? speaker_split(items, spec) : general_split(items, spec);
}

struct FoldAssignment {
  int k = 5;
  std::map<std::string, int> fold_of;  // patient id -> 0-based fold
};

// Contiguous chunks of the stratified order. Fold 0 has round(n/k) patients so
// that it coincides with speaker_split(val_ratio = 1/k) under the same seed;
// all fold sizes differ by at most one.
template <class Item>
FoldAssignment assign_folds(const std::vector<Item>& items, int k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorCode::kInvalidArgument, "k must be >= 2");
  auto order = stratified_patient_order(items, seed);
  const std::size_t n = order.size();
  if (static_cast<std::size_t>(k) > n)
    throw Error(ErrorCode::kInvalidArgument,
                "k=" + std::to_string(k) + " exceeds patient count " + std::to_string(n));
  const std::size_t base = n / k;
  const auto first = static_cast<std::size_t>(std::llround(static_cast<double>(n) / k));
  std::size_t big = (n - first) - (k - 1) * base;  // folds 1.. that get base+1
  std::vector<std::size_t> sizes{first};
  for (int f = 1; f < k; ++f) sizes.push_back(base + (big > 0 ? (big--, 1) : 0));

  FoldAssignment fa;
  fa.k = k;
  std::size_t pos = 0;
  for (int f = 0; f < k; ++f)
    for (std::size_t i = 0; i < sizes[f]; ++i) fa.fold_of[order[pos++]] = f;
  return fa;
}

template <class Item>
std::vector<Split<Item>> kfold(const std::vector<Item>& items, int k, std::uint64_t seed) {
  auto fa = assign_folds(items, k, seed);
  std::vector<Split<Item>> folds(k);
  for (const auto& it : items) {
    const int f = fa.fold_of.at(record_of(it).patient_id);
    for (int i = 0; i < k; ++i) (i == f ? folds[i].val : folds[i].train).push_back(it);
  }
  return folds;
}

}  // namespace mcidet
