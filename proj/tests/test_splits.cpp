#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "mcidet/splits.hpp"

using namespace mcidet;

namespace {

// n_patients x recs records; labels alternate by patient.
std::vector<UtteranceRecord> records(int n_patients, int recs) {
  std::vector<UtteranceRecord> out;
  for (int p = 0; p < n_patients; ++p)
    for (int r = 0; r < recs; ++r)
      out.push_back({"f", "p" + std::to_string(p), "r" + std::to_string(r), Language::kEn,
                     p % 2 == 0 ? Label::kMCI : Label::kNC});
  return out;
}

std::set<std::string> patient_set(const std::vector<UtteranceRecord>& rs) {
  std::set<std::string> s;
  for (const auto& r : rs) s.insert(r.patient_id);
  return s;
}

bool disjoint(const std::set<std::string>& a, const std::set<std::string>& b) {
  return std::none_of(a.begin(), a.end(), [&](const std::string& x) { return b.count(x) > 0; });
}

std::multiset<std::string> keys(const std::vector<UtteranceRecord>& rs) {
  std::multiset<std::string> s;
  for (const auto& r : rs) s.insert(r.patient_id + "/" + r.recording_id);
  return s;
}

}  // namespace

TEST(SpeakerSplit, TenPatientsExample) {
  auto rs = records(10, 3);
  auto s = speaker_split(rs, {SplitMode::kSpeaker, 0.2, 1});
  EXPECT_EQ(patient_set(s.val).size(), 2u);
  EXPECT_EQ(s.val.size(), 6u);
  EXPECT_EQ(s.train.size(), 24u);
  EXPECT_TRUE(disjoint(patient_set(s.train), patient_set(s.val)));
}

TEST(SpeakerSplit, DeterministicAndSeedSensitive) {
  auto rs = records(30, 3);
  auto a = speaker_split(rs, {SplitMode::kSpeaker, 0.2, 5});
  auto b = speaker_split(rs, {SplitMode::kSpeaker, 0.2, 5});
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(a.train, b.train);
  bool differs = false;
  for (std::uint64_t seed = 6; seed < 16 && !differs; ++seed)
    differs = speaker_split(rs, {SplitMode::kSpeaker, 0.2, seed}).val != a.val;
  EXPECT_TRUE(differs);
}

TEST(SpeakerSplit, Errors) {
  EXPECT_THROW(speaker_split(records(1, 3), {}), Error);
  EXPECT_THROW(speaker_split(records(5, 1), {SplitMode::kSpeaker, 0.0, 0}), Error);
  EXPECT_THROW(speaker_split(records(5, 1), {SplitMode::kSpeaker, 1.0, 0}), Error);
}

TEST(SpeakerSplit, LabelBalancedValidation) {
  auto rs = records(40, 1);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto s = speaker_split(rs, {SplitMode::kSpeaker, 0.2, seed});
    const auto mci = std::count_if(s.val.begin(), s.val.end(), [](const auto& r) { return r.label == Label::kMCI; });
    EXPECT_EQ(mci, 4);
  }
}

TEST(SpeakerSplit, RandomizedProperties) {
  Rng rng(42);
  for (int trial = 0; trial < 2000; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(40));
    const int recs = 1 + static_cast<int>(rng.below(4));
    auto rs = records(n, recs);
    rng.shuffle(rs);
    const double ratio = rng.uniform(0.05, 0.95);
    auto s = speaker_split(rs, {SplitMode::kSpeaker, ratio, rng.next_u64()});
    auto vp = patient_set(s.val);
    auto tp = patient_set(s.train);
    ASSERT_TRUE(disjoint(vp, tp));
    const auto expect = std::clamp<long>(std::lround(ratio * n), 1, n - 1);
    EXPECT_EQ(static_cast<long>(vp.size()), expect);
    EXPECT_EQ(vp.size() + tp.size(), static_cast<std::size_t>(n));
    auto all = keys(s.train);
    for (const auto& k : keys(s.val)) all.insert(k);
    EXPECT_EQ(all, keys(rs));
  }
}

TEST(GeneralSplit, Arithmetic) {
  auto rs = records(10, 3);
  auto s = general_split(rs, {SplitMode::kGeneral, 0.2, 0});
  EXPECT_EQ(s.val.size(), 6u);
  EXPECT_EQ(s.train.size(), 24u);
  auto all = keys(s.train);
  for (const auto& k : keys(s.val)) all.insert(k);
  EXPECT_EQ(all, keys(rs));
  auto again = general_split(rs, {SplitMode::kGeneral, 0.2, 0});
  EXPECT_EQ(again.val, s.val);
  EXPECT_THROW(general_split(records(1, 1), {SplitMode::kGeneral, 0.2, 0}), Error);
}

TEST(GeneralSplit, LeaksSomePatientForSomeSeed) {
  auto rs = records(10, 3);
  bool leaked = false;
  for (std::uint64_t seed = 0; seed < 100 && !leaked; ++seed) {
    auto s = general_split(rs, {SplitMode::kGeneral, 0.2, seed});
    leaked = !disjoint(patient_set(s.train), patient_set(s.val));
  }
  EXPECT_TRUE(leaked);
}

TEST(Split, DispatchesOnMode) {
  auto rs = records(10, 3);
  EXPECT_EQ(split(rs, {SplitMode::kSpeaker, 0.2, 3}).val, speaker_split(rs, {SplitMode::kSpeaker, 0.2, 3}).val);
  EXPECT_EQ(split(rs, {SplitMode::kGeneral, 0.2, 3}).val, general_split(rs, {SplitMode::kGeneral, 0.2, 3}).val);
}

TEST(Kfold, TwentyFivePatients) {
  auto rs = records(25, 3);
  auto folds = kfold(rs, 5, 7);
  ASSERT_EQ(folds.size(), 5u);
  std::set<std::string> uni;
  for (const auto& f : folds) {
    auto vp = patient_set(f.val);
    EXPECT_EQ(vp.size(), 5u);
    EXPECT_TRUE(disjoint(vp, patient_set(f.train)));
    EXPECT_TRUE(disjoint(vp, uni));
    uni.insert(vp.begin(), vp.end());
  }
  EXPECT_EQ(uni, patient_set(rs));
}

TEST(Kfold, FirstFoldIsMainSplit) {
  for (int n : {10, 23, 25, 40, 41, 57}) {
    auto rs = records(n, 3);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto folds = kfold(rs, 5, seed);
      auto main = speaker_split(rs, {SplitMode::kSpeaker, 0.2, seed});
      EXPECT_EQ(folds[0].val, main.val) << "n=" << n << " seed=" << seed;
      EXPECT_EQ(folds[0].train, main.train);
    }
  }
}

TEST(Kfold, RandomizedPartition) {
  Rng rng(8);
  for (int trial = 0; trial < 2000; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(6));
    const int n = k + static_cast<int>(rng.below(30));
    auto rs = records(n, 1 + static_cast<int>(rng.below(3)));
    rng.shuffle(rs);
    auto fa = assign_folds(rs, k, rng.next_u64());
    ASSERT_EQ(fa.fold_of.size(), static_cast<std::size_t>(n));
    std::vector<int> sizes(k, 0);
    for (const auto& [p, f] : fa.fold_of) ++sizes[f];
    const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
    EXPECT_LE(*hi - *lo, 1);
  }
  EXPECT_THROW(kfold(records(4, 3), 5, 0), Error);
  EXPECT_THROW(kfold(records(4, 3), 1, 0), Error);
}
