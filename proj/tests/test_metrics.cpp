#include <gtest/gtest.h>

#include <algorithm>

#include "mcidet/metrics.hpp"
#include "mcidet/rng.hpp"

using namespace mcidet;

namespace {

LabeledIds ids(std::initializer_list<Label> labels) {
  LabeledIds out;
  int i = 0;
  for (Label l : labels) out.push_back({"r" + std::to_string(i++), l});
  return out;
}

constexpr Label M = Label::kMCI;
constexpr Label N = Label::kNC;

}  // namespace

TEST(Confusion, Identity) {
  auto g = ids({M, M, M, M, M});
  auto c = confusion(g, g);
  EXPECT_EQ(c.tp, 5);
  EXPECT_EQ(c.fp + c.tn + c.fn, 0);
}

TEST(Confusion, TotalMiss) {
  auto c = confusion(ids({N, N, N, N, N}), ids({M, M, M, M, M}));
  EXPECT_EQ(c.fn, 5);
  EXPECT_EQ(c.tp + c.fp + c.tn, 0);
}

TEST(Confusion, OrderDoesNotMatter) {
  auto preds = ids({M, N, M, N, N, M, M});
  auto gold = ids({M, M, N, N, M, N, M});
  auto a = confusion(preds, gold);
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = preds;
    auto g = gold;
    rng.shuffle(p);
    rng.shuffle(g);
    auto b = confusion(p, g);
    EXPECT_EQ(a.tp, b.tp);
    EXPECT_EQ(a.fp, b.fp);
    EXPECT_EQ(a.tn, b.tn);
    EXPECT_EQ(a.fn, b.fn);
  }
}

TEST(Confusion, IdErrors) {
  auto gold = ids({M, N});
  LabeledIds dup{{"r0", M}, {"r0", N}};
  EXPECT_THROW(confusion(dup, gold), Error);
  try {
    confusion(LabeledIds{{"r0", M}, {"zz", N}}, gold);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIdMismatch);
  }
  try {
    confusion(ids({M}), gold);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIdMismatch);
  }
  try {
    confusion(gold, dup);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDuplicateKey);
  }
}

TEST(Metrics, DirectArithmetic) {
  ConfusionCounts c{.tp = 7, .fp = 3, .tn = 8, .fn = 2};
  auto m = compute_metrics(c);
  EXPECT_DOUBLE_EQ(m.acc, 0.75);
  EXPECT_DOUBLE_EQ(m.precision, 0.7);
  EXPECT_NEAR(m.recall, 0.7778, 5e-5);
  EXPECT_NEAR(m.f1, 0.7368, 5e-5);
  EXPECT_FALSE(m.degenerate);
}

TEST(Metrics, ReferenceHarmonicMeans) {
  EXPECT_NEAR(f1_score(0.6125, 0.7778), 0.6853, 5e-4);
  EXPECT_NEAR(f1_score(0.6167, 0.5873), 0.6016, 5e-4);
}

TEST(Metrics, ZeroDenominatorsAreZeroAndFlagged) {
  auto m = compute_metrics(ConfusionCounts{.tp = 0, .fp = 0, .tn = 4, .fn = 3});
  EXPECT_EQ(m.precision, 0.0);
  EXPECT_EQ(m.recall, 0.0);
  EXPECT_EQ(m.f1, 0.0);
  EXPECT_TRUE(m.degenerate);
  EXPECT_NEAR(m.acc, 4.0 / 7.0, 1e-15);
  EXPECT_THROW(compute_metrics(ConfusionCounts{}), Error);
}

TEST(Metrics, FnToTpNeverHurts) {
  Rng rng(17);
  for (int trial = 0; trial < 5000; ++trial) {
    ConfusionCounts c{.tp = static_cast<long>(rng.below(20)), .fp = static_cast<long>(rng.below(20)),
                      .tn = static_cast<long>(rng.below(20)), .fn = 1 + static_cast<long>(rng.below(20))};
    auto before = compute_metrics(c);
    --c.fn;
    ++c.tp;
    auto after = compute_metrics(c);
    EXPECT_GE(after.acc, before.acc);
    EXPECT_GE(after.precision, before.precision);
    EXPECT_GE(after.recall, before.recall);
    EXPECT_GE(after.f1, before.f1);
  }
}

TEST(Metrics, BoundsAndHarmonicMean) {
  Rng rng(5);
  for (int trial = 0; trial < 5000; ++trial) {
    ConfusionCounts c{.tp = static_cast<long>(rng.below(30)), .fp = static_cast<long>(rng.below(30)),
                      .tn = static_cast<long>(rng.below(30)), .fn = static_cast<long>(rng.below(30))};
    if (c.total() == 0) continue;
    auto m = compute_metrics(c);
    for (double v : {m.acc, m.precision, m.recall, m.f1}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    if (m.precision + m.recall > 0)
      EXPECT_NEAR(m.f1, 2 * m.precision * m.recall / (m.precision + m.recall), 1e-15);
    EXPECT_LE(m.f1, std::max(m.precision, m.recall) + 1e-15);
    EXPECT_GE(m.f1 + 1e-15, std::min(m.precision, m.recall));
  }
}
