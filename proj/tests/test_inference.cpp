#include <gtest/gtest.h>

#include <cmath>

#include "mcidet/inference.hpp"

using namespace mcidet;

namespace {

std::vector<SegmentPrediction> preds(std::initializer_list<std::pair<double, double>> ps) {
  std::vector<SegmentPrediction> out;
  for (auto [nc, mci] : ps) out.push_back({"rec", {}, nc, mci});
  return out;
}

std::vector<SegmentPrediction> random_preds(Rng& rng) {
  const int n = 1 + static_cast<int>(rng.below(8));
  std::vector<SegmentPrediction> out;
  for (int i = 0; i < n; ++i) {
    // A fair share of values sit exactly on or right next to 0.5.
    double p;
    switch (rng.below(4)) {
      case 0: p = 0.5; break;
      case 1: p = std::nextafter(0.5, rng.bernoulli(0.5) ? 1.0 : 0.0); break;
      case 2: p = 0.5 + rng.uniform(-1e-9, 1e-9); break;
      default: p = rng.uniform(); break;
    }
    out.push_back({"rec", {}, 1.0 - p, p});
  }
  return out;
}

}  // namespace

TEST(Ensemble, Examples) {
  auto v = aggregate_ensemble(preds({{0.6, 0.4}, {0.4, 0.6}, {0.45, 0.55}}));
  EXPECT_EQ(v.label, Label::kMCI);
  EXPECT_NEAR(v.p_nc_sum, 1.45, 1e-12);
  EXPECT_NEAR(v.p_mci_sum, 1.55, 1e-12);
  EXPECT_EQ(aggregate_ensemble(preds({{0.7, 0.3}})).label, Label::kNC);
  EXPECT_EQ(aggregate_ensemble(preds({{0.5, 0.5}})).label, Label::kMCI);
}

TEST(Or, Examples) {
  auto v = aggregate_or(preds({{0.8, 0.2}, {0.6, 0.4}, {0.3, 0.7}}));
  EXPECT_EQ(v.label, Label::kMCI);
  EXPECT_EQ(v.trigger_segment, 2);
  auto n = aggregate_or(preds({{0.8, 0.2}, {0.6, 0.4}, {0.9, 0.1}}));
  EXPECT_EQ(n.label, Label::kNC);
  EXPECT_EQ(n.trigger_segment, -1);
  EXPECT_EQ(aggregate_or(preds({{0.1, 0.9}})).label, Label::kMCI);
}

TEST(Aggregate, EmptyIsError) {
  std::vector<SegmentPrediction> none;
  EXPECT_THROW(aggregate_or(none), Error);
  EXPECT_THROW(aggregate_ensemble(none), Error);
}

TEST(Aggregate, EnsembleImpliesOr) {
  Rng rng(1);
  for (int trial = 0; trial < 20000; ++trial) {
    auto p = random_preds(rng);
    if (aggregate_ensemble(p).label == Label::kMCI) EXPECT_EQ(aggregate_or(p).label, Label::kMCI);
  }
}

TEST(Aggregate, PermutationInvariant) {
  Rng rng(2);
  for (int trial = 0; trial < 2000; ++trial) {
    auto p = random_preds(rng);
    auto q = p;
    rng.shuffle(q);
    EXPECT_EQ(aggregate_ensemble(p).label, aggregate_ensemble(q).label);
    EXPECT_EQ(aggregate_or(p).label, aggregate_or(q).label);
    EXPECT_EQ(aggregate_ensemble(p).p_mci_sum, aggregate_ensemble(q).p_mci_sum);
  }
}

TEST(Aggregate, SingleSegmentLogicsAgree) {
  Rng rng(3);
  for (int trial = 0; trial < 2000; ++trial) {
    const double p = trial % 3 == 0 ? 0.5 : rng.uniform();
    auto s = preds({{1.0 - p, p}});
    EXPECT_EQ(aggregate_or(s).label, aggregate_ensemble(s).label);
  }
}

TEST(ClassProbabilities, MatchesLongDoubleSoftmax) {
  Rng rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const double a = rng.uniform(-40, 40);
    const double b = rng.uniform(-40, 40);
    auto [p0, p1] = class_probabilities(a, b);
    const long double e0 = std::exp(static_cast<long double>(a));
    const long double e1 = std::exp(static_cast<long double>(b));
    EXPECT_NEAR(p0, static_cast<double>(e0 / (e0 + e1)), 1e-12);
    EXPECT_NEAR(p1, static_cast<double>(e1 / (e0 + e1)), 1e-12);
    EXPECT_NEAR(p0 + p1, 1.0, 1e-12);
  }
}

namespace {

ModelParams<double> small_model(int L, int D) {
  ModelConfig mc{.layer_count = L, .input_dim = D, .recurrent_layers = 2, .hidden = 6, .projection = 4};
  return init_params<double>(mc, FusionConfig{FusionInit::kUniform, 1, 0.0}, 9);
}

FeatureSequence noise(int L, int T, int D, double fps, std::uint64_t seed) {
  FeatureSequence s(L, T, D, fps);
  Rng rng(seed);
  for (float& v : s.data()) v = static_cast<float>(rng.normal());
  return s;
}

}  // namespace

TEST(PredictSegments, NinetyFiveSecondsGivesFourSegments) {
  auto model = small_model(3, 4);
  auto seq = noise(3, 95 * 50, 4, 50.0, 1);
  auto p = predict_segments(model, seq, 30.0, 1, "r1");
  ASSERT_EQ(p.size(), 4u);
  EXPECT_EQ(p[3].range.size(), 250);
  for (const auto& s : p) EXPECT_EQ(s.recording_id, "r1");
}

TEST(PredictSegments, DeterministicAndMatchesSoftmaxOfLogits) {
  auto model = small_model(3, 4);
  auto seq = noise(3, 500, 4, 50.0, 2);
  auto a = predict_segments(model, seq, 3.0);
  auto b = predict_segments(model, seq, 3.0);
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].p_mci, b[i].p_mci);
    auto cache = forward(model, seq, a[i].range, false);
    const long double l0 = cache.logits(0, 0);
    const long double l1 = cache.logits(1, 0);
    const long double pm = 1.0L / (1.0L + std::exp(l0 - l1));
    EXPECT_NEAR(a[i].p_mci, static_cast<double>(pm), 1e-8);
    EXPECT_NEAR(a[i].p_nc + a[i].p_mci, 1.0, 1e-6);
    EXPECT_GE(a[i].p_mci, 0.0);
    EXPECT_LE(a[i].p_mci, 1.0);
  }
}

TEST(PredictSegments, DimensionMismatch) {
  auto model = small_model(3, 4);
  auto seq = noise(3, 50, 5, 50.0, 3);
  try {
    predict_segments(model, seq, 30.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
  }
  auto wrong_layers = noise(4, 50, 4, 50.0, 3);
  EXPECT_THROW(predict_segments(model, wrong_layers, 30.0), Error);
}

TEST(Logic, Parse) {
  EXPECT_EQ(parse_logic("or"), Logic::kOr);
  EXPECT_EQ(parse_logic("ensemble"), Logic::kEnsemble);
  EXPECT_THROW(parse_logic("vote"), Error);
}
