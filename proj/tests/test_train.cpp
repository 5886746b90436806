#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "mcidet/checkpoint.hpp"
#include "mcidet/train.hpp"

namespace fs = std::filesystem;
using namespace mcidet;

namespace {

TrainConfig quick_config() {
  TrainConfig c;
  c.learning_rate = 1e-2;
  c.epochs = 15;
  c.window_seconds = 1.0;
  c.model = {.recurrent_layers = 2, .hidden = 8, .projection = 4};
  c.seed = 3;
  return c;
}

Dataset quick_data(int patients, double effect, int layers = 6, int informative = 4, std::uint64_t seed = 0) {
  return synth_dataset({.n_patients = patients, .recs_per_patient = 2, .layers = layers, .frames = 50, .dim = 4,
                        .informative_layer = informative, .effect_size = effect, .seed = seed});
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST(Train, OverfitsTinyStrongSignal) {
  auto data = quick_data(8, 5.0);
  auto sp = speaker_split(data, {SplitMode::kSpeaker, 0.25, 1});
  auto res = train(quick_config(), sp.train, sp.val, FusionConfig{FusionInit::kUniform, 1, 0.0});
  double best_train = 0.0;
  for (const auto& e : res.history) best_train = std::max(best_train, e.train->acc);
  EXPECT_EQ(best_train, 1.0);
}

TEST(Train, TraceShapeAndPriorSnapshot) {
  auto data = quick_data(6, 1.0);
  auto sp = speaker_split(data, {SplitMode::kSpeaker, 0.34, 1});
  auto cfg = quick_config();
  cfg.epochs = 4;
  auto res = train(cfg, sp.train, sp.val, FusionConfig{FusionInit::kPrior, 4, 5.0});
  ASSERT_EQ(res.trace.rows.size(), 4u);
  ASSERT_EQ(res.history.size(), 4u);
  const double e5 = std::exp(5.0);
  EXPECT_NEAR(res.trace.initial[3], e5 / (e5 + 5.0), 1e-12);
  for (const auto& row : res.trace.rows) {
    ASSERT_EQ(row.size(), 6u);
    double sum = 0.0;
    for (double w : row) sum += w;
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
  EXPECT_GE(res.best_epoch, 1);
  EXPECT_LE(res.best_epoch, 4);
  EXPECT_EQ(res.history[res.best_epoch - 1].epoch, res.best_epoch);
}

TEST(Train, DeterministicUnderSeed) {
  auto data = quick_data(6, 1.0);
  auto sp = speaker_split(data, {SplitMode::kSpeaker, 0.34, 1});
  auto cfg = quick_config();
  cfg.epochs = 3;
  auto a = train(cfg, sp.train, sp.val, FusionConfig{FusionInit::kPrior, 4, 5.0});
  auto b = train(cfg, sp.train, sp.val, FusionConfig{FusionInit::kPrior, 4, 5.0});
  EXPECT_EQ(metrics_log_csv(a.history), metrics_log_csv(b.history));
  EXPECT_EQ(trace_csv(a.trace), trace_csv(b.trace));
  EXPECT_EQ(a.last.head_w, b.last.head_w);
  cfg.seed = 4;
  auto c = train(cfg, sp.train, sp.val, FusionConfig{FusionInit::kPrior, 4, 5.0});
  EXPECT_NE(a.last.head_w, c.last.head_w);
  // initial parameters do not depend on the run seed
  EXPECT_EQ(a.trace.initial, c.trace.initial);
}

TEST(Train, Errors) {
  auto data = quick_data(4, 1.0);
  Dataset empty;
  try {
    train(quick_config(), empty, data, FusionConfig{FusionInit::kPrior, 4, 5.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmpty);
  }
  EXPECT_THROW(train(quick_config(), data, empty, FusionConfig{FusionInit::kPrior, 4, 5.0}), Error);
  auto other = quick_data(4, 1.0, 5, 2);
  EXPECT_THROW(train(quick_config(), data, other, FusionConfig{FusionInit::kUniform, 1, 0}), Error);
  auto bad = quick_config();
  bad.batch_size = 0;
  EXPECT_THROW(train(bad, data, data, FusionConfig{FusionInit::kPrior, 4, 5.0}), Error);
}

TEST(Train, DivergenceIsReported) {
  auto data = quick_data(4, 1.0);
  auto cfg = quick_config();
  cfg.learning_rate = 1e30;
  cfg.epochs = 3;
  try {
    train(cfg, data, data, FusionConfig{FusionInit::kUniform, 1, 0});
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_TRUE(e.code() == ErrorCode::kDivergence || e.code() == ErrorCode::kNonFinite) << e.what();
  }
}

TEST(TraceExport, RowsNormalizationAndStability) {
  WeightTrace t;
  Rng rng(1);
  for (int e = 0; e < 3; ++e) {
    Mat<double> p(24, 1);
    for (int i = 0; i < 24; ++i) p(i, 0) = rng.normal();
    Mat<double> w = softmax(p);
    t.rows.emplace_back(w.data(), w.data() + 24);
  }
  auto dir = fs::temp_directory_path() / "mcidet_trace";
  fs::create_directories(dir);
  trace_export(t, dir / "a.csv");
  trace_export(t, dir / "b.csv");
  std::ifstream fa(dir / "a.csv"), fb(dir / "b.csv");
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  EXPECT_EQ(sa.str(), sb.str());
  auto lines = lines_of(sa.str());
  ASSERT_EQ(lines.size(), 73u);
  EXPECT_EQ(lines[0], "epoch,layer,weight");
  std::vector<double> sums(3, 0.0);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    int e, l;
    double w;
    ASSERT_EQ(std::sscanf(lines[i].c_str(), "%d,%d,%lf", &e, &l, &w), 3);
    sums[e - 1] += w;
  }
  for (double s : sums) EXPECT_NEAR(s, 1.0, 1e-6);
  EXPECT_EQ(lines_of(trace_csv(t, true)).size(), 25u);
  EXPECT_EQ(trace_csv(t, true).substr(0, 23), "epoch,layer,weight\n3,1,");
  EXPECT_THROW(trace_csv(WeightTrace{}), Error);
  auto back = trace_from_json(trace_to_json(t));
  EXPECT_EQ(back.rows, t.rows);
}

TEST(LayerScan, SingleLayerInputGivesOneRow) {
  auto data = quick_data(6, 3.0, 1, 1);
  auto sp = speaker_split(data, {SplitMode::kSpeaker, 0.34, 1});
  auto cfg = quick_config();
  cfg.epochs = 2;
  auto scan = layer_scan(cfg, sp.train, sp.val, &sp.val);
  ASSERT_EQ(scan.rows.size(), 1u);
  EXPECT_EQ(scan.rows[0].layer, 1);
  EXPECT_TRUE(scan.rows[0].test_or.has_value());
  EXPECT_EQ(lines_of(layer_scan_csv(scan))[0], "layer,val_or,val_ensemble,test_or,test_ensemble");
}

TEST(LayerScan, FindsInformativeLayer) {
  auto data = quick_data(16, 4.0, 5, 3, 2);
  auto sp = speaker_split(data, {SplitMode::kSpeaker, 0.25, 1});
  auto cfg = quick_config();
  cfg.epochs = 8;
  auto scan = layer_scan(cfg, sp.train, sp.val);
  ASSERT_EQ(scan.rows.size(), 5u);
  auto peak = scan.peak(&LayerScanRow::val_or);
  EXPECT_EQ(peak.layer, 3);
  EXPECT_EQ(peak.acc, 1.0);
  EXPECT_FALSE(scan.peak(&LayerScanRow::test_or).has_value());
}

TEST(CrossValidate, FoldTableShape) {
  auto data = quick_data(10, 3.0);
  auto cfg = quick_config();
  cfg.epochs = 2;
  cfg.eval_train = false;
  auto folds = cross_validate(cfg, data, 5, 1, FusionConfig{FusionInit::kUniform, 1, 0});
  ASSERT_EQ(folds.size(), 5u);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(folds[i].fold, i + 1);
    EXPECT_EQ(folds[i].final_weights.size(), 6u);
    EXPECT_EQ(folds[i].argmax_layer, argmax_layer(folds[i].final_weights));
  }
  auto lines = lines_of(cv_csv(folds));
  ASSERT_EQ(lines.size(), 6u);
  EXPECT_EQ(lines[0], "Fold,ACC,Precision,Recall,F1");
}

TEST(MetricsLog, Format) {
  EpochMetrics e;
  e.epoch = 2;
  e.train = MetricsReport{1.0, 1.0, 1.0, 1.0, false};
  e.val = MetricsReport{0.5, 0.25, 1.0, 0.4, false};
  auto lines = lines_of(metrics_log_csv({e}));
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0], "epoch,split,acc,precision,recall,f1");
  EXPECT_EQ(lines[1], "2,train,1.000000,1.000000,1.000000,1.000000");
  EXPECT_EQ(lines[2], "2,val,0.500000,0.250000,1.000000,0.400000");
}

TEST(Evaluate, RecordingLevelOr) {
  auto data = quick_data(4, 0.0);
  ModelConfig mc{.layer_count = 6, .input_dim = 4, .recurrent_layers = 1, .hidden = 4, .projection = 2};
  auto params = init_params<float>(mc, FusionConfig{FusionInit::kUniform, 1, 0.0}, 1);
  // Force every segment to MCI through the head bias.
  params.head_b(1, 0) = 100.0f;
  auto ev = evaluate(params, data, Logic::kOr, 1.0);
  EXPECT_EQ(ev.verdicts.size(), data.size());
  EXPECT_EQ(ev.counts.tp + ev.counts.fp, static_cast<long>(data.size()));
  EXPECT_EQ(ev.metrics.recall, 1.0);
}

TEST(Checkpoint, RoundTrip) {
  ModelConfig mc{.layer_count = 5, .input_dim = 3, .recurrent_layers = 2, .hidden = 4, .projection = 3};
  const FusionConfig fc{FusionInit::kPrior, 2, 8.0};
  auto params = init_params<float>(mc, fc, 4);
  auto dir = fs::temp_directory_path() / "mcidet_ckpt";
  fs::create_directories(dir);
  save_checkpoint(dir / "m.bin", params, fc);
  auto ck = load_checkpoint(dir / "m.bin");
  EXPECT_EQ(ck.params.config, mc);
  EXPECT_EQ(ck.fusion.major_layer, 2);
  EXPECT_EQ(ck.fusion.major_weight, 8.0);
  EXPECT_EQ(ck.fusion.init, FusionInit::kPrior);
  auto a = params.tensors();
  auto b = ck.params.tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i].tensor, *b[i].tensor) << a[i].name;

  auto bytes = encode_checkpoint(params, fc);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), Error);
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(decode_checkpoint(bytes), Error);
}
