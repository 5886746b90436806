#pragma once

// Training loop, recording-level evaluation, per-layer classifier sweep,
// speaker-grouped cross-validation, and the CSV/JSON artifacts they emit.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcidet/adamw.hpp"
#include "mcidet/error.hpp"
#include "mcidet/feature_store.hpp"
#include "mcidet/inference.hpp"
#include "mcidet/metrics.hpp"
#include "mcidet/model.hpp"
#include "mcidet/rng.hpp"
#include "mcidet/splits.hpp"

namespace mcidet {

// Initial weights do not depend on the run seed, so every experiment starts
// from the same parameters.
inline constexpr std::uint64_t kFixedInitSeed = 20240601;

struct TrainConfig {
  int batch_size = 4;
  double learning_rate = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double weight_decay = 0.01;
  int epochs = 15;
  std::uint64_t seed = 0;
  std::uint64_t init_seed = kFixedInitSeed;
  double window_seconds = 30.0;
  int min_frames = 1;
  // Architecture; layer_count and input_dim are taken from the data.
  ModelConfig model{};
  Logic selection_logic = Logic::kOr;
  bool eval_train = true;
};

inline const std::vector<double>& learning_rate_grid() {
  static const std::vector<double> grid{3e-5, 5e-5, 1e-4};
  return grid;
}

inline const std::vector<double>& major_weight_grid() {
  static const std::vector<double> grid{0.0, 1.0, 5.0, 8.0};
  return grid;
}

inline void validate(const TrainConfig& c) {
  if (c.batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  if (c.epochs < 1) throw Error(ErrorCode::kInvalidArgument, "epochs must be >= 1");
  if (!(c.window_seconds > 0.0)) throw Error(ErrorCode::kInvalidArgument, "window_seconds must be > 0");
  validate(AdamWConfig{c.learning_rate, c.beta1, c.beta2, 1e-8, c.weight_decay});
}

// softmax(p) per epoch. `initial` is the snapshot before the first update;
// rows[e] is taken after epoch e + 1.
struct WeightTrace {
  std::vector<double> initial;
  std::vector<std::vector<double>> rows;
};

template <class S>
std::vector<double> normalized_weights(const ModelParams<S>& params) {
  Mat<double> w = softmax<double>(params.fusion.template cast<double>());
  return {w.data(), w.data() + w.size()};
}

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<MetricsReport> train;
  MetricsReport val;
};

struct TrainResult {
  ModelParams<float> best;  // highest validation accuracy, earliest epoch on ties
  ModelParams<float> last;
  FusionConfig fusion;
  WeightTrace trace;
  std::vector<EpochMetrics> history;
  int best_epoch = 0;
};

// ---------------------------------------------------------------------------
// Evaluation

struct RecordingPredictions {
  UtteranceRecord record;
  std::vector<SegmentPrediction> segments;
};

template <class S>
std::vector<RecordingPredictions> predict_dataset(const ModelParams<S>& params, const Dataset& ds,
                                                  double window_seconds, int min_frames) {
  std::vector<RecordingPredictions> out;
  out.reserve(ds.size());
  for (const auto& r : ds) {
    auto seq = r.load();
    out.push_back({r.record, predict_segments(params, *seq, window_seconds, min_frames, r.record.recording_id)});
  }
  return out;
}

struct Evaluation {
  std::vector<AggregationVerdict> verdicts;
  ConfusionCounts counts;
  MetricsReport metrics;
};

inline Evaluation score(const std::vector<RecordingPredictions>& preds, Logic logic) {
  Evaluation e;
  for (const auto& p : preds) {
    auto v = aggregate(logic, p.segments);
    e.counts.add(v.label, p.record.label);
    e.verdicts.push_back(std::move(v));
  }
  e.metrics = compute_metrics(e.counts);
  return e;
}

template <class S>
Evaluation evaluate(const ModelParams<S>& params, const Dataset& ds, Logic logic, double window_seconds,
                    int min_frames = 1) {
  return score(predict_dataset(params, ds, window_seconds, min_frames), logic);
}

// ---------------------------------------------------------------------------
// Training

namespace detail {

struct SegmentRef {
  std::size_t recording;
  FrameRange range;
  Label label;
};

inline std::vector<SegmentRef> enumerate_segments(const Dataset& ds, double window_seconds, int min_frames,
                                                  int& layers, int& dim) {
  std::vector<SegmentRef> out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto seq = ds[i].load();
    if (i == 0) {
      layers = seq->layers();
      dim = seq->dim();
    } else if (seq->layers() != layers || seq->dim() != dim) {
      throw Error(ErrorCode::kDimensionMismatch, "recording " + ds[i].record.recording_id + " has shape L=" +
                                                     std::to_string(seq->layers()) + " D=" +
                                                     std::to_string(seq->dim()) + ", expected L=" +
                                                     std::to_string(layers) + " D=" + std::to_string(dim));
    }
    for (auto r : segment_ranges(seq->frames(), seq->fps(), window_seconds, min_frames))
      out.push_back({i, r, ds[i].record.label});
  }
  return out;
}

}  // namespace detail

// The test set is deliberately absent from this signature.
inline TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& val_set,
                         const FusionConfig& fusion,
                         const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  validate(config);
  if (train_set.empty()) throw Error(ErrorCode::kEmpty, "empty training split");
  if (val_set.empty()) throw Error(ErrorCode::kEmpty, "empty validation split");

  int layers = 0;
  int dim = 0;
  auto segments = detail::enumerate_segments(train_set, config.window_seconds, config.min_frames, layers, dim);
  {
    int vl = 0;
    int vd = 0;
    detail::enumerate_segments(val_set, config.window_seconds, config.min_frames, vl, vd);
    if (vl != layers || vd != dim) throw Error(ErrorCode::kDimensionMismatch, "validation features differ in shape");
  }

  ModelConfig mc = config.model;
  mc.layer_count = layers;
  mc.input_dim = dim;
  TrainResult result;
  result.fusion = fusion;
  auto params = init_params<float>(mc, fusion, config.init_seed);
  result.trace.initial = normalized_weights(params);

  const AdamWConfig opt{config.learning_rate, config.beta1, config.beta2, 1e-8, config.weight_decay};
  AdamWState<float> state;
  Rng shuffle_rng(derive_seed(config.seed, "shuffle"));
  Rng dropout_rng(derive_seed(config.seed, "dropout"));

  std::vector<std::size_t> order(segments.size());
  double best_acc = -1.0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      auto grads = Gradients<float>::zeros(mc);
      for (std::size_t b = start; b < stop; ++b) {
        const auto& ref = segments[order[b]];
        auto seq = train_set[ref.recording].load();
        auto cache = forward(params, *seq, ref.range, /*train=*/true, &dropout_rng);
        const double loss = cross_entropy(cache.logits, ref.label);
        if (!std::isfinite(loss))
          throw Error(ErrorCode::kDivergence, "loss became non-finite in epoch " + std::to_string(epoch));
        loss_sum += loss;
        grads += backward(params, cache, ref.label);
      }
      grads *= 1.0f / static_cast<float>(stop - start);
      adamw_step(params, grads, state, opt);
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = loss_sum / static_cast<double>(segments.size());
    if (config.eval_train)
      em.train = evaluate(params, train_set, config.selection_logic, config.window_seconds, config.min_frames).metrics;
    em.val = evaluate(params, val_set, config.selection_logic, config.window_seconds, config.min_frames).metrics;
    result.trace.rows.push_back(normalized_weights(params));
    if (em.val.acc > best_acc) {
      best_acc = em.val.acc;
      result.best = params;
      result.best_epoch = epoch;
    }
    result.history.push_back(em);
    if (on_epoch) on_epoch(em);
  }
  result.last = std::move(params);
  return result;
}

// ---------------------------------------------------------------------------
// Per-layer sweep

struct LayerScanRow {
  int layer = 0;  // 1-based
  double val_or = 0.0;
  double val_ensemble = 0.0;
  std::optional<double> test_or;
  std::optional<double> test_ensemble;
};

struct LayerPeak {
  int layer = 0;
  double acc = 0.0;
};

struct LayerScanResult {
  std::vector<LayerScanRow> rows;

  // First layer attaining the maximum of the selected column.
  LayerPeak peak(double LayerScanRow::*column) const {
    LayerPeak p{0, -1.0};
    for (const auto& r : rows)
      if (r.*column > p.acc) p = {r.layer, r.*column};
    return p;
  }
  std::optional<LayerPeak> peak(std::optional<double> LayerScanRow::*column) const {
    std::optional<LayerPeak> p;
    for (const auto& r : rows)
      if ((r.*column).has_value() && (!p || *(r.*column) > p->acc)) p = LayerPeak{r.layer, *(r.*column)};
    return p;
  }
};

// One classifier per layer, each fed exactly that layer's features.
inline LayerScanResult layer_scan(const TrainConfig& config, const Dataset& train_set, const Dataset& val_set,
                                  const Dataset* test_set = nullptr,
                                  const std::function<void(const LayerScanRow&)>& on_layer = {}) {
  if (train_set.empty()) throw Error(ErrorCode::kEmpty, "empty training split");
  const int L = train_set.front().load()->layers();
  LayerScanResult out;
  const FusionConfig single{FusionInit::kUniform, 1, 0.0};
  for (int l = 0; l < L; ++l) {
    auto tr = slice_layer(train_set, l);
    auto va = slice_layer(val_set, l);
    auto res = train(config, tr, va, single);
    LayerScanRow row;
    row.layer = l + 1;
    auto val_preds = predict_dataset(res.best, va, config.window_seconds, config.min_frames);
    row.val_or = score(val_preds, Logic::kOr).metrics.acc;
    row.val_ensemble = score(val_preds, Logic::kEnsemble).metrics.acc;
    if (test_set != nullptr && !test_set->empty()) {
      auto te = slice_layer(*test_set, l);
      auto test_preds = predict_dataset(res.best, te, config.window_seconds, config.min_frames);
      row.test_or = score(test_preds, Logic::kOr).metrics.acc;
      row.test_ensemble = score(test_preds, Logic::kEnsemble).metrics.acc;
    }
    out.rows.push_back(row);
    if (on_layer) on_layer(row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross-validation

struct FoldResult {
  int fold = 0;  // 1-based
  MetricsReport val;
  std::vector<double> final_weights;  // softmax(p) after the last epoch
  int argmax_layer = 0;               // 1-based
};

inline int argmax_layer(const std::vector<double>& w) {
  return static_cast<int>(std::max_element(w.begin(), w.end()) - w.begin()) + 1;
}

inline std::vector<FoldResult> cross_validate(const TrainConfig& config, const Dataset& data, int k,
                                              std::uint64_t split_seed, const FusionConfig& fusion,
                                              Logic logic = Logic::kOr,
                                              const std::function<void(const FoldResult&)>& on_fold = {}) {
  std::vector<FoldResult> out;
  auto folds = kfold(data, k, split_seed);
  for (int f = 0; f < k; ++f) {
    auto res = train(config, folds[f].train, folds[f].val, fusion);
    FoldResult fr;
    fr.fold = f + 1;
    fr.val = evaluate(res.best, folds[f].val, logic, config.window_seconds, config.min_frames).metrics;
    fr.final_weights = res.trace.rows.back();
    fr.argmax_layer = argmax_layer(fr.final_weights);
    out.push_back(fr);
    if (on_fold) on_fold(fr);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Artifacts

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open for writing: " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

}  // namespace detail

// CSV `epoch,layer,weight`, 1-based epoch and layer. With final_only, only the
// last epoch is written.
inline std::string trace_csv(const WeightTrace& trace, bool final_only = false) {
  if (trace.rows.empty()) throw Error(ErrorCode::kEmpty, "empty weight trace");
  std::ostringstream os;
  os << "epoch,layer,weight\n";
  const std::size_t first = final_only ? trace.rows.size() - 1 : 0;
  for (std::size_t e = first; e < trace.rows.size(); ++e)
    for (std::size_t l = 0; l < trace.rows[e].size(); ++l)
      os << e + 1 << ',' << l + 1 << ',' << detail::fmt("%.10g", trace.rows[e][l]) << '\n';
  return os.str();
}

inline void trace_export(const WeightTrace& trace, const std::filesystem::path& path, bool final_only = false) {
  detail::write_text(path, trace_csv(trace, final_only));
}

inline nlohmann::json trace_to_json(const WeightTrace& t) { return {{"initial", t.initial}, {"rows", t.rows}}; }

inline WeightTrace trace_from_json(const nlohmann::json& j) {
  WeightTrace t;
  try {
    t.initial = j.at("initial").get<std::vector<double>>();
    t.rows = j.at("rows").get<std::vector<std::vector<double>>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadHeader, std::string("trace: ") + e.what());
  }
  return t;
}

inline std::string metrics_row(const MetricsReport& m) {
  return detail::fmt("%.6f", m.acc) + ',' + detail::fmt("%.6f", m.precision) + ',' + detail::fmt("%.6f", m.recall) +
         ',' + detail::fmt("%.6f", m.f1);
}

// CSV `epoch,split,acc,precision,recall,f1`.
inline std::string metrics_log_csv(const std::vector<EpochMetrics>& history) {
  std::ostringstream os;
  os << "epoch,split,acc,precision,recall,f1\n";
  for (const auto& e : history) {
    if (e.train) os << e.epoch << ",train," << metrics_row(*e.train) << '\n';
    os << e.epoch << ",val," << metrics_row(e.val) << '\n';
  }
  return os.str();
}

// Per-fold table: Fold,ACC,Precision,Recall,F1.
inline std::string cv_csv(const std::vector<FoldResult>& folds) {
  std::ostringstream os;
  os << "Fold,ACC,Precision,Recall,F1\n";
  for (const auto& f : folds) os << f.fold << ',' << metrics_row(f.val) << '\n';
  return os.str();
}

inline std::string layer_scan_csv(const LayerScanResult& scan) {
  const bool has_test = !scan.rows.empty() && scan.rows.front().test_or.has_value();
  std::ostringstream os;
  os << "layer,val_or,val_ensemble" << (has_test ? ",test_or,test_ensemble" : "") << '\n';
  for (const auto& r : scan.rows) {
    os << r.layer << ',' << detail::fmt("%.6f", r.val_or) << ',' << detail::fmt("%.6f", r.val_ensemble);
    if (has_test) os << ',' << detail::fmt("%.6f", *r.test_or) << ',' << detail::fmt("%.6f", *r.test_ensemble);
    os << '\n';
  }
  return os.str();
}

}  // namespace mcidet
