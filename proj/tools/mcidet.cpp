// Command-line front end: synthetic data, augmentation, splitting, training,
// layer sweeps, cross-validation and inference.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mcidet/mcidet.hpp"

namespace fs = std::filesystem;
using namespace mcidet;

namespace {

struct TrainOptions {
  std::string manifest;
  std::string features;
  std::string fusion = "prior";
  int major_layer = 18;
  double major_weight = 5.0;
  double lr = 3e-5;
  double weight_decay = 0.01;
  int epochs = 15;
  int batch = 4;
  std::uint64_t seed = 0;
  std::uint64_t init_seed = kFixedInitSeed;
  double window = 30.0;
  int recurrent_layers = 5;
  int hidden = 256;
  int projection = 64;
  double dropout = 0.1;
  std::string split_mode = "speaker";
  double val_ratio = 0.2;
  bool stream = false;
};

void add_data_options(CLI::App* cmd, TrainOptions& o) {
  cmd->add_option("--manifest", o.manifest, "JSON-Lines manifest")->required();
  cmd->add_option("--features", o.features, "directory that manifest paths are relative to");
  cmd->add_flag("--stream", o.stream, "read feature files on demand instead of preloading");
}

void add_train_options(CLI::App* cmd, TrainOptions& o) {
  cmd->add_option("--lr", o.lr, "learning rate")->capture_default_str();
  cmd->add_option("--weight-decay", o.weight_decay, "AdamW decoupled weight decay")->capture_default_str();
  cmd->add_option("--epochs", o.epochs)->capture_default_str();
  cmd->add_option("--batch", o.batch, "segments per batch")->capture_default_str();
  cmd->add_option("--seed", o.seed, "shuffle/dropout/split seed")->capture_default_str();
  cmd->add_option("--init-seed", o.init_seed, "parameter initialization seed")->capture_default_str();
  cmd->add_option("--window", o.window, "segment length in seconds")->capture_default_str();
  cmd->add_option("--recurrent-layers", o.recurrent_layers)->capture_default_str();
  cmd->add_option("--hidden", o.hidden, "hidden size per direction")->capture_default_str();
  cmd->add_option("--projection", o.projection)->capture_default_str();
  cmd->add_option("--dropout", o.dropout)->capture_default_str();
  cmd->add_option("--split-mode", o.split_mode, "speaker|general")->capture_default_str();
  cmd->add_option("--val-ratio", o.val_ratio)->capture_default_str();
}

void add_fusion_options(CLI::App* cmd, TrainOptions& o) {
  cmd->add_option("--fusion", o.fusion, "prior|uniform")->capture_default_str();
  cmd->add_option("--major-layer", o.major_layer, "1-based major layer c")->capture_default_str();
  cmd->add_option("--major-weight", o.major_weight, "major weight k")->capture_default_str();
}

TrainConfig train_config(const TrainOptions& o) {
  TrainConfig c;
  c.batch_size = o.batch;
  c.learning_rate = o.lr;
  c.weight_decay = o.weight_decay;
  c.epochs = o.epochs;
  c.seed = o.seed;
  c.init_seed = o.init_seed;
  c.window_seconds = o.window;
  c.model.recurrent_layers = o.recurrent_layers;
  c.model.hidden = o.hidden;
  c.model.projection = o.projection;
  c.model.dropout = o.dropout;
  return c;
}

FusionConfig fusion_config(const TrainOptions& o) {
  if (o.fusion != "prior" && o.fusion != "uniform")
    throw Error(ErrorCode::kInvalidArgument, "--fusion must be prior or uniform");
  return {o.fusion == "prior" ? FusionInit::kPrior : FusionInit::kUniform, o.major_layer, o.major_weight};
}

SplitSpec split_spec(const TrainOptions& o) {
  if (o.split_mode != "speaker" && o.split_mode != "general")
    throw Error(ErrorCode::kInvalidArgument, "--split-mode must be speaker or general");
  return {o.split_mode == "speaker" ? SplitMode::kSpeaker : SplitMode::kGeneral, o.val_ratio, o.seed};
}

Dataset load(const TrainOptions& o) {
  return load_dataset(load_manifest(o.manifest), o.features, !o.stream);
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open for writing: " + p.string());
  out << s;
}

nlohmann::json records_json(const std::vector<UtteranceRecord>& rs) {
  auto arr = nlohmann::json::array();
  for (const auto& r : rs) arr.push_back({{"patient_id", r.patient_id}, {"recording_id", r.recording_id}});
  return arr;
}

fs::path checkpoint_file(const fs::path& p) { return fs::is_directory(p) ? p / "model.bin" : p; }

void print_epoch(const EpochMetrics& e) {
  std::fprintf(stderr, "epoch %d loss %.5f", e.epoch, e.train_loss);
  if (e.train) std::fprintf(stderr, " train_acc %.4f", e.train->acc);
  std::fprintf(stderr, " val_acc %.4f val_f1 %.4f\n", e.val.acc, e.val.f1);
}

std::vector<fs::path> wav_inputs(const fs::path& in) {
  std::vector<fs::path> out;
  if (fs::is_directory(in)) {
    for (const auto& e : fs::directory_iterator(in))
      if (e.is_regular_file() && e.path().extension() == ".wav") out.push_back(e.path());
    std::sort(out.begin(), out.end());
  } else {
    out.push_back(in);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MCI/NC classification from layered speech-encoder features"};
  app.require_subcommand(1);

  // synth
  SynthSpec synth;
  std::string synth_out;
  auto* c_synth = app.add_subcommand("synth", "write a synthetic LFSF dataset and manifest.jsonl");
  c_synth->add_option("--out", synth_out)->required();
  c_synth->add_option("--patients", synth.n_patients)->capture_default_str();
  c_synth->add_option("--recs", synth.recs_per_patient)->capture_default_str();
  c_synth->add_option("--layers", synth.layers)->capture_default_str();
  c_synth->add_option("--frames", synth.frames)->capture_default_str();
  c_synth->add_option("--dim", synth.dim)->capture_default_str();
  c_synth->add_option("--informative-layer", synth.informative_layer)->capture_default_str();
  c_synth->add_option("--effect", synth.effect_size)->capture_default_str();
  c_synth->add_option("--fps", synth.fps)->capture_default_str();
  c_synth->add_option("--seed", synth.seed)->capture_default_str();

  // inspect
  std::vector<std::string> inspect_files;
  auto* c_inspect = app.add_subcommand("inspect", "validate LFSF files and print their headers");
  c_inspect->add_option("files", inspect_files)->required();

  // perturb
  std::string p_in, p_out;
  std::uint64_t p_seed = 0;
  int p_copies = 1;
  bool p_identity = false;
  auto* c_perturb = app.add_subcommand("perturb", "write information-perturbed copies of WAV files");
  c_perturb->add_option("--in", p_in, "WAV file or directory")->required();
  c_perturb->add_option("--out", p_out)->required();
  c_perturb->add_option("--seed", p_seed)->required();
  c_perturb->add_option("--copies", p_copies)->capture_default_str();
  c_perturb->add_flag("--pin-identity", p_identity, "pin ratios to 1 and EQ gains to 0 dB");

  // split
  TrainOptions s_opt;
  std::string s_out;
  auto* c_split = app.add_subcommand("split", "train/validation split");
  c_split->add_option("--manifest", s_opt.manifest)->required();
  c_split->add_option("--mode", s_opt.split_mode, "speaker|general")->capture_default_str();
  c_split->add_option("--ratio", s_opt.val_ratio)->capture_default_str();
  c_split->add_option("--seed", s_opt.seed)->capture_default_str();
  c_split->add_option("--out", s_out)->required();

  // train
  TrainOptions t_opt;
  std::string t_out;
  auto* c_train = app.add_subcommand("train", "train a classifier and write a checkpoint directory");
  add_data_options(c_train, t_opt);
  add_train_options(c_train, t_opt);
  add_fusion_options(c_train, t_opt);
  c_train->add_option("--out", t_out, "checkpoint directory")->required();

  // layer-scan
  TrainOptions l_opt;
  std::string l_out, l_test;
  auto* c_scan = app.add_subcommand("layer-scan", "train one classifier per layer");
  add_data_options(c_scan, l_opt);
  add_train_options(c_scan, l_opt);
  c_scan->add_option("--test-manifest", l_test, "optional held-out manifest");
  c_scan->add_option("--out", l_out)->required();

  // trace-export
  std::string x_ckpt, x_out;
  bool x_final = false;
  auto* c_trace = app.add_subcommand("trace-export", "export the per-epoch layer-weight trace as CSV");
  c_trace->add_option("--ckpt", x_ckpt, "checkpoint directory")->required();
  c_trace->add_option("--out", x_out)->required();
  c_trace->add_flag("--final-only", x_final, "only the last epoch");

  // cv
  TrainOptions v_opt;
  int v_k = 5;
  std::string v_out, v_weights, v_logic = "or";
  auto* c_cv = app.add_subcommand("cv", "speaker-grouped k-fold cross-validation");
  add_data_options(c_cv, v_opt);
  add_train_options(c_cv, v_opt);
  add_fusion_options(c_cv, v_opt);
  c_cv->add_option("--k", v_k)->capture_default_str();
  c_cv->add_option("--logic", v_logic, "or|ensemble")->capture_default_str();
  c_cv->add_option("--out", v_out, "per-fold metrics CSV")->required();
  c_cv->add_option("--weights-out", v_weights, "final-epoch layer weights per fold (CSV)");

  // predict
  TrainOptions r_opt;
  std::string r_ckpt, r_out, r_logic = "or", r_metrics;
  double r_window = 0.0;
  auto* c_predict = app.add_subcommand("predict", "recording-level predictions");
  add_data_options(c_predict, r_opt);
  c_predict->add_option("--ckpt", r_ckpt, "checkpoint directory or file")->required();
  c_predict->add_option("--logic", r_logic, "or|ensemble")->capture_default_str();
  c_predict->add_option("--window", r_window, "segment seconds (default: value stored with the checkpoint, else 30)");
  c_predict->add_option("--out", r_out)->required();
  c_predict->add_option("--metrics-out", r_metrics, "ACC/Precision/Recall/F1 against manifest labels");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c_synth) {
      auto recs = write_synth_dataset(synth, synth_out);
      std::printf("wrote %zu recordings to %s\n", recs.size(), synth_out.c_str());
    } else if (*c_inspect) {
      int bad = 0;
      for (const auto& f : inspect_files) {
        try {
          auto seq = read_lfsf(f);
          std::printf("%s: L=%d T=%d D=%d fps=%g ok\n", f.c_str(), seq.layers(), seq.frames(), seq.dim(), seq.fps());
        } catch (const Error& e) {
          std::printf("%s: %s\n", f.c_str(), e.what());
          ++bad;
        }
      }
      return bad == 0 ? 0 : 1;
    } else if (*c_perturb) {
      fs::create_directories(p_out);
      for (const auto& path : wav_inputs(p_in)) {
        const auto clip = read_wav(path);
        for (int k = 0; k < p_copies; ++k) {
          const auto seed = derive_seed(p_seed, path.filename().string(), static_cast<std::uint64_t>(k));
          auto params = p_identity ? PerturbParams::identity(seed) : PerturbParams{};
          params.seed = seed;
          auto res = perturb_audio(clip, params);
          const auto dst = fs::path(p_out) / (path.stem().string() + "_pert" + std::to_string(k + 1) + ".wav");
          write_wav(res.clip, dst);
          std::printf("%s formant=%.4f pitch=%.4f clipped=%zu\n", dst.c_str(), res.draws.formant_ratio,
                      res.draws.pitch_ratio, res.clipped);
        }
      }
    } else if (*c_split) {
      auto recs = load_manifest(s_opt.manifest);
      auto sp = split(recs, split_spec(s_opt));
      nlohmann::ordered_json j;
      j["mode"] = s_opt.split_mode;
      j["ratio"] = s_opt.val_ratio;
      j["seed"] = s_opt.seed;
      j["train"] = records_json(sp.train);
      j["val"] = records_json(sp.val);
      write_text(s_out, j.dump(2) + "\n");
    } else if (*c_train) {
      auto data = load(t_opt);
      auto sp = split(data, split_spec(t_opt));
      auto res = train(train_config(t_opt), sp.train, sp.val, fusion_config(t_opt), print_epoch);
      fs::create_directories(t_out);
      save_checkpoint(fs::path(t_out) / "model.bin", res.best, res.fusion);
      write_text(fs::path(t_out) / "trace.json", trace_to_json(res.trace).dump() + "\n");
      write_text(fs::path(t_out) / "metrics.csv", metrics_log_csv(res.history));
      write_text(fs::path(t_out) / "train.json",
                 nlohmann::json{{"window_seconds", t_opt.window}, {"best_epoch", res.best_epoch}}.dump() + "\n");
      std::printf("best epoch %d, checkpoint in %s\n", res.best_epoch, t_out.c_str());
    } else if (*c_scan) {
      auto data = load(l_opt);
      auto sp = split(data, split_spec(l_opt));
      Dataset test;
      if (!l_test.empty()) test = load_dataset(load_manifest(l_test), l_opt.features, !l_opt.stream);
      auto cfg = train_config(l_opt);
      cfg.eval_train = false;
      auto scan = layer_scan(cfg, sp.train, sp.val, test.empty() ? nullptr : &test, [](const LayerScanRow& r) {
        std::fprintf(stderr, "layer %d val_or %.4f val_ensemble %.4f\n", r.layer, r.val_or, r.val_ensemble);
      });
      write_text(l_out, layer_scan_csv(scan));
      auto report = [](const char* name, LayerPeak p) { std::printf("peak %s: (%d, %.4f)\n", name, p.layer, p.acc); };
      report("val_or", scan.peak(&LayerScanRow::val_or));
      report("val_ensemble", scan.peak(&LayerScanRow::val_ensemble));
      if (auto p = scan.peak(&LayerScanRow::test_or)) report("test_or", *p);
      if (auto p = scan.peak(&LayerScanRow::test_ensemble)) report("test_ensemble", *p);
    } else if (*c_trace) {
      std::ifstream in(fs::path(x_ckpt) / "trace.json");
      if (!in) throw Error(ErrorCode::kIo, "no trace.json in " + x_ckpt);
      trace_export(trace_from_json(nlohmann::json::parse(in)), x_out, x_final);
    } else if (*c_cv) {
      auto data = load(v_opt);
      auto folds = cross_validate(train_config(v_opt), data, v_k, v_opt.seed, fusion_config(v_opt),
                                  parse_logic(v_logic), [](const FoldResult& f) {
                                    std::fprintf(stderr, "fold %d acc %.4f f1 %.4f argmax layer %d\n", f.fold,
                                                 f.val.acc, f.val.f1, f.argmax_layer);
                                  });
      write_text(v_out, cv_csv(folds));
      if (!v_weights.empty()) {
        std::string s = "fold,layer,weight\n";
        char buf[64];
        for (const auto& f : folds)
          for (std::size_t l = 0; l < f.final_weights.size(); ++l) {
            std::snprintf(buf, sizeof buf, "%d,%zu,%.10g\n", f.fold, l + 1, f.final_weights[l]);
            s += buf;
          }
        write_text(v_weights, s);
      }
    } else if (*c_predict) {
      auto ck = load_checkpoint(checkpoint_file(r_ckpt));
      double window = r_window;
      if (window <= 0.0) {
        window = 30.0;
        const auto meta = fs::path(r_ckpt) / "train.json";
        if (fs::is_directory(r_ckpt) && fs::exists(meta)) {
          std::ifstream in(meta);
          window = nlohmann::json::parse(in).value("window_seconds", 30.0);
        }
      }
      const Logic logic = parse_logic(r_logic);
      auto data = load(r_opt);
      auto preds = predict_dataset(ck.params, data, window, 1);
      std::string csv = "recording_id,patient_id,p_nc_sum,p_mci_sum,label\n";
      char buf[512];
      ConfusionCounts counts;
      for (const auto& p : preds) {
        auto v = aggregate(logic, p.segments);
        counts.add(v.label, p.record.label);
        std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f,%s\n", p.record.recording_id.c_str(),
                      p.record.patient_id.c_str(), v.p_nc_sum, v.p_mci_sum, to_string(v.label));
        csv += buf;
      }
      write_text(r_out, csv);
      if (!r_metrics.empty()) {
        auto m = compute_metrics(counts);
        write_text(r_metrics, "ACC,Precision,Recall,F1\n" + metrics_row(m) + "\n");
      }
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
