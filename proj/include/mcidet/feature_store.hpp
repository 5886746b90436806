#pragma once

// Layered feature sequences: the LFSF on-disk format, the JSON-Lines dataset
// manifest, fixed-duration segmentation, and a synthetic dataset generator.
//
// LFSF layout (all little-endian):
//   0..3   magic "LFSF"
//   4..7   u32 version (=1)
//   8..11  u32 layer count L
//   12..15 u32 frame count T
//   16..19 u32 feature dim D
//   20..23 f32 frames per second
//   24..31 reserved, zero
//   32..   L*T*D f32, [layer][frame][dim]

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mcidet/error.hpp"
#include "mcidet/rng.hpp"

namespace mcidet {

inline constexpr std::uint32_t kLfsfVersion = 1;
inline constexpr std::size_t kLfsfHeaderBytes = 32;
inline constexpr int kDefaultLayerCount = 24;
inline constexpr double kDefaultFps = 50.0;

class FeatureSequence {
 public:
  FeatureSequence() = default;

  FeatureSequence(int layers, int frames, int dim, double fps)
      : layers_(layers), frames_(frames), dim_(dim), fps_(static_cast<float>(fps)) {
    if (layers < 1 || frames < 1 || dim < 1)
      throw Error(ErrorCode::kInvalidArgument, "FeatureSequence dimensions must be >= 1");
    if (!(fps > 0.0) || !std::isfinite(fps))
      throw Error(ErrorCode::kInvalidArgument, "frames_per_second must be positive");
    data_.assign(static_cast<std::size_t>(layers) * frames * dim, 0.0f);
  }

  int layers() const { return layers_; }
  int frames() const { return frames_; }
  int dim() const { return dim_; }
  double fps() const { return fps_; }

  float& at(int layer, int frame, int d) { return data_[index(layer, frame, d)]; }
  float at(int layer, int frame, int d) const { return data_[index(layer, frame, d)]; }

  // Contiguous frames of one layer, 0-based layer index, frame-major.
  std::span<const float> layer(int layer) const {
    return {data_.data() + static_cast<std::size_t>(layer) * frames_ * dim_,
            static_cast<std::size_t>(frames_) * dim_};
  }
  std::span<float> layer(int layer) {
    return {data_.data() + static_cast<std::size_t>(layer) * frames_ * dim_,
            static_cast<std::size_t>(frames_) * dim_};
  }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  bool all_finite() const {
    for (float v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  // Copy of a single layer (0-based) as an L=1 sequence.
  FeatureSequence slice_layer(int layer) const {
    FeatureSequence out(1, frames_, dim_, fps_);
    auto src = this->layer(layer);
    std::copy(src.begin(), src.end(), out.data_.begin());
    return out;
  }

  friend bool operator==(const FeatureSequence&, const FeatureSequence&) = default;

 private:
  std::size_t index(int layer, int frame, int d) const {
    return (static_cast<std::size_t>(layer) * frames_ + frame) * dim_ + d;
  }

  int layers_ = 0;
  int frames_ = 0;
  int dim_ = 0;
  double fps_ = kDefaultFps;  // float-representable; LFSF stores f32
  std::vector<float> data_;
};

// ---------------------------------------------------------------------------
// LFSF I/O

namespace detail {

inline void put_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_f32(std::vector<unsigned char>& buf, float v) { put_u32(buf, std::bit_cast<std::uint32_t>(v)); }

inline float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::kIo, "read failed: " + path.string());
  return bytes;
}

inline void write_file(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

}  // namespace detail

inline std::vector<unsigned char> encode_lfsf(const FeatureSequence& seq) {
  if (seq.layers() < 1 || seq.frames() < 1 || seq.dim() < 1)
    throw Error(ErrorCode::kInvalidArgument, "empty FeatureSequence");
  if (!seq.all_finite()) throw Error(ErrorCode::kNonFinite, "sequence contains NaN or Inf");
  std::vector<unsigned char> buf;
  buf.reserve(kLfsfHeaderBytes + seq.data().size() * 4);
  for (char c : {'L', 'F', 'S', 'F'}) buf.push_back(static_cast<unsigned char>(c));
  detail::put_u32(buf, kLfsfVersion);
  detail::put_u32(buf, static_cast<std::uint32_t>(seq.layers()));
  detail::put_u32(buf, static_cast<std::uint32_t>(seq.frames()));
  detail::put_u32(buf, static_cast<std::uint32_t>(seq.dim()));
  detail::put_f32(buf, static_cast<float>(seq.fps()));
  detail::put_u32(buf, 0);
  detail::put_u32(buf, 0);
  for (float v : seq.data()) detail::put_f32(buf, v);
  return buf;
}

inline FeatureSequence decode_lfsf(std::span<const unsigned char> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "LFSF", 4) != 0)
    throw Error(ErrorCode::kBadMagic, "missing LFSF magic");
  if (bytes.size() < kLfsfHeaderBytes) throw Error(ErrorCode::kTruncated, "header shorter than 32 bytes");
  const unsigned char* p = bytes.data();
  const std::uint32_t version = detail::get_u32(p + 4);
  if (version != kLfsfVersion)
    throw Error(ErrorCode::kVersionMismatch, "unsupported LFSF version " + std::to_string(version));
  const std::uint32_t L = detail::get_u32(p + 8);
  const std::uint32_t T = detail::get_u32(p + 12);
  const std::uint32_t D = detail::get_u32(p + 16);
  const float fps = detail::get_f32(p + 20);
  if (detail::get_u32(p + 24) != 0 || detail::get_u32(p + 28) != 0)
    throw Error(ErrorCode::kBadHeader, "reserved header bytes must be zero");
  if (L == 0 || T == 0 || D == 0) throw Error(ErrorCode::kBadHeader, "zero dimension in header");
  if (!std::isfinite(fps) || !(fps > 0.0f)) throw Error(ErrorCode::kBadHeader, "fps must be finite and positive");

  const std::uint64_t count = static_cast<std::uint64_t>(L) * T * D;
  const std::uint64_t need = kLfsfHeaderBytes + count * 4;
  if (bytes.size() < need)
    throw Error(ErrorCode::kTruncated, "payload has " + std::to_string(bytes.size() - kLfsfHeaderBytes) +
                                           " bytes, expected " + std::to_string(count * 4));
  if (bytes.size() > need) throw Error(ErrorCode::kBadHeader, "trailing bytes after payload");

  FeatureSequence seq(static_cast<int>(L), static_cast<int>(T), static_cast<int>(D), fps);
  auto out = seq.data();
  const unsigned char* q = p + kLfsfHeaderBytes;
  for (std::size_t i = 0; i < out.size(); ++i, q += 4) {
    out[i] = detail::get_f32(q);
    if (!std::isfinite(out[i])) throw Error(ErrorCode::kNonFinite, "non-finite value at index " + std::to_string(i));
  }
  return seq;
}

inline void write_lfsf(const FeatureSequence& seq, const std::filesystem::path& path) {
  detail::write_file(path, encode_lfsf(seq));
}

inline FeatureSequence read_lfsf(const std::filesystem::path& path) {
  return decode_lfsf(detail::read_file(path));
}

// ---------------------------------------------------------------------------
// Segmentation

struct FrameRange {
  int begin = 0;
  int end = 0;  // exclusive
  int size() const { return end - begin; }
  friend bool operator==(const FrameRange&, const FrameRange&) = default;
};

inline int window_frames(double fps, double window_seconds) {
  return std::max(1, static_cast<int>(std::lround(fps * window_seconds)));
}

// Consecutive non-overlapping windows covering [0, frames). A trailing
// remainder shorter than min_frames is dropped.
inline std::vector<FrameRange> segment_ranges(int frames, double fps, double window_seconds, int min_frames = 1) {
  if (!(window_seconds > 0.0)) throw Error(ErrorCode::kInvalidArgument, "window_seconds must be > 0");
  const int w = window_frames(fps, window_seconds);
  std::vector<FrameRange> out;
  for (int start = 0; start < frames; start += w) {
    const int end = std::min(frames, start + w);
    if (end - start < min_frames) break;
    out.push_back({start, end});
  }
  return out;
}

// Non-owning window into a FeatureSequence.
struct SegmentView {
  std::string patient_id;
  std::string recording_id;
  const FeatureSequence* source = nullptr;
  FrameRange range;

  int frames() const { return range.size(); }
  float at(int layer, int frame, int d) const { return source->at(layer, range.begin + frame, d); }
};

inline std::vector<SegmentView> segment(const FeatureSequence& seq, double window_seconds, int min_frames = 1,
                                        const std::string& patient_id = {}, const std::string& recording_id = {}) {
  std::vector<SegmentView> out;
  for (auto r : segment_ranges(seq.frames(), seq.fps(), window_seconds, min_frames))
    out.push_back({patient_id, recording_id, &seq, r});
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

enum class Language { kEn, kZh };
enum class Label { kNC = 0, kMCI = 1 };

inline const char* to_string(Language l) { return l == Language::kEn ? "en" : "zh"; }
inline const char* to_string(Label l) { return l == Label::kMCI ? "MCI" : "NC"; }

inline Label parse_label(const std::string& s) {
  if (s == "MCI") return Label::kMCI;
  if (s == "NC") return Label::kNC;
  throw Error(ErrorCode::kUnknownLabel, "unknown label '" + s + "'");
}

inline Language parse_language(const std::string& s) {
  if (s == "en") return Language::kEn;
  if (s == "zh") return Language::kZh;
  throw Error(ErrorCode::kUnknownLanguage, "unknown language '" + s + "'");
}

struct UtteranceRecord {
  std::string path;
  std::string patient_id;
  std::string recording_id;
  Language language = Language::kEn;
  Label label = Label::kNC;

  friend bool operator==(const UtteranceRecord&, const UtteranceRecord&) = default;
};

inline std::string manifest_line(const UtteranceRecord& r) {
  nlohmann::ordered_json j;
  j["path"] = r.path;
  j["patient_id"] = r.patient_id;
  j["recording_id"] = r.recording_id;
  j["language"] = to_string(r.language);
  j["label"] = to_string(r.label);
  return j.dump();
}

inline std::vector<UtteranceRecord> parse_manifest(std::istream& in) {
  std::vector<UtteranceRecord> out;
  std::set<std::pair<std::string, std::string>> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::kInvalidArgument, "line " + std::to_string(lineno) + ": " + e.what());
    }
    auto field = [&](const char* key) -> std::string {
      if (!j.is_object() || !j.contains(key) || !j[key].is_string())
        throw Error(ErrorCode::kMissingField, "line " + std::to_string(lineno) + ": missing string field '" + key + "'");
      return j[key].get<std::string>();
    };
    UtteranceRecord r;
    r.path = field("path");
    r.patient_id = field("patient_id");
    r.recording_id = field("recording_id");
    r.language = parse_language(field("language"));
    r.label = parse_label(field("label"));
    if (!seen.emplace(r.patient_id, r.recording_id).second)
      throw Error(ErrorCode::kDuplicateKey,
                  "line " + std::to_string(lineno) + ": duplicate (" + r.patient_id + ", " + r.recording_id + ")");
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<UtteranceRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open manifest " + path.string());
  return parse_manifest(in);
}

inline void write_manifest(const std::vector<UtteranceRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open for writing: " + path.string());
  for (const auto& r : records) out << manifest_line(r) << '\n';
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

// Relative manifest paths are interpreted against the feature directory.
inline std::filesystem::path resolve_path(const UtteranceRecord& r, const std::filesystem::path& features_dir) {
  std::filesystem::path p(r.path);
  return p.is_absolute() || features_dir.empty() ? p : features_dir / p;
}

// ---------------------------------------------------------------------------
// In-memory dataset

// A recording plus a way to obtain its features. Synthetic and preloaded data
// share one immutable sequence; streamed data re-reads the file per call.
struct Recording {
  UtteranceRecord record;
  std::function<std::shared_ptr<const FeatureSequence>()> load;
};

using Dataset = std::vector<Recording>;

inline Recording in_memory(UtteranceRecord rec, FeatureSequence seq) {
  auto ptr = std::make_shared<const FeatureSequence>(std::move(seq));
  return {std::move(rec), [ptr] { return ptr; }};
}

inline Dataset load_dataset(const std::vector<UtteranceRecord>& records, const std::filesystem::path& features_dir,
                            bool preload = true) {
  Dataset out;
  out.reserve(records.size());
  for (const auto& r : records) {
    auto path = resolve_path(r, features_dir);
    if (preload) {
      out.push_back(in_memory(r, read_lfsf(path)));
    } else {
      out.push_back({r, [path] { return std::make_shared<const FeatureSequence>(read_lfsf(path)); }});
    }
  }
  return out;
}

// Restricts every recording to one 0-based layer.
inline Dataset slice_layer(const Dataset& ds, int layer) {
  Dataset out;
  out.reserve(ds.size());
  for (const auto& r : ds) {
    auto src = r.load;
    auto cached = std::make_shared<std::shared_ptr<const FeatureSequence>>();
    out.push_back({r.record, [src, layer, cached] {
                     if (*cached) return *cached;
                     auto full = src();
                     *cached = std::make_shared<const FeatureSequence>(full->slice_layer(layer));
                     return *cached;
                   }});
  }
  return out;
}

inline std::vector<UtteranceRecord> records_of(const Dataset& ds) {
  std::vector<UtteranceRecord> out;
  out.reserve(ds.size());
  for (const auto& r : ds) out.push_back(r.record);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthSpec {
  int n_patients = 40;
  int recs_per_patient = 3;
  int layers = kDefaultLayerCount;
  int frames = 100;
  int dim = 8;
  int informative_layer = 18;  // 1-based
  double effect_size = 3.0;
  std::uint64_t seed = 0;
  double fps = kDefaultFps;
};

// Layer informative_layer of every MCI recording is shifted by effect_size
// along a fixed unit direction; all other values are standard normal noise.
// Noise is drawn independently of the label, so effect_size = 0 yields
// label-independent features.
inline Dataset synth_dataset(const SynthSpec& spec) {
  if (spec.informative_layer < 1 || spec.informative_layer > spec.layers)
    throw Error(ErrorCode::kInvalidArgument, "informative layer out of range [1, L]");
  if (spec.effect_size < 0.0 || !std::isfinite(spec.effect_size))
    throw Error(ErrorCode::kInvalidArgument, "effect_size must be finite and >= 0");
  if (spec.n_patients < 1 || spec.recs_per_patient < 1)
    throw Error(ErrorCode::kInvalidArgument, "need at least one patient and one recording");

  Rng dir_rng(derive_seed(spec.seed, "direction"));
  std::vector<double> direction(spec.dim);
  double norm = 0.0;
  for (auto& v : direction) {
    v = dir_rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (auto& v : direction) v /= norm;

  std::vector<Label> labels(spec.n_patients);
  for (int i = 0; i < spec.n_patients; ++i) labels[i] = (i % 2 == 0) ? Label::kMCI : Label::kNC;
  Rng label_rng(derive_seed(spec.seed, "labels"));
  label_rng.shuffle(labels);

  Dataset out;
  char buf[32];
  for (int p = 0; p < spec.n_patients; ++p) {
    std::snprintf(buf, sizeof buf, "p%03d", p + 1);
    const std::string pid = buf;
    for (int r = 0; r < spec.recs_per_patient; ++r) {
      std::snprintf(buf, sizeof buf, "r%02d", r + 1);
      const std::string rid = buf;
      FeatureSequence seq(spec.layers, spec.frames, spec.dim, spec.fps);
      Rng noise(derive_seed(spec.seed, "noise", static_cast<std::uint64_t>(p) * 1000 + r));
      for (float& v : seq.data()) v = static_cast<float>(noise.normal());
      if (labels[p] == Label::kMCI && spec.effect_size > 0.0) {
        for (int t = 0; t < spec.frames; ++t)
          for (int d = 0; d < spec.dim; ++d)
            seq.at(spec.informative_layer - 1, t, d) += static_cast<float>(spec.effect_size * direction[d]);
      }
      UtteranceRecord rec{pid + "_" + rid + ".lfsf", pid, rid, (p % 2 == 0) ? Language::kEn : Language::kZh,
                          labels[p]};
      out.push_back(in_memory(std::move(rec), std::move(seq)));
    }
  }
  return out;
}

// Writes the synthetic dataset as LFSF files plus manifest.jsonl under dir.
inline std::vector<UtteranceRecord> write_synth_dataset(const SynthSpec& spec, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto ds = synth_dataset(spec);
  for (const auto& r : ds) write_lfsf(*r.load(), dir / r.record.path);
  auto records = records_of(ds);
  write_manifest(records, dir / "manifest.jsonl");
  return records;
}

}  // namespace mcidet
