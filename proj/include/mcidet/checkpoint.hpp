#pragma once

// Model checkpoint container (little-endian):
//   "MCKP" | u32 version | u32 n | n bytes of JSON metadata (architecture and
//   fusion config) | u32 tensor count | per tensor: u32 name length, name,
//   u32 rows, u32 cols, rows*cols f32 in column-major order.

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcidet/error.hpp"
#include "mcidet/feature_store.hpp"
#include "mcidet/model.hpp"

namespace mcidet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams<float> params;
  FusionConfig fusion;
};

inline nlohmann::json checkpoint_metadata(const ModelConfig& m, const FusionConfig& f) {
  return {{"model",
           {{"layer_count", m.layer_count},
            {"input_dim", m.input_dim},
            {"recurrent_layers", m.recurrent_layers},
            {"hidden", m.hidden},
            {"projection", m.projection},
            {"dropout", m.dropout}}},
          {"fusion",
           {{"init", f.init == FusionInit::kPrior ? "prior" : "uniform"},
            {"major_layer", f.major_layer},
            {"major_weight", f.major_weight}}}};
}

inline std::vector<unsigned char> encode_checkpoint(const ModelParams<float>& params, const FusionConfig& fusion) {
  std::vector<unsigned char> buf;
  for (char c : {'M', 'C', 'K', 'P'}) buf.push_back(static_cast<unsigned char>(c));
  detail::put_u32(buf, kCheckpointVersion);
  const std::string meta = checkpoint_metadata(params.config, fusion).dump();
  detail::put_u32(buf, static_cast<std::uint32_t>(meta.size()));
  buf.insert(buf.end(), meta.begin(), meta.end());
  const auto tensors = params.tensors();
  detail::put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    detail::put_u32(buf, static_cast<std::uint32_t>(t.name.size()));
    buf.insert(buf.end(), t.name.begin(), t.name.end());
    detail::put_u32(buf, static_cast<std::uint32_t>(t.tensor->rows()));
    detail::put_u32(buf, static_cast<std::uint32_t>(t.tensor->cols()));
    for (Eigen::Index i = 0; i < t.tensor->size(); ++i) detail::put_f32(buf, t.tensor->data()[i]);
  }
  return buf;
}

inline Checkpoint decode_checkpoint(std::span<const unsigned char> bytes) {
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (bytes.size() - pos < n) throw Error(ErrorCode::kTruncated, "checkpoint ends early");
  };
  auto u32 = [&] {
    need(4);
    auto v = detail::get_u32(bytes.data() + pos);
    pos += 4;
    return v;
  };
  auto str = [&](std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  };

  if (bytes.size() < 4 || std::memcmp(bytes.data(), "MCKP", 4) != 0)
    throw Error(ErrorCode::kBadMagic, "not a checkpoint file");
  pos = 4;
  if (auto v = u32(); v != kCheckpointVersion)
    throw Error(ErrorCode::kVersionMismatch, "unsupported checkpoint version " + std::to_string(v));

  Checkpoint ck;
  try {
    const auto meta = nlohmann::json::parse(str(u32()));
    const auto& m = meta.at("model");
    ModelConfig cfg;
    cfg.layer_count = m.at("layer_count").get<int>();
    cfg.input_dim = m.at("input_dim").get<int>();
    cfg.recurrent_layers = m.at("recurrent_layers").get<int>();
    cfg.hidden = m.at("hidden").get<int>();
    cfg.projection = m.at("projection").get<int>();
    cfg.dropout = m.at("dropout").get<double>();
    const auto& f = meta.at("fusion");
    ck.fusion.init = f.at("init").get<std::string>() == "prior" ? FusionInit::kPrior : FusionInit::kUniform;
    ck.fusion.major_layer = f.at("major_layer").get<int>();
    ck.fusion.major_weight = f.at("major_weight").get<double>();
    ck.params = ModelParams<float>::zeros(cfg);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadHeader, std::string("checkpoint metadata: ") + e.what());
  }

  auto tensors = ck.params.tensors();
  if (u32() != tensors.size()) throw Error(ErrorCode::kDimensionMismatch, "tensor count does not match architecture");
  for (auto& t : tensors) {
    const std::string name = str(u32());
    const std::uint32_t rows = u32();
    const std::uint32_t cols = u32();
    if (name != t.name || rows != t.tensor->rows() || cols != t.tensor->cols())
      throw Error(ErrorCode::kDimensionMismatch, "tensor '" + name + "' " + std::to_string(rows) + "x" +
                                                     std::to_string(cols) + " does not match expected '" + t.name +
                                                     "' " + std::to_string(t.tensor->rows()) + "x" +
                                                     std::to_string(t.tensor->cols()));
    need(static_cast<std::size_t>(rows) * cols * 4);
    for (Eigen::Index i = 0; i < t.tensor->size(); ++i, pos += 4)
      t.tensor->data()[i] = detail::get_f32(bytes.data() + pos);
  }
  if (pos != bytes.size()) throw Error(ErrorCode::kBadHeader, "trailing bytes in checkpoint");
  if (!ck.params.all_finite()) throw Error(ErrorCode::kNonFinite, "checkpoint holds non-finite parameters");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params,
                            const FusionConfig& fusion) {
  detail::write_file(path, encode_checkpoint(params, fusion));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path));
}

}  // namespace mcidet
