#pragma once

// Mono RIFF/WAVE reading and writing: 16-bit PCM or 32-bit IEEE float.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "mcidet/error.hpp"
#include "mcidet/feature_store.hpp"

namespace mcidet {

enum class SampleFormat { kPcm16, kFloat32 };

struct AudioClip {
  int sample_rate = 16000;
  std::vector<double> samples;
  SampleFormat format = SampleFormat::kPcm16;  // encoding used when written back

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

inline void validate(const AudioClip& clip) {
  if (clip.sample_rate <= 0) throw Error(ErrorCode::kInvalidArgument, "sample rate must be > 0");
  for (double v : clip.samples)
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFinite, "audio contains NaN or Inf");
}

inline AudioClip decode_wav(std::span<const unsigned char> b) {
  auto u16 = [&](std::size_t p) { return static_cast<std::uint16_t>(b[p] | (b[p + 1] << 8)); };
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0)
    throw Error(ErrorCode::kBadMagic, "not a RIFF/WAVE file");
  std::size_t pos = 12;
  int format_tag = -1, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  while (pos + 8 <= b.size()) {
    const std::uint32_t len = detail::get_u32(b.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (len > b.size() - body) throw Error(ErrorCode::kTruncated, "WAV chunk exceeds file size");
    if (std::memcmp(b.data() + pos, "fmt ", 4) == 0) {
      if (len < 16) throw Error(ErrorCode::kBadHeader, "short fmt chunk");
      format_tag = u16(body);
      channels = u16(body + 2);
      rate = detail::get_u32(b.data() + body + 4);
      bits = u16(body + 14);
      if (format_tag == 0xFFFE && len >= 26) format_tag = u16(body + 24);  // WAVE_FORMAT_EXTENSIBLE subformat
    } else if (std::memcmp(b.data() + pos, "data", 4) == 0) {
      data = b.data() + body;
      data_len = len;
    }
    pos = body + len + (len & 1);
  }
  if (format_tag < 0 || data == nullptr) throw Error(ErrorCode::kBadHeader, "missing fmt or data chunk");
  if (channels != 1) throw Error(ErrorCode::kInvalidArgument, "only mono audio is supported");
  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  if (format_tag == 1 && bits == 16) {
    clip.format = SampleFormat::kPcm16;
    for (std::size_t i = 0; i + 1 < data_len; i += 2)
      clip.samples.push_back(static_cast<std::int16_t>(data[i] | (data[i + 1] << 8)) / 32768.0);
  } else if (format_tag == 3 && bits == 32) {
    clip.format = SampleFormat::kFloat32;
    for (std::size_t i = 0; i + 3 < data_len; i += 4) clip.samples.push_back(detail::get_f32(data + i));
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unsupported WAV encoding (format " + std::to_string(format_tag) +
                                                 ", " + std::to_string(bits) + " bits)");
  }
  validate(clip);
  return clip;
}

inline std::vector<unsigned char> encode_wav(const AudioClip& clip) {
  validate(clip);
  const bool pcm = clip.format == SampleFormat::kPcm16;
  const std::uint32_t bytes_per_sample = pcm ? 2 : 4;
  const std::uint32_t data_len = static_cast<std::uint32_t>(clip.samples.size()) * bytes_per_sample;
  std::vector<unsigned char> b;
  auto tag = [&](const char* t) { b.insert(b.end(), t, t + 4); };
  auto u16 = [&](std::uint16_t v) {
    b.push_back(static_cast<unsigned char>(v));
    b.push_back(static_cast<unsigned char>(v >> 8));
  };
  tag("RIFF");
  detail::put_u32(b, 36 + data_len);
  tag("WAVE");
  tag("fmt ");
  detail::put_u32(b, 16);
  u16(pcm ? 1 : 3);
  u16(1);
  detail::put_u32(b, static_cast<std::uint32_t>(clip.sample_rate));
  detail::put_u32(b, static_cast<std::uint32_t>(clip.sample_rate) * bytes_per_sample);
  u16(static_cast<std::uint16_t>(bytes_per_sample));
  u16(static_cast<std::uint16_t>(bytes_per_sample * 8));
  tag("data");
  detail::put_u32(b, data_len);
  for (double v : clip.samples) {
    if (pcm) {
      const double c = std::clamp(v, -1.0, 1.0);
      u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0))));
    } else {
      detail::put_f32(b, static_cast<float>(v));
    }
  }
  return b;
}

inline AudioClip read_wav(const std::filesystem::path& path) { return decode_wav(detail::read_file(path)); }

inline void write_wav(const AudioClip& clip, const std::filesystem::path& path) {
  detail::write_file(path, encode_wav(clip));
}

}  // namespace mcidet
