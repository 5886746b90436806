#pragma once

// Information-perturbation augmentation on raw audio: formant shifting,
// pitch randomization and random parametric-EQ shaping.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mcidet/dsp.hpp"
#include "mcidet/error.hpp"
#include "mcidet/rng.hpp"
#include "mcidet/wav.hpp"

namespace mcidet {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct PeqParams {
  int n_peaking = 8;
  Range gain_db{-12.0, 12.0};
  Range q{2.0, 5.0};
  double low_shelf_hz = 60.0;
  double high_shelf_hz = 10000.0;  // capped at 0.45 * sample_rate
  double shelf_q = 0.7071067811865476;
  int max_retries = 16;
};

struct PerturbParams {
  Range formant_ratio{1.0, 1.4};
  Range pitch_ratio{1.0, 2.0};
  double invert_probability = 0.5;  // ratio r is replaced by 1/r with this probability
  PeqParams peq;
  std::uint64_t seed = 0;

  // Ratios pinned to 1 and EQ gains pinned to 0 dB.
  static PerturbParams identity(std::uint64_t seed = 0) {
    PerturbParams p;
    p.formant_ratio = {1.0, 1.0};
    p.pitch_ratio = {1.0, 1.0};
    p.peq.gain_db = {0.0, 0.0};
    p.seed = seed;
    return p;
  }
};

inline void validate(const PerturbParams& p) {
  for (const Range& r : {p.formant_ratio, p.pitch_ratio})
    if (!(r.lo >= 1.0 && r.hi >= r.lo)) throw Error(ErrorCode::kInvalidArgument, "ratio ranges need 1 <= lo <= hi");
  if (!(p.peq.gain_db.hi >= p.peq.gain_db.lo)) throw Error(ErrorCode::kInvalidArgument, "empty gain range");
  if (!(p.peq.q.lo > 0.0 && p.peq.q.hi >= p.peq.q.lo)) throw Error(ErrorCode::kInvalidArgument, "invalid Q range");
  if (p.peq.n_peaking < 0) throw Error(ErrorCode::kInvalidArgument, "negative peaking filter count");
  if (!(p.invert_probability >= 0.0 && p.invert_probability <= 1.0))
    throw Error(ErrorCode::kInvalidArgument, "invert probability must be in [0, 1]");
}

// ---------------------------------------------------------------------------
// Parametric EQ

struct PeqSection {
  dsp::FilterType type;
  double freq;
  double q;
  double gain_db;
  dsp::Biquad coeffs;
};

// Low shelf, n peaking sections log-spaced strictly between the shelves,
// high shelf.
struct PeqDesign {
  std::vector<PeqSection> sections;

  bool all_stable() const {
    return std::all_of(sections.begin(), sections.end(), [](const PeqSection& s) { return s.coeffs.is_stable(); });
  }
};

inline double high_shelf_frequency(const PeqParams& p, int sample_rate) {
  return std::min(p.high_shelf_hz, 0.45 * sample_rate);
}

inline std::vector<double> peaking_centers(const PeqParams& p, int sample_rate) {
  const double lo = p.low_shelf_hz;
  const double hi = high_shelf_frequency(p, sample_rate);
  std::vector<double> f;
  for (int i = 1; i <= p.n_peaking; ++i) f.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / (p.n_peaking + 1)));
  return f;
}

inline PeqDesign draw_peq(const PeqParams& p, int sample_rate, Rng& rng) {
  const double hi = high_shelf_frequency(p, sample_rate);
  if (!(p.low_shelf_hz > 0.0 && p.low_shelf_hz < hi))
    throw Error(ErrorCode::kInvalidArgument, "sample rate too low for the shelf frequencies");
  const auto centers = peaking_centers(p, sample_rate);
  for (int attempt = 0; attempt <= p.max_retries; ++attempt) {
    PeqDesign d;
    auto add = [&](dsp::FilterType type, double f, double q) {
      const double g = rng.uniform(p.gain_db.lo, p.gain_db.hi);
      d.sections.push_back({type, f, q, g, dsp::design_biquad(type, f, q, g, sample_rate)});
    };
    add(dsp::FilterType::kLowShelf, p.low_shelf_hz, p.shelf_q);
    for (double f : centers) add(dsp::FilterType::kPeaking, f, rng.uniform(p.q.lo, p.q.hi));
    add(dsp::FilterType::kHighShelf, hi, p.shelf_q);
    if (d.all_stable()) return d;
  }
  throw Error(ErrorCode::kUnstableFilter, "could not draw a stable EQ cascade");
}

inline AudioClip apply_peq(const AudioClip& clip, const PeqDesign& design) {
  AudioClip out = clip;
  for (const auto& s : design.sections) dsp::apply_biquad(s.coeffs, out.samples);
  return out;
}

inline AudioClip peq(const AudioClip& clip, const PeqParams& params, Rng& rng) {
  validate(clip);
  return apply_peq(clip, draw_peq(params, clip.sample_rate, rng));
}

// ---------------------------------------------------------------------------
// Pitch

// Time-stretch by ratio, then resample by 1/ratio: pitch scales by ratio and
// the sample count is unchanged.
inline AudioClip pitch_randomize(const AudioClip& clip, double ratio, const dsp::WsolaConfig& cfg = {}) {
  if (!(ratio > 0.0) || !std::isfinite(ratio)) throw Error(ErrorCode::kInvalidArgument, "pitch ratio must be > 0");
  validate(clip);
  AudioClip out = clip;
  if (clip.samples.empty()) return out;
  const auto stretched = dsp::time_stretch(clip.samples, ratio, clip.sample_rate, cfg);
  out.samples = dsp::resample_positions(stretched, ratio, clip.samples.size());
  return out;
}

// ---------------------------------------------------------------------------
// Formant

struct FormantConfig {
  double frame_seconds = 0.064;  // rounded up to a power of two
  int overlap = 4;
  double cepstral_coeffs_per_khz = 1.25;
};

inline int cepstral_cutoff(int sample_rate, const FormantConfig& cfg = {}) {
  return std::max(1, static_cast<int>(std::lround(sample_rate / 1000.0 * cfg.cepstral_coeffs_per_khz)));
}

namespace detail {

// Cepstrally smoothed log-magnitude envelope for bins [0, n/2].
inline std::vector<double> log_envelope(const std::vector<dsp::cplx>& spectrum, int cutoff) {
  const std::size_t n = spectrum.size();
  std::vector<dsp::cplx> c(n);
  for (std::size_t k = 0; k < n; ++k) c[k] = std::log(std::abs(spectrum[k]) + 1e-12);
  dsp::fft(c, /*inverse=*/true);
  for (std::size_t q = 0; q < n; ++q) {
    const std::size_t dist = std::min(q, n - q);
    c[q] = dist <= static_cast<std::size_t>(cutoff) ? dsp::cplx(c[q].real(), 0.0) : dsp::cplx(0.0, 0.0);
  }
  dsp::fft(c);
  std::vector<double> env(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) env[k] = c[k].real();
  return env;
}

inline double interp(const std::vector<double>& v, double x) {
  if (x <= 0.0) return v.front();
  const double last = static_cast<double>(v.size() - 1);
  if (x >= last) return v.back();
  const auto i = static_cast<std::size_t>(x);
  const double frac = x - static_cast<double>(i);
  return frac == 0.0 ? v[i] : v[i] + frac * (v[i + 1] - v[i]);
}

}  // namespace detail

// Warps the cepstral spectral envelope along frequency by ratio (an envelope
// peak at f moves to ratio * f) while keeping the fine structure, so pitch is
// preserved. STFT analysis/synthesis with unchanged hop; sample count is kept.
inline AudioClip formant_shift(const AudioClip& clip, double ratio, const FormantConfig& cfg = {}) {
  if (!(ratio > 0.0) || !std::isfinite(ratio)) throw Error(ErrorCode::kInvalidArgument, "formant ratio must be > 0");
  validate(clip);
  AudioClip out = clip;
  const long n_in = static_cast<long>(clip.samples.size());
  if (n_in == 0) return out;

  const std::size_t n = dsp::next_pow2(static_cast<std::size_t>(std::ceil(cfg.frame_seconds * clip.sample_rate)));
  const long N = static_cast<long>(n);
  const long hop = std::max(1L, N / cfg.overlap);
  const int cutoff = cepstral_cutoff(clip.sample_rate, cfg);
  const auto w = dsp::hann(n);

  // Frames start at -N so every sample is covered by the full overlap.
  std::vector<double> acc(static_cast<std::size_t>(n_in), 0.0);
  std::vector<double> wsum(static_cast<std::size_t>(n_in), 0.0);
  std::vector<dsp::cplx> spec(n);
  for (long start = -N; start < n_in; start += hop) {
    for (long i = 0; i < N; ++i) {
      const long j = start + i;
      spec[static_cast<std::size_t>(i)] = (j >= 0 && j < n_in) ? clip.samples[static_cast<std::size_t>(j)] * w[i] : 0.0;
    }
    dsp::fft(spec);
    const auto env = detail::log_envelope(spec, cutoff);
    for (std::size_t k = 0; k <= n / 2; ++k) {
      const double warped = detail::interp(env, static_cast<double>(k) / ratio);
      const double gain = std::exp(warped - env[k]);
      spec[k] *= gain;
      if (k != 0 && k != n / 2) spec[n - k] = std::conj(spec[k]);
    }
    dsp::fft(spec, /*inverse=*/true);
    for (long i = 0; i < N; ++i) {
      const long j = start + i;
      if (j < 0 || j >= n_in) continue;
      acc[static_cast<std::size_t>(j)] += spec[static_cast<std::size_t>(i)].real() * w[i];
      wsum[static_cast<std::size_t>(j)] += w[i] * w[i];
    }
  }
  for (long j = 0; j < n_in; ++j) out.samples[j] = acc[j] / wsum[j];
  return out;
}

// ---------------------------------------------------------------------------
// Composition

struct PerturbDraws {
  double formant_ratio = 1.0;
  double pitch_ratio = 1.0;
  PeqDesign peq;
};

struct PerturbResult {
  AudioClip clip;
  PerturbDraws draws;
  std::size_t clipped = 0;  // samples hard-limited to +-1
};

inline double draw_ratio(const Range& r, double invert_probability, Rng& rng) {
  const double v = rng.uniform(r.lo, r.hi);
  return rng.bernoulli(invert_probability) ? 1.0 / v : v;
}

// formant_shift -> pitch_randomize -> peq, all draws from params.seed.
inline PerturbResult perturb_audio(const AudioClip& clip, const PerturbParams& params) {
  validate(params);
  validate(clip);
  Rng rng(derive_seed(params.seed, "perturb"));
  PerturbResult res;
  res.draws.formant_ratio = draw_ratio(params.formant_ratio, params.invert_probability, rng);
  res.draws.pitch_ratio = draw_ratio(params.pitch_ratio, params.invert_probability, rng);
  res.draws.peq = draw_peq(params.peq, clip.sample_rate, rng);

  AudioClip x = formant_shift(clip, res.draws.formant_ratio);
  x = pitch_randomize(x, res.draws.pitch_ratio);
  x = apply_peq(x, res.draws.peq);
  for (double& v : x.samples) {
    if (v > 1.0 || v < -1.0) {
      v = std::clamp(v, -1.0, 1.0);
      ++res.clipped;
    }
  }
  res.clip = std::move(x);
  return res;
}

}  // namespace mcidet
