#pragma once

// Small DSP toolkit: radix-2 FFT, RBJ biquad sections, WSOLA time stretching
// and windowed-sinc resampling.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "mcidet/error.hpp"

namespace mcidet::dsp {

using cplx = std::complex<double>;

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// In-place iterative radix-2 FFT; size must be a power of two.
inline void fft(std::vector<cplx>& a, bool inverse = false) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw Error(ErrorCode::kInvalidArgument, "FFT size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const cplx wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const cplx u = a[i + j];
        const cplx v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse)
    for (auto& x : a) x /= static_cast<double>(n);
}

// Periodic Hann window shifted by half a sample, so no tap is exactly zero.
inline std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (static_cast<double>(i) + 0.5) / static_cast<double>(n));
  return w;
}

// ---------------------------------------------------------------------------
// Biquads

// Normalized second-order section:
//   y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0, a1 = 0.0, a2 = 0.0;

  static Biquad identity() { return {}; }

  bool is_identity() const { return b0 == 1.0 && b1 == 0.0 && b2 == 0.0 && a1 == 0.0 && a2 == 0.0; }

  // Largest magnitude among the roots of z^2 + a1 z + a2.
  double max_pole_magnitude() const {
    const cplx disc = std::sqrt(cplx(a1 * a1 - 4.0 * a2, 0.0));
    const cplx r1 = (-a1 + disc) / 2.0;
    const cplx r2 = (-a1 - disc) / 2.0;
    return std::max(std::abs(r1), std::abs(r2));
  }

  bool is_stable() const { return max_pole_magnitude() < 1.0; }

  // Magnitude response at frequency f (Hz).
  double magnitude(double f, double sample_rate) const {
    const double w = 2.0 * std::numbers::pi * f / sample_rate;
    const cplx z1 = std::polar(1.0, -w);
    const cplx z2 = z1 * z1;
    return std::abs((b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2));
  }
};

enum class FilterType { kPeaking, kLowShelf, kHighShelf };

// RBJ audio-EQ cookbook designs. A 0 dB section is returned as the exact
// identity, which the cookbook formulas reduce to analytically.
inline Biquad design_biquad(FilterType type, double freq, double q, double gain_db, double sample_rate) {
  if (!(freq > 0.0 && freq < sample_rate / 2.0))
    throw Error(ErrorCode::kInvalidArgument, "filter frequency must lie in (0, Nyquist)");
  if (!(q > 0.0)) throw Error(ErrorCode::kInvalidArgument, "filter Q must be > 0");
  if (gain_db == 0.0) return Biquad::identity();
  const double A = std::pow(10.0, gain_db / 40.0);
  const double w0 = 2.0 * std::numbers::pi * freq / sample_rate;
  const double cw = std::cos(w0);
  const double alpha = std::sin(w0) / (2.0 * q);
  const double sa = 2.0 * std::sqrt(A) * alpha;
  double b0, b1, b2, a0, a1, a2;
  switch (type) {
    case FilterType::kPeaking:
      b0 = 1.0 + alpha * A;
      b1 = -2.0 * cw;
      b2 = 1.0 - alpha * A;
      a0 = 1.0 + alpha / A;
      a1 = -2.0 * cw;
      a2 = 1.0 - alpha / A;
      break;
    case FilterType::kLowShelf:
      b0 = A * ((A + 1.0) - (A - 1.0) * cw + sa);
      b1 = 2.0 * A * ((A - 1.0) - (A + 1.0) * cw);
      b2 = A * ((A + 1.0) - (A - 1.0) * cw - sa);
      a0 = (A + 1.0) + (A - 1.0) * cw + sa;
      a1 = -2.0 * ((A - 1.0) + (A + 1.0) * cw);
      a2 = (A + 1.0) + (A - 1.0) * cw - sa;
      break;
    case FilterType::kHighShelf:
    default:
      b0 = A * ((A + 1.0) + (A - 1.0) * cw + sa);
      b1 = -2.0 * A * ((A - 1.0) + (A + 1.0) * cw);
      b2 = A * ((A + 1.0) + (A - 1.0) * cw - sa);
      a0 = (A + 1.0) - (A - 1.0) * cw + sa;
      a1 = 2.0 * ((A - 1.0) - (A + 1.0) * cw);
      a2 = (A + 1.0) - (A - 1.0) * cw - sa;
      break;
  }
  return {b0 / a0, b1 / a0, b2 / a0, a1 / a0, a2 / a0};
}

inline void apply_biquad(const Biquad& s, std::span<double> x) {
  if (s.is_identity()) return;
  double x1 = 0.0, x2 = 0.0, y1 = 0.0, y2 = 0.0;
  for (double& v : x) {
    const double y = s.b0 * v + s.b1 * x1 + s.b2 * x2 - s.a1 * y1 - s.a2 * y2;
    x2 = x1;
    x1 = v;
    y2 = y1;
    y1 = y;
    v = y;
  }
}

// ---------------------------------------------------------------------------
// Time stretching

struct WsolaConfig {
  double window_seconds = 0.025;
  double hop_seconds = 0.010;
};

// Waveform-similarity overlap-add. Output length is round(N * factor); pitch
// is unchanged. Each analysis frame is placed within +-hop/2 of its nominal
// position, at the offset whose normalized cross-correlation with the natural
// continuation of the previous frame is highest.
inline std::vector<double> time_stretch(std::span<const double> x, double factor, int sample_rate,
                                        const WsolaConfig& cfg = {}) {
  if (!(factor > 0.0)) throw Error(ErrorCode::kInvalidArgument, "stretch factor must be > 0");
  const long n_in = static_cast<long>(x.size());
  const long n_out = std::lround(static_cast<double>(n_in) * factor);
  if (n_in == 0 || n_out == 0) return std::vector<double>(static_cast<std::size_t>(n_out), 0.0);
  const long win = std::max(2L, std::lround(cfg.window_seconds * sample_rate));
  const long hop = std::max(1L, std::lround(cfg.hop_seconds * sample_rate));
  const long tol = hop / 2;
  const double hop_a = static_cast<double>(hop) / factor;
  const auto w = hann(static_cast<std::size_t>(win));
  auto at = [&](long i) { return i >= 0 && i < n_in ? x[static_cast<std::size_t>(i)] : 0.0; };

  std::vector<double> out(static_cast<std::size_t>(n_out + win), 0.0);
  std::vector<double> wsum(out.size(), 0.0);
  long prev = 0;
  for (long k = 0; k * hop < n_out; ++k) {
    const long nominal = std::lround(static_cast<double>(k) * hop_a);
    long pos = nominal;
    if (k > 0) {
      const long natural = prev + hop;
      double best = -2.0;
      for (long step = 0; step <= 2 * tol; ++step) {
        // 0, -1, +1, -2, +2, ...
        const long delta = (step % 2 == 0) ? step / 2 : -(step + 1) / 2;
        const long cand = nominal + delta;
        double xy = 0.0, xx = 0.0, yy = 0.0;
        for (long i = 0; i < win; ++i) {
          const double a = at(cand + i);
          const double b = at(natural + i);
          xy += a * b;
          xx += a * a;
          yy += b * b;
        }
        const double score = (xx > 0.0 && yy > 0.0) ? xy / std::sqrt(xx * yy) : 0.0;
        if (score > best + 1e-12) {
          best = score;
          pos = cand;
        }
      }
    }
    const long base = k * hop;
    for (long i = 0; i < win; ++i) {
      out[static_cast<std::size_t>(base + i)] += w[static_cast<std::size_t>(i)] * at(pos + i);
      wsum[static_cast<std::size_t>(base + i)] += w[static_cast<std::size_t>(i)];
    }
    prev = pos;
  }
  out.resize(static_cast<std::size_t>(n_out));
  for (long i = 0; i < n_out; ++i) {
    const double s = wsum[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(i)] = s > 1e-12 ? out[static_cast<std::size_t>(i)] / s : 0.0;
  }
  return out;
}

// Reads y at positions n * step for n in [0, out_len) with a Hann-windowed
// sinc kernel; the cutoff drops to Nyquist/step when decimating.
inline std::vector<double> resample_positions(std::span<const double> y, double step, std::size_t out_len,
                                              int half_taps = 16) {
  if (!(step > 0.0)) throw Error(ErrorCode::kInvalidArgument, "resample step must be > 0");
  const double fc = std::min(1.0, 1.0 / step);
  const double half_width = static_cast<double>(half_taps) / fc;
  const long n = static_cast<long>(y.size());
  std::vector<double> out(out_len, 0.0);
  for (std::size_t i = 0; i < out_len; ++i) {
    const double pos = static_cast<double>(i) * step;
    const long lo = static_cast<long>(std::ceil(pos - half_width));
    const long hi = static_cast<long>(std::floor(pos + half_width));
    double acc = 0.0;
    for (long j = std::max(0L, lo); j <= std::min(n - 1, hi); ++j) {
      const double t = pos - static_cast<double>(j);
      const double sinc = t == 0.0 ? fc : std::sin(std::numbers::pi * fc * t) / (std::numbers::pi * t);
      const double win = 0.5 + 0.5 * std::cos(std::numbers::pi * t / half_width);
      acc += y[static_cast<std::size_t>(j)] * sinc * win;
    }
    out[i] = acc;
  }
  return out;
}

}  // namespace mcidet::dsp
