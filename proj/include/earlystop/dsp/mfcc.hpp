#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

#include "earlystop/common/error.hpp"

namespace earlystop::dsp {

using Matrix = std::vector<std::vector<double>>;

inline std::size_t frame_count(std::size_t samples, std::size_t frame_len, std::size_t hop) {
  if (frame_len == 0 || hop == 0) throw ConfigError("frame length and hop must be positive");
  if (samples < frame_len) {
    throw DataError("clip of " + std::to_string(samples) + " samples is shorter than one " +
                    std::to_string(frame_len) + "-sample frame");
  }
  return 1 + (samples - frame_len) / hop;
}

// Periodic Hann window.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / static_cast<double>(n));
  return w;
}

inline Matrix frame_and_window(std::span<const float> samples, std::size_t frame_len, std::size_t hop) {
  const std::size_t T = frame_count(samples.size(), frame_len, hop);
  const auto window = hann_window(frame_len);
  Matrix frames(T, std::vector<double>(frame_len));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < frame_len; ++i) frames[t][i] = samples[t * hop + i] * window[i];
  return frames;
}

inline double hz_to_mel(double hz) {
  if (!(hz >= 0.0)) throw DomainError("frequency must be non-negative, got " + std::to_string(hz));
  return 2595.0 * std::log10(1.0 + hz / 700.0);
}

inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filters with mel-spaced centres, piecewise linear in Hz and peak
// 1, so neighbouring filters sum to 1 between their centres and every FFT bin
// sums to at most 1. Rows: filters; columns: bins 0..nfft/2.
inline Matrix mel_filterbank(std::size_t n_mels, std::size_t nfft, double sample_rate, double fmin, double fmax) {
  if (n_mels == 0) throw ConfigError("need at least one mel filter");
  if (!(fmax > fmin) || fmax > sample_rate / 2) throw ConfigError("mel band edges must satisfy fmin < fmax <= rate/2");
  const std::size_t bins = nfft / 2 + 1;
  const double lo = hz_to_mel(fmin), hi = hz_to_mel(fmax);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) edges[i] = mel_to_hz(lo + (hi - lo) * i / static_cast<double>(n_mels + 1));
  Matrix fb(n_mels, std::vector<double>(bins, 0.0));
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = k * sample_rate / static_cast<double>(nfft);
      if (f > left && f <= centre) {
        fb[m][k] = (f - left) / (centre - left);
      } else if (f > centre && f < right) {
        fb[m][k] = (right - f) / (right - centre);
      }
    }
  }
  return fb;
}

// Orthonormal DCT-II basis, first `keep` rows of an n-point transform.
inline Matrix dct2_matrix(std::size_t keep, std::size_t n) {
  if (keep > n) throw ConfigError("cannot keep more DCT coefficients than inputs");
  Matrix d(keep, std::vector<double>(n));
  for (std::size_t k = 0; k < keep; ++k) {
    const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i)
      d[k][i] = scale * std::cos(std::numbers::pi * k * (2.0 * i + 1.0) / (2.0 * n));
  }
  return d;
}

// Real-input FFT of fixed length. Planning goes through a process-wide lock
// because the FFTW planner is not reentrant; execution is per-instance.
class PowerSpectrum {
 public:
  explicit PowerSpectrum(std::size_t nfft) : nfft_(nfft) {
    std::lock_guard lock(planner_mutex());
    in_ = fftw_alloc_real(nfft);
    out_ = fftw_alloc_complex(nfft / 2 + 1);
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(nfft), in_, out_, FFTW_ESTIMATE);
  }
  ~PowerSpectrum() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  PowerSpectrum(const PowerSpectrum&) = delete;
  PowerSpectrum& operator=(const PowerSpectrum&) = delete;

  std::size_t nfft() const { return nfft_; }

  // |X_k|^2 for k = 0..nfft/2; the frame is zero-padded to nfft.
  std::vector<double> operator()(std::span<const double> frame) {
    if (frame.size() > nfft_) throw ConfigError("nfft must be at least the frame length");
    std::fill(in_, in_ + nfft_, 0.0);
    std::copy(frame.begin(), frame.end(), in_);
    fftw_execute(plan_);
    std::vector<double> p(nfft_ / 2 + 1);
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
    return p;
  }

 private:
  static std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
  }

  std::size_t nfft_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

}  // namespace earlystop::dsp
