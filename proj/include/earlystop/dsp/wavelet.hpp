#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "earlystop/common/error.hpp"

namespace earlystop::dsp {

// Orthogonal two-channel filter bank. `lowpass` is the analysis scaling
// filter h(n); `highpass` is its quadrature mirror g(n) = (-1)^(n+1) h(N-1-n).
struct WaveletSpec {
  std::string family;
  std::vector<double> lowpass;
  std::vector<double> highpass;
  std::size_t levels = 4;

  std::size_t filter_length() const { return lowpass.size(); }

  static WaveletSpec coif1(std::size_t levels = 4) {
    const double s7 = std::sqrt(7.0), norm = 16.0 * std::sqrt(2.0);
    WaveletSpec w;
    w.family = "coif1";
    w.levels = levels;
    w.lowpass = {(s7 - 3.0) / norm,         (1.0 - s7) / norm, (14.0 - 2.0 * s7) / norm,
                 (14.0 + 2.0 * s7) / norm, (5.0 + s7) / norm,  (1.0 - s7) / norm};
    const std::size_t n = w.lowpass.size();
    w.highpass.resize(n);
    for (std::size_t i = 0; i < n; ++i) w.highpass[i] = (i % 2 == 0 ? 1.0 : -1.0) * -w.lowpass[n - 1 - i];
    return w;
  }
};

// details[0] is the finest level; input_lengths[j] is the length of the
// signal that level j+1 decomposed (input_lengths[0] is the original length).
struct WaveletPyramid {
  std::vector<std::vector<double>> details;
  std::vector<double> approximation;
  std::vector<std::size_t> input_lengths;
};

namespace detail {

// Half-sample symmetric extension: x[-1] = x[0], x[n] = x[n-1].
inline std::size_t reflect(std::ptrdiff_t i, std::ptrdiff_t n) {
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - 1 - i;
  return static_cast<std::size_t>(i);
}

}  // namespace detail

// Number of coefficients per band for an input of length n and filter length f.
inline std::size_t dwt_coefficient_count(std::size_t n, std::size_t f) { return (n + f - 1) / 2; }

// One analysis level: a[k] = sum_j h[j] x~[2k+1-j], d[k] likewise with g.
// Enough coefficients are kept for the synthesis below to be exact.
inline void dwt_step(std::span<const double> x, const WaveletSpec& w, std::vector<double>& approx,
                     std::vector<double>& detail) {
  const std::size_t F = w.filter_length();
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  const std::size_t K = dwt_coefficient_count(x.size(), F);
  approx.assign(K, 0.0);
  detail.assign(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    double a = 0, d = 0;
    for (std::size_t j = 0; j < F; ++j) {
      const double v = x[detail::reflect(static_cast<std::ptrdiff_t>(2 * k + 1) - static_cast<std::ptrdiff_t>(j), n)];
      a += w.lowpass[j] * v;
      d += w.highpass[j] * v;
    }
    approx[k] = a;
    detail[k] = d;
  }
}

// Transpose of the analysis operator restricted to [0, n).
inline std::vector<double> idwt_step(std::span<const double> approx, std::span<const double> detail,
                                     const WaveletSpec& w, std::size_t n) {
  if (approx.size() != detail.size()) throw DimensionError("approximation and detail bands differ in length");
  const auto F = static_cast<std::ptrdiff_t>(w.filter_length());
  std::vector<double> x(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<std::ptrdiff_t>(i);
    double s = 0;
    for (std::ptrdiff_t k = ii / 2; k < static_cast<std::ptrdiff_t>(approx.size()); ++k) {
      const std::ptrdiff_t j = 2 * k + 1 - ii;
      if (j < 0) continue;
      if (j >= F) break;
      s += w.lowpass[static_cast<std::size_t>(j)] * approx[static_cast<std::size_t>(k)] +
           w.highpass[static_cast<std::size_t>(j)] * detail[static_cast<std::size_t>(k)];
    }
    x[i] = s;
  }
  return x;
}

inline WaveletPyramid dwt_analyze(std::span<const double> signal, const WaveletSpec& w) {
  if (w.levels == 0) throw ConfigError("wavelet decomposition needs at least one level");
  WaveletPyramid p;
  std::vector<double> current(signal.begin(), signal.end());
  for (std::size_t level = 1; level <= w.levels; ++level) {
    if (current.size() < w.filter_length()) {
      throw ConfigError(std::to_string(w.levels) + " levels is too deep: level " + std::to_string(level) +
                        " input has " + std::to_string(current.size()) + " samples, filter has " +
                        std::to_string(w.filter_length()));
    }
    std::vector<double> a, d;
    dwt_step(current, w, a, d);
    p.input_lengths.push_back(current.size());
    p.details.push_back(std::move(d));
    current = std::move(a);
  }
  p.approximation = std::move(current);
  return p;
}

inline std::vector<double> idwt_synthesize(const WaveletPyramid& p, const WaveletSpec& w) {
  std::vector<double> current = p.approximation;
  for (std::size_t level = p.details.size(); level-- > 0;) {
    current = idwt_step(current, p.details[level], w, p.input_lengths[level]);
  }
  return current;
}

}  // namespace earlystop::dsp
