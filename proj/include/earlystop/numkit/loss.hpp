#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "earlystop/numkit/tensor.hpp"

namespace earlystop::nk {

inline constexpr double kLogClamp = 1e-12;

// Numerically stable softmax of one row, written into `out`.
template <class T>
void softmax_row(std::span<const T> logits, std::span<T> out) {
  const T mx = *std::max_element(logits.begin(), logits.end());
  Accum sum = 0;
  for (std::size_t c = 0; c < logits.size(); ++c) sum += std::exp(static_cast<double>(logits[c] - mx));
  for (std::size_t c = 0; c < logits.size(); ++c)
    out[c] = static_cast<T>(std::exp(static_cast<double>(logits[c] - mx)) / sum);
}

// Softmax over the last axis.
template <class T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() < 1 || logits.shape().back() < 2) {
    throw DimensionError("softmax needs at least two classes on the last axis, got " + shape_string(logits.shape()));
  }
  const std::size_t C = logits.shape().back();
  Tensor<T> out(logits.shape());
  for (std::size_t r = 0; r < logits.size() / C; ++r) {
    softmax_row<T>(logits.values().subspan(r * C, C), out.values().subspan(r * C, C));
  }
  return out;
}

template <class T>
void require_onehot(const Tensor<T>& onehot) {
  const std::size_t C = onehot.shape().back();
  for (std::size_t r = 0; r < onehot.size() / C; ++r) {
    int ones = 0;
    for (std::size_t c = 0; c < C; ++c) {
      const T v = onehot[r * C + c];
      if (v == T{1}) {
        ++ones;
      } else if (v != T{0}) {
        throw LabelError("label row " + std::to_string(r) + " is not one-hot");
      }
    }
    if (ones != 1) throw LabelError("label row " + std::to_string(r) + " is not one-hot");
  }
}

// Mean over the batch of -sum_c y_c log p_c, with log clamped at 1e-12.
template <class T>
double cross_entropy(const Tensor<T>& probs, const Tensor<T>& onehot) {
  require_rank(probs, 2, "cross_entropy");
  require_same_shape(probs, onehot, "cross_entropy");
  require_onehot(onehot);
  const std::size_t N = probs.dim(0), C = probs.dim(1);
  Accum total = 0;
  for (std::size_t i = 0; i < N * C; ++i) {
    if (onehot[i] != T{0}) total -= std::log(std::max(static_cast<double>(probs[i]), kLogClamp));
  }
  return total / static_cast<double>(N);
}

// d cross_entropy(softmax(logits)) / d logits = (p - y) / N.
template <class T>
Tensor<T> softmax_cross_entropy_grad(const Tensor<T>& probs, const Tensor<T>& onehot) {
  require_same_shape(probs, onehot, "softmax_cross_entropy_grad");
  const double inv_n = 1.0 / static_cast<double>(probs.dim(0));
  Tensor<T> g(probs.shape());
  for (std::size_t i = 0; i < probs.size(); ++i)
    g[i] = static_cast<T>((static_cast<double>(probs[i]) - onehot[i]) * inv_n);
  return g;
}

template <class T>
Tensor<T> onehot_labels(std::span<const int> labels, std::size_t classes) {
  Tensor<T> y({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw LabelError("label " + std::to_string(labels[i]) + " out of range");
    }
    y[i * classes + static_cast<std::size_t>(labels[i])] = T{1};
  }
  return y;
}

}  // namespace earlystop::nk
