#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "earlystop/numkit/layers.hpp"
#include "earlystop/numkit/loss.hpp"

namespace earlystop::nk {

// Scaled dot-product self-attention with `heads` heads over [N, L, D]
// (query = key = value = input), followed by an output projection.
template <class T>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::string name, std::size_t embed_dim, std::size_t heads)
      : spec_{name, LayerKind::MultiHeadAttention},
        q_(name + ".q", embed_dim, embed_dim),
        k_(name + ".k", embed_dim, embed_dim),
        v_(name + ".v", embed_dim, embed_dim),
        o_(name + ".o", embed_dim, embed_dim) {
    spec_.heads = heads;
    spec_.embed_dim = embed_dim;
    spec_.validate();
  }

  void init(std::mt19937_64& rng) {
    // Glorot-style scale for the linear projections.
    for (auto* d : {&q_, &k_, &v_, &o_}) d->init(rng, std::sqrt(0.5));
  }

  Tensor<T> forward(const Tensor<T>& x) {
    const std::size_t D = spec_.embed_dim, H = spec_.heads, dh = D / H;
    if (x.rank() == 2) return forward(x.reshaped({1, x.dim(0), x.dim(1)})).reshaped(x.shape());
    require_rank(x, 3, spec_.name.c_str());
    if (x.dim(1) == 0) throw DimensionError(spec_.name + ": empty token sequence");
    if (x.dim(2) != D) {
      throw DimensionError(spec_.name + ": input axis 2 is " + std::to_string(x.dim(2)) + ", embed dim is " +
                           std::to_string(D));
    }
    N_ = x.dim(0);
    L_ = x.dim(1);
    q_out_ = q_.forward(x);
    k_out_ = k_.forward(x);
    v_out_ = v_.forward(x);
    weights_ = Tensor<T>({N_, H, L_, L_});
    Tensor<T> ctx({N_, L_, D});
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<T> scores(L_);
    for (std::size_t n = 0; n < N_; ++n) {
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t i = 0; i < L_; ++i) {
          for (std::size_t j = 0; j < L_; ++j) {
            Accum s = 0;
            for (std::size_t d = 0; d < dh; ++d) s += static_cast<double>(at(q_out_, n, i, h, d)) * at(k_out_, n, j, h, d);
            scores[j] = static_cast<T>(s * scale);
          }
          T* w = &weights_[((n * H + h) * L_ + i) * L_];
          softmax_row<T>(scores, std::span<T>(w, L_));
          for (std::size_t d = 0; d < dh; ++d) {
            Accum s = 0;
            for (std::size_t j = 0; j < L_; ++j) s += static_cast<double>(w[j]) * at(v_out_, n, j, h, d);
            ctx[(n * L_ + i) * D + h * dh + d] = static_cast<T>(s);
          }
        }
      }
    }
    return o_.forward(ctx);
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const bool unbatched = dy.rank() == 2;
    const std::size_t D = spec_.embed_dim, H = spec_.heads, dh = D / H;
    Tensor<T> dctx = o_.backward(unbatched ? dy.reshaped({1, dy.dim(0), dy.dim(1)}) : dy);
    Tensor<T> dq({N_, L_, D}), dk({N_, L_, D}), dv({N_, L_, D});
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> dw(L_), ds(L_);
    for (std::size_t n = 0; n < N_; ++n) {
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t i = 0; i < L_; ++i) {
          const T* w = &weights_[((n * H + h) * L_ + i) * L_];
          const T* g = &dctx[(n * L_ + i) * D + h * dh];
          for (std::size_t j = 0; j < L_; ++j) {
            Accum s = 0;
            for (std::size_t d = 0; d < dh; ++d) {
              s += static_cast<double>(g[d]) * at(v_out_, n, j, h, d);
              dv[(n * L_ + j) * D + h * dh + d] += static_cast<T>(w[j] * g[d]);
            }
            dw[j] = s;
          }
          Accum dot = 0;
          for (std::size_t j = 0; j < L_; ++j) dot += dw[j] * w[j];
          for (std::size_t j = 0; j < L_; ++j) ds[j] = w[j] * (dw[j] - dot) * scale;
          for (std::size_t j = 0; j < L_; ++j) {
            for (std::size_t d = 0; d < dh; ++d) {
              dq[(n * L_ + i) * D + h * dh + d] += static_cast<T>(ds[j] * at(k_out_, n, j, h, d));
              dk[(n * L_ + j) * D + h * dh + d] += static_cast<T>(ds[j] * at(q_out_, n, i, h, d));
            }
          }
        }
      }
    }
    Tensor<T> dx = q_.backward(dq);
    const Tensor<T> dxk = k_.backward(dk), dxv = v_.backward(dv);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dxk[i] + dxv[i];
    if (unbatched) dx.reshape({L_, D});
    return dx;
  }

  // [N, heads, L, L] attention weights from the last forward pass.
  const Tensor<T>& attention_weights() const { return weights_; }

  ParamRefs<T> parameters() {
    ParamRefs<T> out;
    for (auto* d : {&q_, &k_, &v_, &o_})
      for (auto* p : d->parameters()) out.push_back(p);
    return out;
  }
  const LayerSpec& spec() const { return spec_; }

 private:
  T at(const Tensor<T>& t, std::size_t n, std::size_t pos, std::size_t h, std::size_t d) const {
    const std::size_t D = spec_.embed_dim, dh = D / spec_.heads;
    return t[(n * L_ + pos) * D + h * dh + d];
  }

  LayerSpec spec_;
  Dense<T> q_, k_, v_, o_;
  std::size_t N_ = 0, L_ = 0;
  Tensor<T> q_out_, k_out_, v_out_, weights_;
};

}  // namespace earlystop::nk
