#pragma once

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "earlystop/numkit/tensor.hpp"

namespace earlystop::nk {

enum class Mode { Train, Eval };

struct ForwardContext {
  Mode mode = Mode::Eval;
  std::mt19937_64* rng = nullptr;  // required only by train-mode dropout
};

enum class LayerKind { Conv2d, BatchNorm, Relu, MaxPool2x2, Dropout, Dense, Softmax, MultiHeadAttention };

NLOHMANN_JSON_SERIALIZE_ENUM(LayerKind, {{LayerKind::Conv2d, "conv2d"},
                                         {LayerKind::BatchNorm, "batchnorm"},
                                         {LayerKind::Relu, "relu"},
                                         {LayerKind::MaxPool2x2, "maxpool2x2"},
                                         {LayerKind::Dropout, "dropout"},
                                         {LayerKind::Dense, "dense"},
                                         {LayerKind::Softmax, "softmax"},
                                         {LayerKind::MultiHeadAttention, "multihead-attention"}})

// Declarative description of a layer; recorded in checkpoint headers.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Relu;
  std::size_t kernel = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  double keep_prob = 1.0;
  std::size_t heads = 0;
  std::size_t embed_dim = 0;

  void validate() const {
    switch (kind) {
      case LayerKind::Conv2d:
        if (kernel < 1 || kernel % 2 == 0) throw ConfigError(name + ": conv kernel must be odd and >= 1");
        if (in_channels == 0 || out_channels == 0) throw ConfigError(name + ": conv channels must be positive");
        break;
      case LayerKind::Dense:
        if (in_channels == 0 || out_channels == 0) throw ConfigError(name + ": dense dims must be positive");
        break;
      case LayerKind::BatchNorm:
        if (in_channels == 0) throw ConfigError(name + ": batchnorm needs a channel count");
        break;
      case LayerKind::Dropout:
        if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw ConfigError(name + ": keep probability must be in (0, 1]");
        break;
      case LayerKind::MultiHeadAttention:
        if (heads == 0 || embed_dim == 0 || embed_dim % heads != 0) {
          throw ConfigError(name + ": embed dim must be a positive multiple of the head count");
        }
        break;
      default:
        break;
    }
  }
};

inline void to_json(nlohmann::json& j, const LayerSpec& s) {
  j = nlohmann::json{{"name", s.name}, {"kind", s.kind}};
  if (s.kernel) j["kernel"] = s.kernel;
  if (s.in_channels) j["in"] = s.in_channels;
  if (s.out_channels) j["out"] = s.out_channels;
  if (s.kind == LayerKind::Dropout) j["keep_prob"] = s.keep_prob;
  if (s.heads) j["heads"] = s.heads;
  if (s.embed_dim) j["embed_dim"] = s.embed_dim;
}

inline void from_json(const nlohmann::json& j, LayerSpec& s) {
  s.name = j.at("name").get<std::string>();
  s.kind = j.at("kind").get<LayerKind>();
  s.kernel = j.value("kernel", std::size_t{0});
  s.in_channels = j.value("in", std::size_t{0});
  s.out_channels = j.value("out", std::size_t{0});
  s.keep_prob = j.value("keep_prob", 1.0);
  s.heads = j.value("heads", std::size_t{0});
  s.embed_dim = j.value("embed_dim", std::size_t{0});
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <class T>
void he_normal(Tensor<T>& w, std::size_t fan_in, std::mt19937_64& rng, double gain = 1.0) {
  std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : w.values()) v = static_cast<T>(dist(rng));
}

// y = x W^T + b over the last axis; leading axes are flattened into rows.
template <class T>
class Dense {
 public:
  Dense() = default;
  Dense(std::string name, std::size_t in, std::size_t out)
      : spec_{name, LayerKind::Dense, 0, in, out},
        weight_(name + ".weight", Tensor<T>({out, in})),
        bias_(name + ".bias", Tensor<T>({out})) {
    spec_.validate();
  }

  void init(std::mt19937_64& rng, double gain = 1.0) {
    he_normal(weight_.value, spec_.in_channels, rng, gain);
    bias_.value.zero();
  }

  Tensor<T> forward(const Tensor<T>& x) {
    const std::size_t in = spec_.in_channels, out = spec_.out_channels;
    if (x.rank() < 1 || x.shape().back() != in) {
      throw DimensionError(spec_.name + ": last axis of input " + shape_string(x.shape()) +
                           " must equal in_features " + std::to_string(in));
    }
    input_ = x;
    const std::size_t rows = x.size() / in;
    Shape out_shape = x.shape();
    out_shape.back() = out;
    Tensor<T> y(out_shape);
    ConstMatMap<T> X(x.data(), rows, in);
    ConstMatMap<T> W(weight_.value.data(), out, in);
    MatMap<T> Y(y.data(), rows, out);
    Y.noalias() = X * W.transpose();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t o = 0; o < out; ++o) Y(r, o) += bias_.value[o];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const std::size_t in = spec_.in_channels, out = spec_.out_channels;
    const std::size_t rows = input_.size() / in;
    if (dy.size() != rows * out) throw DimensionError(spec_.name + ": upstream gradient shape mismatch");
    ConstMatMap<T> X(input_.data(), rows, in);
    ConstMatMap<T> dY(dy.data(), rows, out);
    MatMap<T> dW(weight_.grad.data(), out, in);
    dW.noalias() += dY.transpose() * X;
    for (std::size_t o = 0; o < out; ++o) {
      Accum s = 0;
      for (std::size_t r = 0; r < rows; ++r) s += dY(r, o);
      bias_.grad[o] += static_cast<T>(s);
    }
    Tensor<T> dx(input_.shape());
    ConstMatMap<T> W(weight_.value.data(), out, in);
    MatMap<T> dX(dx.data(), rows, in);
    dX.noalias() = dY * W;
    return dx;
  }

  ParamRefs<T> parameters() { return {&weight_, &bias_}; }
  const LayerSpec& spec() const { return spec_; }
  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

 private:
  LayerSpec spec_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Tensor<T> input_;
};

// 2-D cross-correlation, stride 1, "same" zero padding (odd kernels).
template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t k)
      : spec_{name, LayerKind::Conv2d, k, in_ch, out_ch},
        weight_(name + ".weight", Tensor<T>({out_ch, in_ch, k, k})),
        bias_(name + ".bias", Tensor<T>({out_ch})) {
    spec_.validate();
  }

  void init(std::mt19937_64& rng) {
    he_normal(weight_.value, spec_.in_channels * spec_.kernel * spec_.kernel, rng);
    bias_.value.zero();
  }

  Tensor<T> forward(const Tensor<T>& x) {
    require_rank(x, 4, spec_.name.c_str());
    if (x.dim(1) != spec_.in_channels) {
      throw DimensionError(spec_.name + ": input axis 1 (channels) is " + std::to_string(x.dim(1)) +
                           ", weights expect " + std::to_string(spec_.in_channels));
    }
    n_ = x.dim(0);
    h_ = x.dim(2);
    w_ = x.dim(3);
    if (h_ == 0 || w_ == 0) throw DimensionError(spec_.name + ": empty spatial axes in " + shape_string(x.shape()));
    const std::size_t K = spec_.in_channels * spec_.kernel * spec_.kernel, HW = h_ * w_;
    const std::size_t cout = spec_.out_channels;
    cols_.assign(n_ * K * HW, T{});
    Tensor<T> y({n_, cout, h_, w_});
    ConstMatMap<T> W(weight_.value.data(), cout, K);
    for (std::size_t n = 0; n < n_; ++n) {
      T* cols = cols_.data() + n * K * HW;
      im2col(x.data() + n * spec_.in_channels * HW, cols);
      MatMap<T> Y(y.data() + n * cout * HW, cout, HW);
      Y.noalias() = W * ConstMatMap<T>(cols, K, HW);
      for (std::size_t c = 0; c < cout; ++c) Y.row(c).array() += bias_.value[c];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const std::size_t K = spec_.in_channels * spec_.kernel * spec_.kernel, HW = h_ * w_;
    const std::size_t cout = spec_.out_channels;
    if (dy.size() != n_ * cout * HW) throw DimensionError(spec_.name + ": upstream gradient shape mismatch");
    Tensor<T> dx({n_, spec_.in_channels, h_, w_});
    ConstMatMap<T> W(weight_.value.data(), cout, K);
    MatMap<T> dW(weight_.grad.data(), cout, K);
    std::vector<T> dcols(K * HW);
    for (std::size_t n = 0; n < n_; ++n) {
      ConstMatMap<T> dY(dy.data() + n * cout * HW, cout, HW);
      ConstMatMap<T> cols(cols_.data() + n * K * HW, K, HW);
      dW.noalias() += dY * cols.transpose();
      for (std::size_t c = 0; c < cout; ++c) {
        Accum s = 0;
        for (std::size_t i = 0; i < HW; ++i) s += dY(c, i);
        bias_.grad[c] += static_cast<T>(s);
      }
      MatMap<T> dC(dcols.data(), K, HW);
      dC.noalias() = W.transpose() * dY;
      col2im(dcols.data(), dx.data() + n * spec_.in_channels * HW);
    }
    return dx;
  }

  ParamRefs<T> parameters() { return {&weight_, &bias_}; }
  const LayerSpec& spec() const { return spec_; }
  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

 private:
  void im2col(const T* img, T* cols) const {
    const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(spec_.kernel), pad = k / 2;
    const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(h_), Wd = static_cast<std::ptrdiff_t>(w_);
    std::size_t row = 0;
    for (std::size_t c = 0; c < spec_.in_channels; ++c) {
      const T* plane = img + c * h_ * w_;
      for (std::ptrdiff_t ky = 0; ky < k; ++ky) {
        for (std::ptrdiff_t kx = 0; kx < k; ++kx, ++row) {
          T* dst = cols + row * h_ * w_;
          for (std::ptrdiff_t y = 0; y < H; ++y) {
            const std::ptrdiff_t sy = y + ky - pad;
            for (std::ptrdiff_t x = 0; x < Wd; ++x) {
              const std::ptrdiff_t sx = x + kx - pad;
              dst[y * Wd + x] = (sy >= 0 && sy < H && sx >= 0 && sx < Wd) ? plane[sy * Wd + sx] : T{};
            }
          }
        }
      }
    }
  }

  void col2im(const T* cols, T* img) const {
    const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(spec_.kernel), pad = k / 2;
    const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(h_), Wd = static_cast<std::ptrdiff_t>(w_);
    std::size_t row = 0;
    for (std::size_t c = 0; c < spec_.in_channels; ++c) {
      T* plane = img + c * h_ * w_;
      for (std::ptrdiff_t ky = 0; ky < k; ++ky) {
        for (std::ptrdiff_t kx = 0; kx < k; ++kx, ++row) {
          const T* src = cols + row * h_ * w_;
          for (std::ptrdiff_t y = 0; y < H; ++y) {
            const std::ptrdiff_t sy = y + ky - pad;
            if (sy < 0 || sy >= H) continue;
            for (std::ptrdiff_t x = 0; x < Wd; ++x) {
              const std::ptrdiff_t sx = x + kx - pad;
              if (sx >= 0 && sx < Wd) plane[sy * Wd + sx] += src[y * Wd + x];
            }
          }
        }
      }
    }
  }

  LayerSpec spec_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  std::vector<T> cols_;
  std::size_t n_ = 0, h_ = 0, w_ = 0;
};

// Batch normalisation over axis 1 of a rank-2 [N,C] or rank-4 [N,C,H,W] input.
template <class T>
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(std::string name, std::size_t channels, double momentum = 0.1, double eps = 1e-5)
      : spec_{name, LayerKind::BatchNorm, 0, channels},
        gamma_(name + ".gamma", Tensor<T>({channels}, T{1})),
        beta_(name + ".beta", Tensor<T>({channels})),
        running_mean_({channels}),
        running_var_({channels}, T{1}),
        momentum_(momentum),
        eps_(eps) {
    spec_.validate();
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (x.rank() != 2 && x.rank() != 4) {
      throw DimensionError(spec_.name + ": expected [N,C] or [N,C,H,W], got " + shape_string(x.shape()));
    }
    const std::size_t C = spec_.in_channels;
    if (x.dim(1) != C) {
      throw DimensionError(spec_.name + ": input axis 1 is " + std::to_string(x.dim(1)) + ", expected " +
                           std::to_string(C));
    }
    mode_ = mode;
    n_ = x.dim(0);
    inner_ = x.size() / (n_ * C);
    Tensor<T> y(x.shape());
    if (mode == Mode::Train) {
      if (n_ < 2) throw DimensionError(spec_.name + ": train-mode batch normalisation needs batch size >= 2");
      xhat_ = Tensor<T>(x.shape());
      inv_std_.assign(C, 0.0);
      const double m = static_cast<double>(n_ * inner_);
      for (std::size_t c = 0; c < C; ++c) {
        Accum sum = 0, sq = 0;
        for_each_index(c, [&](std::size_t i) { sum += x[i]; });
        const double mean = sum / m;
        for_each_index(c, [&](std::size_t i) {
          const double d = x[i] - mean;
          sq += d * d;
        });
        const double var = sq / m;
        const double inv = 1.0 / std::sqrt(var + eps_);
        inv_std_[c] = inv;
        for_each_index(c, [&](std::size_t i) {
          const double xh = (x[i] - mean) * inv;
          xhat_[i] = static_cast<T>(xh);
          y[i] = static_cast<T>(gamma_.value[c] * xh + beta_.value[c]);
        });
        const double unbiased = m > 1 ? var * m / (m - 1) : var;
        running_mean_[c] = static_cast<T>((1 - momentum_) * running_mean_[c] + momentum_ * mean);
        running_var_[c] = static_cast<T>((1 - momentum_) * running_var_[c] + momentum_ * unbiased);
      }
    } else {
      inv_std_.assign(C, 0.0);
      for (std::size_t c = 0; c < C; ++c) {
        const double inv = 1.0 / std::sqrt(static_cast<double>(running_var_[c]) + eps_);
        inv_std_[c] = inv;
        const double mean = running_mean_[c];
        for_each_index(c, [&](std::size_t i) {
          y[i] = static_cast<T>(gamma_.value[c] * (x[i] - mean) * inv + beta_.value[c]);
        });
      }
      xhat_ = x;  // eval backward only needs the scale; keep input for dgamma
      eval_mean_.assign(running_mean_.values().begin(), running_mean_.values().end());
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const std::size_t C = spec_.in_channels;
    Tensor<T> dx(dy.shape());
    const double m = static_cast<double>(n_ * inner_);
    for (std::size_t c = 0; c < C; ++c) {
      const double g = gamma_.value[c], inv = inv_std_[c];
      if (mode_ == Mode::Train) {
        Accum sum_dy = 0, sum_dy_xh = 0;
        for_each_index(c, [&](std::size_t i) {
          sum_dy += dy[i];
          sum_dy_xh += static_cast<double>(dy[i]) * xhat_[i];
        });
        gamma_.grad[c] += static_cast<T>(sum_dy_xh);
        beta_.grad[c] += static_cast<T>(sum_dy);
        for_each_index(c, [&](std::size_t i) {
          dx[i] = static_cast<T>(g * inv / m * (m * dy[i] - sum_dy - xhat_[i] * sum_dy_xh));
        });
      } else {
        Accum sum_dy = 0, sum_dy_xh = 0;
        for_each_index(c, [&](std::size_t i) {
          const double xh = (xhat_[i] - eval_mean_[c]) * inv;
          sum_dy += dy[i];
          sum_dy_xh += dy[i] * xh;
          dx[i] = static_cast<T>(dy[i] * g * inv);
        });
        gamma_.grad[c] += static_cast<T>(sum_dy_xh);
        beta_.grad[c] += static_cast<T>(sum_dy);
      }
    }
    return dx;
  }

  ParamRefs<T> parameters() { return {&gamma_, &beta_}; }
  BufferRefs<T> buffers() {
    return {{spec_.name + ".running_mean", &running_mean_}, {spec_.name + ".running_var", &running_var_}};
  }
  const LayerSpec& spec() const { return spec_; }
  Parameter<T>& gamma() { return gamma_; }
  Parameter<T>& beta() { return beta_; }
  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }

 private:
  template <class F>
  void for_each_index(std::size_t c, F&& f) const {
    const std::size_t C = spec_.in_channels;
    for (std::size_t n = 0; n < n_; ++n) {
      const std::size_t base = (n * C + c) * inner_;
      for (std::size_t j = 0; j < inner_; ++j) f(base + j);
    }
  }

  LayerSpec spec_;
  Parameter<T> gamma_;
  Parameter<T> beta_;
  Tensor<T> running_mean_;
  Tensor<T> running_var_;
  double momentum_ = 0.1;
  double eps_ = 1e-5;
  Mode mode_ = Mode::Eval;
  std::size_t n_ = 0, inner_ = 0;
  Tensor<T> xhat_;
  std::vector<double> inv_std_;
  std::vector<double> eval_mean_;
};

template <class T>
class Relu {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    mask_.assign(x.size(), 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > T{0}) {
        y[i] = x[i];
        mask_[i] = 1;
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = mask_[i] ? dy[i] : T{0};
    return dx;
  }

 private:
  std::vector<std::uint8_t> mask_;
};

// 2x2 max pooling, stride 2, ceil mode: a trailing odd row/column forms a
// clipped window. Ties go to the first maximal element in row-major order.
template <class T>
class MaxPool2x2 {
 public:
  static std::size_t out_extent(std::size_t n) { return (n + 1) / 2; }

  Tensor<T> forward(const Tensor<T>& x) {
    require_rank(x, 4, "maxpool2x2");
    in_shape_ = x.shape();
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Ho = out_extent(H), Wo = out_extent(W);
    Tensor<T> y({N, C, Ho, Wo});
    argmax_.assign(y.size(), 0);
    std::size_t o = 0;
    for (std::size_t p = 0; p < N * C; ++p) {
      const std::size_t base = p * H * W;
      for (std::size_t oy = 0; oy < Ho; ++oy) {
        for (std::size_t ox = 0; ox < Wo; ++ox, ++o) {
          std::size_t best = base + (2 * oy) * W + 2 * ox;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            const std::size_t iy = 2 * oy + dy;
            if (iy >= H) break;
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t ix = 2 * ox + dx;
              if (ix >= W) break;
              const std::size_t idx = base + iy * W + ix;
              if (x[idx] > x[best]) best = idx;
            }
          }
          y[o] = x[best];
          argmax_[o] = best;
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx(in_shape_);
    for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax_[o]] += dy[o];
    return dx;
  }

 private:
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

// Inverted dropout parameterised by keep probability: train-mode outputs are
// scaled by 1/keep so expectations match eval mode, which is the identity.
template <class T>
class Dropout {
 public:
  Dropout() = default;
  explicit Dropout(double keep_prob, std::string name = "dropout") : spec_{name, LayerKind::Dropout} {
    spec_.keep_prob = keep_prob;
    spec_.validate();
  }

  Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx) {
    active_ = ctx.mode == Mode::Train && spec_.keep_prob < 1.0;
    if (!active_) return x;
    if (ctx.rng == nullptr) throw StateError(spec_.name + ": train-mode dropout needs a random generator");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const T scale = static_cast<T>(1.0 / spec_.keep_prob);
    mask_.assign(x.size(), T{0});
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (u(*ctx.rng) < spec_.keep_prob) mask_[i] = scale;
      y[i] = x[i] * mask_[i];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    if (!active_) return dy;
    Tensor<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * mask_[i];
    return dx;
  }

  const LayerSpec& spec() const { return spec_; }

 private:
  LayerSpec spec_{"dropout", LayerKind::Dropout};
  bool active_ = false;
  std::vector<T> mask_;
};

}  // namespace earlystop::nk
