#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "earlystop/numkit/attention.hpp"
#include "earlystop/numkit/layers.hpp"
#include "earlystop/stopenv/state.hpp"

namespace earlystop::dqn {

struct QNetConfig {
  std::size_t state_dim = stopenv::kStateDim;
  std::size_t hidden = 64;  // extractor width, split into tokens
  std::size_t tokens = 4;
  std::size_t embed = 64;
  std::size_t heads = 4;
  std::size_t head_hidden = 32;
  std::size_t actions = 2;

  std::size_t token_dim() const { return hidden / tokens; }

  void validate() const {
    if (state_dim == 0 || hidden == 0 || embed == 0 || head_hidden == 0) throw ConfigError("Q-network widths must be positive");
    if (tokens == 0 || hidden % tokens != 0) throw ConfigError("extractor width must split evenly into tokens");
    if (heads == 0 || embed % heads != 0) throw ConfigError("embedding width must split evenly across heads");
    if (actions != 2) throw ConfigError("the stop decision has exactly two actions");
  }
  friend bool operator==(const QNetConfig&, const QNetConfig&) = default;
};

inline void to_json(nlohmann::json& j, const QNetConfig& c) {
  j = {{"state_dim", c.state_dim}, {"hidden", c.hidden}, {"tokens", c.tokens},  {"embed", c.embed},
       {"heads", c.heads},         {"head_hidden", c.head_hidden}, {"actions", c.actions}};
}

inline void from_json(const nlohmann::json& j, QNetConfig& c) {
  QNetConfig d;
  c.state_dim = j.value("state_dim", d.state_dim);
  c.hidden = j.value("hidden", d.hidden);
  c.tokens = j.value("tokens", d.tokens);
  c.embed = j.value("embed", d.embed);
  c.heads = j.value("heads", d.heads);
  c.head_hidden = j.value("head_hidden", d.head_hidden);
  c.actions = j.value("actions", d.actions);
  c.validate();
}

// The extracted feature vector [N, hidden] viewed as [N, tokens, hidden/tokens].
template <class T>
nk::Tensor<T> tokenize(const nk::Tensor<T>& h, std::size_t tokens) {
  nk::require_rank(h, 2, "tokenize");
  if (tokens == 0 || h.dim(1) % tokens != 0) throw DimensionError("feature width does not split into tokens");
  return h.reshaped({h.dim(0), tokens, h.dim(1) / tokens});
}

template <class T>
nk::Tensor<T> detokenize(const nk::Tensor<T>& z) {
  nk::require_rank(z, 3, "detokenize");
  return z.reshaped({z.dim(0), z.dim(1) * z.dim(2)});
}

// state -> dense(hidden) -> relu -> dense(hidden) -> relu -> tokens -> dense(embed)
//       -> self-attention -> mean over tokens -> dense(head_hidden) -> relu -> dense(2)
template <class T>
class QNetwork {
 public:
  QNetwork() : QNetwork(QNetConfig{}) {}
  explicit QNetwork(QNetConfig c)
      : config_((c.validate(), c)),
        fe1_("extract.dense1", c.state_dim, c.hidden),
        fe2_("extract.dense2", c.hidden, c.hidden),
        proj_("tokens.proj", c.token_dim(), c.embed),
        attn_("attention", c.embed, c.heads),
        h1_("head.dense1", c.embed, c.head_hidden),
        h2_("head.dense2", c.head_hidden, c.actions) {}

  const QNetConfig& config() const { return config_; }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    fe1_.init(rng);
    fe2_.init(rng);
    proj_.init(rng, std::sqrt(0.5));
    attn_.init(rng);
    h1_.init(rng);
    h2_.init(rng, 0.1);  // keep initial Q-values near zero
  }

  // [N, state_dim] -> [N, 2].
  nk::Tensor<T> forward(const nk::Tensor<T>& states) {
    nk::require_rank(states, 2, "q-network input");
    if (states.dim(1) != config_.state_dim) throw DimensionError("q-network expects " + std::to_string(config_.state_dim) + " state components");
    if (!states.all_finite()) throw DomainError("state contains a non-finite component");
    auto h = r2_.forward(fe2_.forward(r1_.forward(fe1_.forward(states))));
    auto z = attn_.forward(proj_.forward(tokenize(h, config_.tokens)));
    const std::size_t N = z.dim(0), L = z.dim(1), E = z.dim(2);
    nk::Tensor<T> pooled({N, E});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t e = 0; e < E; ++e) {
        nk::Accum s = 0;
        for (std::size_t l = 0; l < L; ++l) s += z[(n * L + l) * E + e];
        pooled[n * E + e] = static_cast<T>(s / static_cast<double>(L));
      }
    return h2_.forward(rh_.forward(h1_.forward(pooled)));
  }

  // Accumulates parameter gradients for dL/dQ of the last forward pass.
  void backward(const nk::Tensor<T>& dq) {
    auto dpooled = h1_.backward(rh_.backward(h2_.backward(dq)));
    const std::size_t N = dpooled.dim(0), L = config_.tokens, E = config_.embed;
    nk::Tensor<T> dz({N, L, E});
    const T inv = static_cast<T>(1.0 / static_cast<double>(L));
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t e = 0; e < E; ++e) dz[(n * L + l) * E + e] = dpooled[n * E + e] * inv;
    auto dh = detokenize(proj_.backward(attn_.backward(dz)));
    fe1_.backward(r1_.backward(fe2_.backward(r2_.backward(dh))));
  }

  std::array<double, 2> q_values(const stopenv::StopState& s) {
    nk::Tensor<T> x({1, config_.state_dim});
    for (std::size_t i = 0; i < config_.state_dim; ++i) x[i] = static_cast<T>(s.v[i]);
    const auto q = forward(x);
    return {static_cast<double>(q[0]), static_cast<double>(q[1])};
  }

  nk::ParamRefs<T> parameters() {
    nk::ParamRefs<T> out;
    for (auto* d : {&fe1_, &fe2_, &proj_})
      for (auto* p : d->parameters()) out.push_back(p);
    for (auto* p : attn_.parameters()) out.push_back(p);
    for (auto* d : {&h1_, &h2_})
      for (auto* p : d->parameters()) out.push_back(p);
    return out;
  }

  std::vector<nk::LayerSpec> specs() const {
    return {fe1_.spec(), fe2_.spec(), proj_.spec(), attn_.spec(), h1_.spec(), h2_.spec()};
  }

 private:
  QNetConfig config_;
  nk::Dense<T> fe1_, fe2_, proj_;
  nk::MultiHeadAttention<T> attn_;
  nk::Dense<T> h1_, h2_;
  nk::Relu<T> r1_, r2_, rh_;
};

// target <- tau * online + (1 - tau) * target, parameter by parameter.
template <class T>
void soft_update(QNetwork<T>& online, QNetwork<T>& target, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw DomainError("soft-update rate must lie in [0, 1]");
  const auto src = online.parameters();
  const auto dst = target.parameters();
  if (src.size() != dst.size()) throw CompatibilityError("online and target networks differ in structure");
  for (std::size_t k = 0; k < src.size(); ++k) {
    if (src[k]->name != dst[k]->name || src[k]->value.shape() != dst[k]->value.shape()) {
      throw CompatibilityError("online and target networks differ at '" + src[k]->name + "'");
    }
  }
  for (std::size_t k = 0; k < src.size(); ++k) {
    auto& a = src[k]->value;
    auto& b = dst[k]->value;
    if (tau == 1.0) {
      b = a;
      continue;
    }
    for (std::size_t i = 0; i < a.size(); ++i) b[i] = static_cast<T>(tau * a[i] + (1.0 - tau) * b[i]);
  }
}

}  // namespace earlystop::dqn
