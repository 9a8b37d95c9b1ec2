#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "earlystop/dsp/features.hpp"
#include "earlystop/numkit/numkit.hpp"

namespace earlystop::bmcnn {

inline const std::vector<std::string>& class_names() {
  static const std::vector<std::string> names{"low", "mid", "high"};
  return names;
}

inline int class_index(const std::string& name) {
  const auto& n = class_names();
  const auto it = std::find(n.begin(), n.end(), name);
  if (it == n.end()) throw LabelError("unknown class '" + name + "' (expected low, mid or high)");
  return static_cast<int>(it - n.begin());
}

struct Geometry {
  std::size_t frames = 124;
  std::size_t coeffs = 13;
  std::vector<std::size_t> channels{16, 32, 64, 64};
  std::size_t kernel = 3;
  std::size_t hidden = 128;
  double keep_prob = 0.75;
  std::size_t classes = 3;

  // Flattened output width of one branch: ceil-mode pooling halves each axis per block.
  std::size_t branch_dim() const {
    std::size_t h = frames, w = coeffs;
    for (std::size_t b = 0; b < channels.size(); ++b) {
      h = nk::MaxPool2x2<float>::out_extent(h);
      w = nk::MaxPool2x2<float>::out_extent(w);
    }
    return channels.back() * h * w;
  }

  void validate() const {
    if (frames == 0 || coeffs == 0) throw ConfigError("feature map geometry must be non-empty");
    if (channels.empty()) throw ConfigError("each branch needs at least one block");
    if (kernel == 0 || kernel % 2 == 0) throw ConfigError("kernel size must be odd");
    if (hidden == 0 || classes < 2) throw ConfigError("head needs a hidden width and at least two classes");
    if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw ConfigError("keep probability must lie in (0, 1]");
  }

  friend bool operator==(const Geometry&, const Geometry&) = default;
};

inline void to_json(nlohmann::json& j, const Geometry& g) {
  j = {{"frames", g.frames}, {"coeffs", g.coeffs}, {"channels", g.channels}, {"kernel", g.kernel},
       {"hidden", g.hidden}, {"keep_prob", g.keep_prob}, {"classes", g.classes}};
}

inline void from_json(const nlohmann::json& j, Geometry& g) {
  Geometry d;
  g.frames = j.value("frames", d.frames);
  g.coeffs = j.value("coeffs", d.coeffs);
  g.channels = j.value("channels", d.channels);
  g.kernel = j.value("kernel", d.kernel);
  g.hidden = j.value("hidden", d.hidden);
  g.keep_prob = j.value("keep_prob", d.keep_prob);
  g.classes = j.value("classes", d.classes);
}

struct ClassProbabilities {
  std::vector<double> probs;
  std::vector<double> logits;
  int argmax = 0;

  double max_prob() const { return probs[static_cast<std::size_t>(argmax)]; }
};

// Lowest index wins exact ties.
inline int argmax_first(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Per-coefficient standardisation of one feature kind, fitted on training maps.
struct InputNorm {
  std::vector<double> mean;
  std::vector<double> scale;
};

inline void to_json(nlohmann::json& j, const InputNorm& n) { j = {{"mean", n.mean}, {"scale", n.scale}}; }
inline void from_json(const nlohmann::json& j, InputNorm& n) {
  j.at("mean").get_to(n.mean);
  j.at("scale").get_to(n.scale);
}

inline InputNorm fit_input_norm(std::span<const dsp::FeatureMap* const> maps, std::size_t coeffs) {
  if (maps.empty()) throw DataError("cannot fit input normalisation on an empty split");
  std::vector<double> sum(coeffs, 0.0), sq(coeffs, 0.0);
  double count = 0;
  for (const auto* m : maps) {
    if (m->cols != coeffs) throw DimensionError("feature map has " + std::to_string(m->cols) + " coefficients, expected " + std::to_string(coeffs));
    for (std::size_t t = 0; t < m->rows; ++t)
      for (std::size_t f = 0; f < coeffs; ++f) {
        const double v = m->at(t, f);
        sum[f] += v;
        sq[f] += v * v;
      }
    count += static_cast<double>(m->rows);
  }
  InputNorm n;
  for (std::size_t f = 0; f < coeffs; ++f) {
    const double mu = sum[f] / count;
    n.mean.push_back(mu);
    n.scale.push_back(std::max(std::sqrt(std::max(sq[f] / count - mu * mu, 0.0)), 1e-6));
  }
  return n;
}

inline InputNorm identity_norm(std::size_t coeffs) { return {std::vector<double>(coeffs, 0.0), std::vector<double>(coeffs, 1.0)}; }

template <class T>
class Branch {
 public:
  Branch() = default;
  Branch(const std::string& name, const Geometry& g) {
    std::size_t in = 1;
    for (std::size_t b = 0; b < g.channels.size(); ++b) {
      const std::string p = name + ".block" + std::to_string(b + 1);
      blocks_.push_back(Block{p, nk::Conv2d<T>(p + ".conv", in, g.channels[b], g.kernel),
                              nk::BatchNorm<T>(p + ".bn", g.channels[b]), nk::Relu<T>{}, nk::MaxPool2x2<T>{},
                              nk::Dropout<T>(g.keep_prob, p + ".dropout")});
      in = g.channels[b];
    }
  }

  void init(std::mt19937_64& rng) {
    for (auto& b : blocks_) b.conv.init(rng);
  }

  // [N,1,T,F] -> [N,C,h,w]
  nk::Tensor<T> forward(const nk::Tensor<T>& x, const nk::ForwardContext& ctx) {
    nk::Tensor<T> h = x;
    for (auto& b : blocks_) {
      h = b.conv.forward(h);
      h = b.bn.forward(h, ctx.mode);
      h = b.relu.forward(h);
      h = b.pool.forward(h);
      h = b.drop.forward(h, ctx);
    }
    return h;
  }

  nk::Tensor<T> backward(const nk::Tensor<T>& dy) {
    nk::Tensor<T> g = dy;
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
      g = it->drop.backward(g);
      g = it->pool.backward(g);
      g = it->relu.backward(g);
      g = it->bn.backward(g);
      g = it->conv.backward(g);
    }
    return g;
  }

  nk::ParamRefs<T> parameters() {
    nk::ParamRefs<T> out;
    for (auto& b : blocks_) {
      for (auto* p : b.conv.parameters()) out.push_back(p);
      for (auto* p : b.bn.parameters()) out.push_back(p);
    }
    return out;
  }

  nk::BufferRefs<T> buffers() {
    nk::BufferRefs<T> out;
    for (auto& b : blocks_)
      for (auto& buf : b.bn.buffers()) out.push_back(buf);
    return out;
  }

  std::vector<nk::LayerSpec> specs() const {
    std::vector<nk::LayerSpec> out;
    for (const auto& b : blocks_) {
      out.push_back(b.conv.spec());
      out.push_back(b.bn.spec());
      out.push_back({b.name + ".relu", nk::LayerKind::Relu});
      out.push_back({b.name + ".pool", nk::LayerKind::MaxPool2x2});
      out.push_back(b.drop.spec());
    }
    return out;
  }

 private:
  struct Block {
    std::string name;
    nk::Conv2d<T> conv;
    nk::BatchNorm<T> bn;
    nk::Relu<T> relu;
    nk::MaxPool2x2<T> pool;
    nk::Dropout<T> drop;
  };
  std::vector<Block> blocks_;
};

inline constexpr const char* kClassifierKind = "bmcnn";

// Two convolutional branches (MFCC, wavelet), concatenated and classified by
// dense -> ReLU -> dense -> softmax.
template <class T>
class Model {
 public:
  explicit Model(Geometry g = {})
      : geometry_((g.validate(), g)),
        mfcc_("mfcc", geometry_),
        wavelet_("wavelet", geometry_),
        dense1_("head.dense1", 2 * geometry_.branch_dim(), geometry_.hidden),
        dense2_("head.dense2", geometry_.hidden, geometry_.classes),
        norm_mfcc_(identity_norm(geometry_.coeffs)),
        norm_wavelet_(identity_norm(geometry_.coeffs)) {}

  // He initialisation throughout; the output layer starts small so initial
  // predictions are close to uniform.
  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    mfcc_.init(rng);
    wavelet_.init(rng);
    dense1_.init(rng);
    dense2_.init(rng, 1e-3 / std::sqrt(2.0 / static_cast<double>(geometry_.hidden)));
  }

  const Geometry& geometry() const { return geometry_; }
  std::size_t branch_dim() const { return geometry_.branch_dim(); }

  void set_input_norm(InputNorm mfcc, InputNorm wavelet) {
    if (mfcc.mean.size() != geometry_.coeffs || wavelet.mean.size() != geometry_.coeffs) {
      throw DimensionError("input normalisation width does not match the coefficient count");
    }
    norm_mfcc_ = std::move(mfcc);
    norm_wavelet_ = std::move(wavelet);
  }
  const InputNorm& mfcc_norm() const { return norm_mfcc_; }
  const InputNorm& wavelet_norm() const { return norm_wavelet_; }

  // Standardise, then zero every frame at index >= prefix (frames 1..prefix kept).
  nk::Tensor<T> prepare(std::span<const dsp::FeatureMap* const> maps, std::span<const std::size_t> prefix,
                        dsp::FeatureKind kind) const {
    const auto& norm = kind == dsp::FeatureKind::Mfcc ? norm_mfcc_ : norm_wavelet_;
    const std::size_t Tn = geometry_.frames, F = geometry_.coeffs;
    nk::Tensor<T> x({maps.size(), 1, Tn, F});
    for (std::size_t n = 0; n < maps.size(); ++n) {
      const auto& m = *maps[n];
      if (m.rows != Tn || m.cols != F) {
        throw DimensionError(dsp::to_string(kind) + " map is " + std::to_string(m.rows) + "x" + std::to_string(m.cols) +
                             ", model expects " + std::to_string(Tn) + "x" + std::to_string(F));
      }
      const std::size_t keep = std::min(prefix[n], Tn);
      for (std::size_t t = 0; t < keep; ++t)
        for (std::size_t f = 0; f < F; ++f)
          x[(n * Tn + t) * F + f] = static_cast<T>((m.at(t, f) - norm.mean[f]) / norm.scale[f]);
    }
    return x;
  }

  // [N,1,T,F] x2 -> logits [N,C]
  nk::Tensor<T> logits(const nk::Tensor<T>& x_mfcc, const nk::Tensor<T>& x_wavelet, const nk::ForwardContext& ctx) {
    const auto a = mfcc_.forward(x_mfcc, ctx);
    const auto b = wavelet_.forward(x_wavelet, ctx);
    const std::size_t N = a.dim(0), d = branch_dim();
    if (a.size() != N * d || b.size() != N * d) throw DimensionError("branch output width differs from geometry");
    branch_shape_ = a.shape();
    nk::Tensor<T> z({N, 2 * d});
    for (std::size_t n = 0; n < N; ++n) {
      std::copy_n(a.data() + n * d, d, z.data() + n * 2 * d);
      std::copy_n(b.data() + n * d, d, z.data() + n * 2 * d + d);
    }
    return dense2_.forward(head_relu_.forward(dense1_.forward(z)));
  }

  // Accumulates parameter gradients from dL/dlogits.
  void backward(const nk::Tensor<T>& dlogits) {
    const auto dz = dense1_.backward(head_relu_.backward(dense2_.backward(dlogits)));
    const std::size_t N = dz.dim(0), d = branch_dim();
    nk::Tensor<T> da(branch_shape_), db(branch_shape_);
    for (std::size_t n = 0; n < N; ++n) {
      std::copy_n(dz.data() + n * 2 * d, d, da.data() + n * d);
      std::copy_n(dz.data() + n * 2 * d + d, d, db.data() + n * d);
    }
    mfcc_.backward(da);
    wavelet_.backward(db);
  }

  // Eval-mode probabilities for a batch of clips at the given prefix lengths.
  std::vector<ClassProbabilities> predict(std::span<const dsp::FeatureMap* const> mfcc,
                                          std::span<const dsp::FeatureMap* const> wavelet,
                                          std::span<const std::size_t> prefix) {
    if (mfcc.size() != wavelet.size() || mfcc.size() != prefix.size()) {
      throw DimensionError("predict needs one MFCC map, one wavelet map and one prefix per clip");
    }
    for (std::size_t t : prefix) check_prefix(t);
    std::vector<ClassProbabilities> out;
    out.reserve(mfcc.size());
    const nk::ForwardContext ctx{nk::Mode::Eval, nullptr};
    for (std::size_t start = 0; start < mfcc.size(); start += kChunk) {
      const std::size_t n = std::min(kChunk, mfcc.size() - start);
      const auto z = logits(prepare(mfcc.subspan(start, n), prefix.subspan(start, n), dsp::FeatureKind::Mfcc),
                            prepare(wavelet.subspan(start, n), prefix.subspan(start, n), dsp::FeatureKind::Wavelet), ctx);
      const auto p = nk::softmax(z);
      const std::size_t C = geometry_.classes;
      for (std::size_t i = 0; i < n; ++i) {
        ClassProbabilities cp;
        for (std::size_t c = 0; c < C; ++c) {
          cp.logits.push_back(static_cast<double>(z[i * C + c]));
          cp.probs.push_back(static_cast<double>(p[i * C + c]));
        }
        cp.argmax = argmax_first(cp.probs);
        out.push_back(std::move(cp));
      }
    }
    return out;
  }

  ClassProbabilities forward(const dsp::FeatureMap& x_mfcc, const dsp::FeatureMap& x_wavelet) {
    return forward_prefix(x_mfcc, x_wavelet, geometry_.frames);
  }

  ClassProbabilities forward_prefix(const dsp::FeatureMap& x_mfcc, const dsp::FeatureMap& x_wavelet, std::size_t t) {
    const dsp::FeatureMap* a[] = {&x_mfcc};
    const dsp::FeatureMap* b[] = {&x_wavelet};
    const std::size_t p[] = {t};
    return predict(a, b, p).front();
  }

  // Row t-1 holds the prediction after t frames, for t = 1..T.
  std::vector<ClassProbabilities> prefix_trajectory(const dsp::FeatureMap& x_mfcc, const dsp::FeatureMap& x_wavelet) {
    const std::size_t Tn = geometry_.frames;
    std::vector<const dsp::FeatureMap*> a(Tn, &x_mfcc), b(Tn, &x_wavelet);
    std::vector<std::size_t> p(Tn);
    for (std::size_t t = 0; t < Tn; ++t) p[t] = t + 1;
    return predict(a, b, p);
  }

  nk::ParamRefs<T> parameters() {
    nk::ParamRefs<T> out = mfcc_.parameters();
    for (auto* p : wavelet_.parameters()) out.push_back(p);
    for (auto* p : dense1_.parameters()) out.push_back(p);
    for (auto* p : dense2_.parameters()) out.push_back(p);
    return out;
  }

  nk::BufferRefs<T> buffers() {
    nk::BufferRefs<T> out = mfcc_.buffers();
    for (auto& b : wavelet_.buffers()) out.push_back(b);
    return out;
  }

  nk::Dense<T>& output_layer() { return dense2_; }

  nk::Checkpoint to_checkpoint() {
    nk::Checkpoint ck;
    ck.kind = kClassifierKind;
    ck.meta["geometry"] = geometry_;
    ck.meta["input_norm"] = {{"mfcc", norm_mfcc_}, {"wavelet", norm_wavelet_}};
    ck.meta["classes"] = class_names();
    for (const auto& s : mfcc_.specs()) ck.layers.push_back(s);
    for (const auto& s : wavelet_.specs()) ck.layers.push_back(s);
    ck.layers.push_back(dense1_.spec());
    ck.layers.push_back({"head.relu", nk::LayerKind::Relu});
    ck.layers.push_back(dense2_.spec());
    ck.layers.push_back({"head.softmax", nk::LayerKind::Softmax});
    nk::store_parameters(ck, parameters(), buffers());
    return ck;
  }

  static Model from_checkpoint(const nk::Checkpoint& ck) {
    if (ck.kind != kClassifierKind) throw CompatibilityError("checkpoint holds a '" + ck.kind + "', not a classifier");
    Model m(ck.meta.at("geometry").get<Geometry>());
    nk::restore_parameters(ck, m.parameters(), m.buffers());
    const auto& norm = ck.meta.at("input_norm");
    m.set_input_norm(norm.at("mfcc").get<InputNorm>(), norm.at("wavelet").get<InputNorm>());
    return m;
  }

  void check_prefix(std::size_t t) const {
    if (t < 1 || t > geometry_.frames) {
      throw DomainError("prefix length " + std::to_string(t) + " outside [1, " + std::to_string(geometry_.frames) + "]");
    }
  }

 private:
  static constexpr std::size_t kChunk = 32;

  Geometry geometry_;
  Branch<T> mfcc_;
  Branch<T> wavelet_;
  nk::Dense<T> dense1_;
  nk::Relu<T> head_relu_;
  nk::Dense<T> dense2_;
  InputNorm norm_mfcc_;
  InputNorm norm_wavelet_;
  nk::Shape branch_shape_;
};

using Classifier = Model<float>;

}  // namespace earlystop::bmcnn
