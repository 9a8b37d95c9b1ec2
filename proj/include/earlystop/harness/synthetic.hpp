#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "earlystop/stopenv/env.hpp"

namespace earlystop::harness {

// splitmix64 finaliser: independent streams from one master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Classifier-free confidence trajectories. The true-class probability ramps
// linearly from `start_conf` to `peak_conf` over a class-dependent number of
// frames; the remainder goes either evenly to the other classes or mostly to
// one distractor. Optional log-space Gaussian noise is renormalised by softmax.
struct SyntheticEnvSpec {
  std::string name = "custom";
  std::size_t t_max = 124;
  std::array<double, 3> ramp_frames{20.0, 40.0, 80.0};
  double ramp_jitter = 0.0;  // ramp scaled by U(1 - j, 1 + j) per episode
  double start_conf = 1.0 / 3.0;
  double peak_conf = 0.95;
  double noise = 0.0;
  double distractor_prob = 0.0;
  double distractor_share = 0.9;
  std::array<double, 3> label_weights{1.0, 1.0, 1.0};

  static SyntheticEnvSpec easy() {
    SyntheticEnvSpec s;
    s.name = "easy";
    s.ramp_frames = {12.0, 20.0, 30.0};
    s.ramp_jitter = 0.2;
    s.start_conf = 0.3;
    s.peak_conf = 0.95;
    s.noise = 0.15;
    s.distractor_prob = 0.2;
    return s;
  }

  static SyntheticEnvSpec moderate() {
    SyntheticEnvSpec s;
    s.name = "moderate";
    s.ramp_frames = {20.0, 45.0, 80.0};
    s.ramp_jitter = 0.3;
    s.start_conf = 0.2;
    s.peak_conf = 0.85;
    s.noise = 0.35;
    s.distractor_prob = 0.5;
    s.distractor_share = 0.85;
    return s;
  }

  static SyntheticEnvSpec noiseless() {
    SyntheticEnvSpec s;
    s.name = "noiseless";
    s.ramp_frames = {15.0, 35.0, 70.0};
    s.ramp_jitter = 0.3;
    s.start_conf = 0.2;
    s.peak_conf = 0.95;
    s.noise = 0.0;
    s.distractor_prob = 0.5;
    return s;
  }

  static SyntheticEnvSpec preset(const std::string& name) {
    if (name == "easy") return easy();
    if (name == "moderate") return moderate();
    if (name == "noiseless") return noiseless();
    throw ConfigError("unknown synthetic preset '" + name + "' (expected easy, moderate or noiseless)");
  }

  void validate() const {
    if (t_max < 1) throw ConfigError("synthetic t_max must be positive");
    for (double r : ramp_frames)
      if (!(r > 0.0)) throw ConfigError("ramp lengths must be positive");
    if (!(ramp_jitter >= 0.0 && ramp_jitter < 1.0)) throw ConfigError("ramp jitter must lie in [0, 1)");
    if (!(start_conf >= 0.0 && start_conf <= peak_conf && peak_conf <= 1.0)) {
      throw ConfigError("need 0 <= start_conf <= peak_conf <= 1");
    }
    if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("noise must be non-negative");
    if (!(distractor_prob >= 0.0 && distractor_prob <= 1.0)) throw ConfigError("distractor probability must lie in [0, 1]");
    if (!(distractor_share >= 0.0 && distractor_share <= 1.0)) throw ConfigError("distractor share must lie in [0, 1]");
    double w = 0.0;
    for (double v : label_weights) {
      if (!(v >= 0.0)) throw ConfigError("label weights must be non-negative");
      w += v;
    }
    if (!(w > 0.0)) throw ConfigError("label weights must not all be zero");
  }
};

inline void to_json(nlohmann::json& j, const SyntheticEnvSpec& s) {
  j = {{"name", s.name},
       {"t_max", s.t_max},
       {"ramp_frames", s.ramp_frames},
       {"ramp_jitter", s.ramp_jitter},
       {"start_conf", s.start_conf},
       {"peak_conf", s.peak_conf},
       {"noise", s.noise},
       {"distractor_prob", s.distractor_prob},
       {"distractor_share", s.distractor_share},
       {"label_weights", s.label_weights}};
}

// A named preset may be refined by explicit fields.
inline void from_json(const nlohmann::json& j, SyntheticEnvSpec& s) {
  const std::string name = j.value("name", std::string("custom"));
  SyntheticEnvSpec d = name == "custom" ? SyntheticEnvSpec{} : SyntheticEnvSpec::preset(name);
  s.name = name;
  s.t_max = j.value("t_max", d.t_max);
  s.ramp_frames = j.value("ramp_frames", d.ramp_frames);
  s.ramp_jitter = j.value("ramp_jitter", d.ramp_jitter);
  s.start_conf = j.value("start_conf", d.start_conf);
  s.peak_conf = j.value("peak_conf", d.peak_conf);
  s.noise = j.value("noise", d.noise);
  s.distractor_prob = j.value("distractor_prob", d.distractor_prob);
  s.distractor_share = j.value("distractor_share", d.distractor_share);
  s.label_weights = j.value("label_weights", d.label_weights);
  s.validate();
}

struct SyntheticEpisode {
  int label = 0;
  std::optional<int> distractor;
  double ramp = 0.0;
  std::vector<stopenv::Probs> probs;  // probs[t-1] after t frames
};

inline SyntheticEpisode synth_episode(const SyntheticEnvSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SyntheticEpisode ep;
  ep.label = std::discrete_distribution<int>(spec.label_weights.begin(), spec.label_weights.end())(rng);
  const auto y = static_cast<std::size_t>(ep.label);
  ep.ramp = spec.ramp_frames[y] * (1.0 + spec.ramp_jitter * (2.0 * u(rng) - 1.0));
  const bool distract = u(rng) < spec.distractor_prob;
  const std::size_t other_a = (y + 1) % 3, other_b = (y + 2) % 3;
  if (distract) ep.distractor = static_cast<int>(u(rng) < 0.5 ? other_a : other_b);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ep.probs.resize(spec.t_max);
  for (std::size_t t = 1; t <= spec.t_max; ++t) {
    const double c = static_cast<double>(t) >= ep.ramp
                         ? spec.peak_conf
                         : spec.start_conf + (spec.peak_conf - spec.start_conf) * static_cast<double>(t) / ep.ramp;
    const double rest = 1.0 - c;
    stopenv::Probs p{};
    p[y] = c;
    if (ep.distractor) {
      const auto d = static_cast<std::size_t>(*ep.distractor);
      p[d] = rest * spec.distractor_share;
      p[d == other_a ? other_b : other_a] = rest - p[d];
    } else {
      p[other_a] = rest / 2.0;
      p[other_b] = rest - p[other_a];
    }
    if (spec.noise > 0.0) {
      std::array<double, 3> z{};
      double zmax = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < 3; ++k) {
        const double e = gauss(rng);  // drawn even for zero-mass classes to keep streams aligned
        z[k] = p[k] > 0.0 ? std::log(p[k]) + spec.noise * e : -std::numeric_limits<double>::infinity();
        zmax = std::max(zmax, z[k]);
      }
      double sum = 0.0;
      for (std::size_t k = 0; k < 3; ++k) sum += (z[k] = std::exp(z[k] - zmax));
      for (std::size_t k = 0; k < 3; ++k) p[k] = z[k] / sum;
    }
    ep.probs[t - 1] = p;
  }
  return ep;
}

// Episode i is generated from derive_seed(seed, i); the most recent episode
// is cached since an environment queries it frame by frame.
class SyntheticSource final : public stopenv::ProbabilitySource {
 public:
  SyntheticSource(SyntheticEnvSpec spec, std::uint64_t seed, std::size_t episodes)
      : spec_((spec.validate(), std::move(spec))), seed_(seed), episodes_(episodes) {}

  const SyntheticEnvSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }

  std::size_t size() const override { return episodes_; }
  std::size_t t_max() const override { return spec_.t_max; }
  std::string clip_id(std::size_t clip) const override { return "synthetic-" + std::to_string(clip); }
  std::optional<int> label(std::size_t clip) const override { return episode(clip).label; }
  stopenv::Probs probs(std::size_t clip, std::size_t t) override {
    if (t < 1 || t > spec_.t_max) throw DomainError("synthetic frame index outside [1, t_max]");
    return episode(clip).probs[t - 1];
  }

  const SyntheticEpisode& episode(std::size_t clip) const {
    if (clip >= episodes_) throw DomainError("synthetic episode index out of range");
    if (!cached_ || cached_index_ != clip) {
      cached_ = synth_episode(spec_, derive_seed(seed_, clip));
      cached_index_ = clip;
    }
    return *cached_;
  }

 private:
  SyntheticEnvSpec spec_;
  std::uint64_t seed_;
  std::size_t episodes_;
  mutable std::optional<SyntheticEpisode> cached_;
  mutable std::size_t cached_index_ = 0;
};

}  // namespace earlystop::harness
