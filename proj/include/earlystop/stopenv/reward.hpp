#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>

#include "earlystop/common/error.hpp"

namespace earlystop::stopenv {

enum class RewardMode { Accuracy, Balanced, Speed };

inline std::string to_string(RewardMode m) {
  switch (m) {
    case RewardMode::Accuracy: return "accuracy";
    case RewardMode::Balanced: return "balanced";
    case RewardMode::Speed: return "speed";
  }
  throw ConfigError("unknown reward mode");
}

inline RewardMode reward_mode_from_string(const std::string& s) {
  if (s == "accuracy") return RewardMode::Accuracy;
  if (s == "balanced") return RewardMode::Balanced;
  if (s == "speed") return RewardMode::Speed;
  throw ConfigError("unknown reward mode '" + s + "' (expected accuracy, balanced or speed)");
}

inline constexpr int kContinue = 0;
inline constexpr int kStop = 1;

struct RewardConfig {
  RewardMode mode = RewardMode::Accuracy;
  double alpha = 5.0;   // correct-classification weight
  double beta = 0.5;    // confidence weight
  double sigma = 5.0;   // misclassification penalty
  double lambda = 0.0005;  // per-frame cost of continuing
  double zeta = 0.2;    // early-stop bonus scale
  double xi = 0.1;      // consecutive-correct bonus per step
  double omega = 0.01;  // stability incentive
  double tau = 0.85;    // confidence threshold
  std::size_t t_min = 15;

  static RewardConfig preset(RewardMode mode) {
    RewardConfig c;
    c.mode = mode;
    switch (mode) {
      case RewardMode::Accuracy: break;
      case RewardMode::Balanced:
        c.alpha = 3.0, c.beta = 0.3, c.sigma = 3.0, c.lambda = 0.001;
        break;
      case RewardMode::Speed:
        c.alpha = 2.0, c.beta = 0.5, c.sigma = 2.0, c.lambda = 0.005;
        break;
    }
    return c;
  }

  void validate() const {
    for (double w : {alpha, beta, sigma, lambda, zeta, xi, omega}) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("reward weights must be finite and non-negative");
    }
    if (!(tau > 1.0 / 3.0 && tau < 1.0)) throw ConfigError("confidence threshold must lie in (1/3, 1)");
    if (t_min < 1) throw ConfigError("t_min must be at least 1");
  }
};

inline void to_json(nlohmann::json& j, const RewardConfig& c) {
  j = {{"mode", to_string(c.mode)}, {"alpha", c.alpha}, {"beta", c.beta},   {"sigma", c.sigma},
       {"lambda", c.lambda},        {"zeta", c.zeta},   {"xi", c.xi},       {"omega", c.omega},
       {"tau", c.tau},              {"t_min", c.t_min}};
}

// Missing weights fall back to the preset of the given mode.
inline void from_json(const nlohmann::json& j, RewardConfig& c) {
  const auto d = RewardConfig::preset(reward_mode_from_string(j.value("mode", std::string("accuracy"))));
  c = d;
  c.alpha = j.value("alpha", d.alpha);
  c.beta = j.value("beta", d.beta);
  c.sigma = j.value("sigma", d.sigma);
  c.lambda = j.value("lambda", d.lambda);
  c.zeta = j.value("zeta", d.zeta);
  c.xi = j.value("xi", d.xi);
  c.omega = j.value("omega", d.omega);
  c.tau = j.value("tau", d.tau);
  c.t_min = j.value("t_min", d.t_min);
  c.validate();
}

// Everything the reward needs about the current timestep.
struct RewardInputs {
  std::size_t t = 1;
  std::size_t t_max = 1;
  bool correct = false;
  double confidence = 0.0;       // max class probability
  double conf_stability = 0.0;   // trailing std of the confidence
  std::size_t n_consec = 0;      // consecutive correct predictions ending at t
  std::optional<std::size_t> t_first_correct;
};

inline double early_bonus(const RewardInputs& in, const RewardConfig& c) {
  if (!(in.confidence > c.tau)) return 0.0;
  const double remaining = 1.0 - static_cast<double>(in.t) / static_cast<double>(in.t_max);
  const bool in_window = in.t_first_correct && *in.t_first_correct <= in.t && in.t < *in.t_first_correct + 5;
  return in_window ? c.zeta * remaining : c.zeta * 0.5 * remaining;
}

inline double consec_bonus(const RewardInputs& in, const RewardConfig& c) {
  return in.n_consec > 2 ? c.xi * static_cast<double>(in.n_consec) : 0.0;
}

// Only the accuracy-first reward carries the stability term.
inline double stability_incentive(const RewardInputs& in, const RewardConfig& c) {
  if (c.mode != RewardMode::Accuracy) return 0.0;
  return in.confidence > c.tau && in.conf_stability < 0.02 ? -c.omega : 0.0;
}

inline double compute_reward(const RewardInputs& in, int action, const RewardConfig& c) {
  if (in.t_max == 0 || in.t < 1 || in.t > in.t_max) throw DomainError("reward timestep outside [1, t_max]");
  if (action == kStop) {
    const double hit = in.correct ? 1.0 : 0.0;
    return c.alpha * hit + c.beta * in.confidence + early_bonus(in, c) + consec_bonus(in, c) - c.sigma * (1.0 - hit);
  }
  if (action == kContinue) return -c.lambda + stability_incentive(in, c);
  throw DomainError("action must be 0 (continue) or 1 (stop)");
}

}  // namespace earlystop::stopenv
