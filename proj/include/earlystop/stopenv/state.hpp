#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "earlystop/common/error.hpp"
#include "earlystop/stopenv/reward.hpp"

namespace earlystop::stopenv {

inline constexpr std::size_t kClasses = 3;
inline constexpr std::size_t kStateDim = 12;
inline constexpr std::size_t kWindow = 5;     // trailing window for confidence statistics
inline constexpr std::size_t kConsecCap = 10;  // n_consec normaliser

using Probs = std::array<double, kClasses>;

inline int argmax_first(const Probs& p) {
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

inline double entropy_nats(const Probs& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

inline double normalized_entropy(const Probs& p) {
  return std::clamp(entropy_nats(p) / std::log(static_cast<double>(kClasses)), 0.0, 1.0);
}

inline Probs validated_probs(std::span<const double> p) {
  if (p.size() != kClasses) throw DimensionError("expected " + std::to_string(kClasses) + " class probabilities");
  Probs out{};
  double sum = 0.0;
  for (std::size_t c = 0; c < kClasses; ++c) {
    if (!std::isfinite(p[c]) || p[c] < 0.0) throw DomainError("class probabilities must be finite and non-negative");
    out[c] = p[c];
    sum += p[c];
  }
  if (std::abs(sum - 1.0) > 1e-6) throw DomainError("class probabilities must sum to 1");
  return out;
}

// Component order is fixed; the DQN consumes `v` as-is.
struct StopState {
  enum Index : std::size_t {
    Progress,
    MaxConfidence,
    Entropy,
    Prob0,
    Prob1,
    Prob2,
    DeltaConfidence,
    DeltaEntropy,
    MeanConfidence,
    ConfidenceStd,
    Consecutive,
    PredictionStability,
  };

  std::array<double, kStateDim> v{};

  double operator[](std::size_t i) const { return v[i]; }
  bool all_finite() const {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  }
  friend bool operator==(const StopState&, const StopState&) = default;
};

inline void to_json(nlohmann::json& j, const StopState& s) { j = s.v; }
inline void from_json(const nlohmann::json& j, StopState& s) { s.v = j.get<std::array<double, kStateDim>>(); }

// Per-episode bookkeeping. history[k] holds the probabilities after k+1 frames.
struct EpisodeContext {
  std::size_t clip = 0;
  std::string clip_id;
  std::optional<int> label;
  std::size_t t = 0;
  std::size_t t_max = 0;
  std::vector<Probs> history;
  std::size_t n_consec = 0;
  std::optional<std::size_t> t_first_correct;
  bool done = false;

  int prediction(std::size_t step) const { return argmax_first(history.at(step - 1)); }
  double confidence(std::size_t step) const {
    const auto& p = history.at(step - 1);
    return *std::max_element(p.begin(), p.end());
  }
  std::optional<bool> correct() const {
    if (!label || t == 0) return std::nullopt;
    return prediction(t) == *label;
  }

  // Append the prediction for frame t+1 and update the correctness counters.
  void advance(const Probs& p) {
    if (t >= t_max) throw LifecycleError("episode already consumed every frame");
    ++t;
    history.push_back(p);
    if (label) {
      if (prediction(t) == *label) {
        ++n_consec;
        if (!t_first_correct) t_first_correct = t;
      } else {
        n_consec = 0;
      }
    }
  }

  void validate() const {
    if (t_max == 0) throw DataError("episode has no frames");
    if (t > t_max) throw DataError("episode time beyond t_max");
    if (history.size() != t) throw DataError("episode history length differs from t");
    if (done && t == 0) throw DataError("episode cannot be done before its first frame");
  }

  friend bool operator==(const EpisodeContext&, const EpisodeContext&) = default;
};

inline void to_json(nlohmann::json& j, const EpisodeContext& c) {
  j = {{"clip", c.clip},
       {"clip_id", c.clip_id},
       {"label", c.label ? nlohmann::json(*c.label) : nlohmann::json(nullptr)},
       {"t", c.t},
       {"t_max", c.t_max},
       {"history", c.history},
       {"n_consec", c.n_consec},
       {"t_first_correct", c.t_first_correct ? nlohmann::json(*c.t_first_correct) : nlohmann::json(nullptr)},
       {"done", c.done}};
}

inline void from_json(const nlohmann::json& j, EpisodeContext& c) {
  c.clip = j.at("clip");
  c.clip_id = j.at("clip_id");
  c.label = j.at("label").is_null() ? std::nullopt : std::optional<int>(j.at("label").get<int>());
  c.t = j.at("t");
  c.t_max = j.at("t_max");
  c.history = j.at("history").get<std::vector<Probs>>();
  c.n_consec = j.at("n_consec");
  c.t_first_correct = j.at("t_first_correct").is_null() ? std::nullopt
                                                         : std::optional<std::size_t>(j.at("t_first_correct").get<std::size_t>());
  c.done = j.at("done");
  c.validate();
}

// Mean and population std of the confidence over the trailing window ending at t.
inline std::pair<double, double> confidence_window(const EpisodeContext& ctx) {
  const std::size_t k = std::min(kWindow, ctx.t);
  double mean = 0.0;
  for (std::size_t s = ctx.t - k + 1; s <= ctx.t; ++s) mean += ctx.confidence(s);
  mean /= static_cast<double>(k);
  double var = 0.0;
  for (std::size_t s = ctx.t - k + 1; s <= ctx.t; ++s) var += (ctx.confidence(s) - mean) * (ctx.confidence(s) - mean);
  return {mean, std::sqrt(var / static_cast<double>(k))};
}

// Length of the run of identical predictions ending at t, capped at kConsecCap.
inline std::size_t agreement_run(const EpisodeContext& ctx) {
  std::size_t n = 1;
  while (n < ctx.t && n < kConsecCap && ctx.prediction(ctx.t - n) == ctx.prediction(ctx.t)) ++n;
  return n;
}

// With `label_free`, the consecutive-count component uses the agreement run
// instead of consecutive correct predictions, so the state carries no label
// information. The default follows the correct-prediction definition.
inline StopState build_state(const EpisodeContext& ctx, bool label_free = false) {
  if (ctx.t < 1) throw LifecycleError("state requested before the first frame");
  const auto& p = ctx.history.at(ctx.t - 1);
  StopState s;
  s.v[StopState::Progress] = static_cast<double>(ctx.t) / static_cast<double>(ctx.t_max);
  s.v[StopState::MaxConfidence] = ctx.confidence(ctx.t);
  s.v[StopState::Entropy] = normalized_entropy(p);
  for (std::size_t c = 0; c < kClasses; ++c) s.v[StopState::Prob0 + c] = p[c];
  if (ctx.t > 1) {
    s.v[StopState::DeltaConfidence] = ctx.confidence(ctx.t) - ctx.confidence(ctx.t - 1);
    s.v[StopState::DeltaEntropy] = normalized_entropy(p) - normalized_entropy(ctx.history[ctx.t - 2]);
  }
  const auto [mean, sd] = confidence_window(ctx);
  s.v[StopState::MeanConfidence] = mean;
  s.v[StopState::ConfidenceStd] = sd;
  const std::size_t run = label_free ? agreement_run(ctx) : ctx.n_consec;
  s.v[StopState::Consecutive] = static_cast<double>(std::min(run, kConsecCap)) / static_cast<double>(kConsecCap);
  const std::size_t m = std::min(ctx.t - 1, kWindow);
  if (m == 0) {
    s.v[StopState::PredictionStability] = 1.0;
  } else {
    std::size_t same = 0;
    for (std::size_t u = ctx.t - m + 1; u <= ctx.t; ++u) same += ctx.prediction(u) == ctx.prediction(u - 1);
    s.v[StopState::PredictionStability] = static_cast<double>(same) / static_cast<double>(m);
  }
  return s;
}

inline RewardInputs reward_inputs(const EpisodeContext& ctx) {
  RewardInputs in;
  in.t = ctx.t;
  in.t_max = ctx.t_max;
  in.correct = ctx.correct().value_or(false);
  in.confidence = ctx.confidence(ctx.t);
  in.conf_stability = confidence_window(ctx).second;
  in.n_consec = ctx.n_consec;
  in.t_first_correct = ctx.t_first_correct;
  return in;
}

}  // namespace earlystop::stopenv
