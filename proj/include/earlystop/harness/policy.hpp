#pragma once

#include <nlohmann/json.hpp>

#include <functional>
#include <sstream>
#include <string>

#include "earlystop/dqn/agent.hpp"
#include "earlystop/stopenv/state.hpp"

namespace earlystop::harness {

// Maps the current state (plus bookkeeping, for baselines) to an action.
using Policy = std::function<int(const stopenv::StopState&, const stopenv::EpisodeContext&)>;

struct BaselinePolicy {
  enum class Kind { FixedThreshold, FixedLength };

  Kind kind = Kind::FixedLength;
  double threshold = 0.9;  // stop once max confidence exceeds this
  std::size_t length = 124;  // stop at this frame

  static BaselinePolicy fixed_threshold(double tau) { return {Kind::FixedThreshold, tau, 0}; }
  static BaselinePolicy fixed_length(std::size_t t) { return {Kind::FixedLength, 0.0, t}; }

  // A threshold of exactly 1 is allowed and never fires.
  void validate(std::size_t t_min, std::size_t t_max) const {
    if (kind == Kind::FixedThreshold && !(threshold > 1.0 / 3.0 && threshold <= 1.0)) {
      throw ConfigError("threshold baseline needs 1/3 < threshold <= 1");
    }
    if (kind == Kind::FixedLength && (length < t_min || length > t_max)) {
      throw ConfigError("fixed-length baseline needs t_min <= length <= t_max");
    }
  }

  std::string name() const {
    std::ostringstream os;
    if (kind == Kind::FixedThreshold) {
      os << "threshold@" << threshold;
    } else {
      os << "fixed@" << length;
    }
    return os.str();
  }

  int operator()(const stopenv::StopState& s, const stopenv::EpisodeContext& ctx) const {
    if (kind == Kind::FixedThreshold) return s[stopenv::StopState::MaxConfidence] > threshold ? stopenv::kStop : stopenv::kContinue;
    return ctx.t >= length ? stopenv::kStop : stopenv::kContinue;
  }
};

inline void to_json(nlohmann::json& j, const BaselinePolicy& b) {
  if (b.kind == BaselinePolicy::Kind::FixedThreshold) {
    j = {{"kind", "fixed-threshold"}, {"threshold", b.threshold}};
  } else {
    j = {{"kind", "fixed-length"}, {"length", b.length}};
  }
}

inline void from_json(const nlohmann::json& j, BaselinePolicy& b) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "fixed-threshold") {
    b = BaselinePolicy::fixed_threshold(j.at("threshold").get<double>());
  } else if (kind == "fixed-length") {
    b = BaselinePolicy::fixed_length(j.at("length").get<std::size_t>());
  } else {
    throw ConfigError("unknown baseline kind '" + kind + "'");
  }
}

template <class T>
Policy greedy_policy(dqn::Agent<T>& agent) {
  return [&agent](const stopenv::StopState& s, const stopenv::EpisodeContext&) { return agent.greedy(s); };
}

inline Policy as_policy(const BaselinePolicy& b) {
  return [b](const stopenv::StopState& s, const stopenv::EpisodeContext& ctx) { return b(s, ctx); };
}

inline Policy always(int action) {
  return [action](const stopenv::StopState&, const stopenv::EpisodeContext&) { return action; };
}

}  // namespace earlystop::harness
