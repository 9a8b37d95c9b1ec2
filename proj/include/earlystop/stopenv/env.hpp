#pragma once

#include <nlohmann/json.hpp>

#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "earlystop/bmcnn/evaluate.hpp"
#include "earlystop/bmcnn/model.hpp"
#include "earlystop/stopenv/reward.hpp"
#include "earlystop/stopenv/state.hpp"

namespace earlystop::stopenv {

// Where per-frame class probabilities come from: a frozen classifier over a
// clip list, or a synthetic trajectory generator.
class ProbabilitySource {
 public:
  virtual ~ProbabilitySource() = default;
  virtual std::size_t size() const = 0;
  virtual std::size_t t_max() const = 0;
  virtual std::string clip_id(std::size_t clip) const = 0;
  virtual std::optional<int> label(std::size_t clip) const = 0;
  // Probabilities after the first t frames, t in [1, t_max].
  virtual Probs probs(std::size_t clip, std::size_t t) = 0;
};

// Prefix inference with a frozen classifier, memoised per (clip, t). Every
// query goes through the single-clip forward_prefix path so a replay from a
// fresh instance reproduces the same bits. Not safe for concurrent use.
template <class T>
class ClassifierSource final : public ProbabilitySource {
 public:
  ClassifierSource(bmcnn::Model<T>& model, std::span<const bmcnn::LabeledClip> clips)
      : model_(model), clips_(clips), memo_(clips.size()) {
    if (model.geometry().classes != kClasses) throw CompatibilityError("stop environment expects a 3-class classifier");
  }

  std::size_t size() const override { return clips_.size(); }
  std::size_t t_max() const override { return model_.geometry().frames; }
  std::string clip_id(std::size_t clip) const override { return clips_[check(clip)].id; }
  std::optional<int> label(std::size_t clip) const override {
    const int y = clips_[check(clip)].label;
    return y >= 0 ? std::optional<int>(y) : std::nullopt;
  }

  Probs probs(std::size_t clip, std::size_t t) override {
    auto& row = memo_[check(clip)];
    if (row.empty()) row.resize(t_max());
    model_.check_prefix(t);
    auto& slot = row[t - 1];
    if (!slot) {
      const auto& c = clips_[clip];
      slot = validated_probs(model_.forward_prefix(c.mfcc, c.wavelet, t).probs);
    }
    return *slot;
  }

 private:
  std::size_t check(std::size_t clip) const {
    if (clip >= clips_.size()) throw DomainError("clip index out of range");
    return clip;
  }

  bmcnn::Model<T>& model_;
  std::span<const bmcnn::LabeledClip> clips_;
  std::vector<std::vector<std::optional<Probs>>> memo_;
};

struct StepResult {
  std::optional<StopState> next_state;  // empty once the episode is over
  double reward = 0.0;
  bool done = false;
  int executed_action = kContinue;
  int prediction = 0;  // argmax at the time of the step
  std::optional<bool> correct;
};

struct EnvOptions {
  bool require_labels = true;  // training episodes need a label
  bool label_free_state = false;
};

// Stateless apart from its configuration; all episode state lives in
// the EpisodeContext so any snapshot can be replayed.
class StopEnv {
 public:
  StopEnv(ProbabilitySource& source, RewardConfig reward, EnvOptions options = {})
      : source_(source), reward_(reward), options_(options) {
    reward_.validate();
    if (source.t_max() == 0) throw DataError("probability source has no frames");
  }

  const RewardConfig& reward_config() const { return reward_; }
  void set_reward_config(const RewardConfig& reward) {
    reward.validate();
    reward_ = reward;
  }
  ProbabilitySource& source() { return source_; }
  std::size_t t_max() const { return source_.t_max(); }
  const EnvOptions& options() const { return options_; }

  StopState reset(EpisodeContext& ctx, std::size_t clip) const {
    ctx = EpisodeContext{};
    ctx.clip = clip;
    ctx.clip_id = source_.clip_id(clip);
    ctx.label = source_.label(clip);
    if (options_.require_labels && !ctx.label) throw DataError("clip '" + ctx.clip_id + "' has no label");
    ctx.t_max = source_.t_max();
    ctx.advance(source_.probs(clip, 1));
    return build_state(ctx, options_.label_free_state);
  }

  // Below t_min the stop request is overridden; at t_max any action stops.
  // Without a label the stop reward treats the prediction as incorrect.
  StepResult step(EpisodeContext& ctx, int action) const {
    if (ctx.done) throw LifecycleError("step called on a finished episode");
    if (ctx.t < 1) throw LifecycleError("step called before reset");
    if (action != kContinue && action != kStop) throw DomainError("action must be 0 (continue) or 1 (stop)");
    if (source_.clip_id(ctx.clip) != ctx.clip_id) throw CompatibilityError("context refers to a different clip");

    int executed = ctx.t < reward_.t_min ? kContinue : action;
    if (ctx.t >= ctx.t_max) executed = kStop;

    StepResult r;
    r.executed_action = executed;
    r.prediction = ctx.prediction(ctx.t);
    r.correct = ctx.correct();
    r.reward = compute_reward(reward_inputs(ctx), executed, reward_);
    if (executed == kStop) {
      ctx.done = true;
      r.done = true;
      return r;
    }
    ctx.advance(source_.probs(ctx.clip, ctx.t + 1));
    r.next_state = build_state(ctx, options_.label_free_state);
    return r;
  }

 private:
  ProbabilitySource& source_;
  RewardConfig reward_;
  EnvOptions options_;
};

// One JSON-lines record per step, keyed on the state the action was taken in.
inline nlohmann::json trace_record(const std::string& clip_id, std::size_t t, const StopState& state, int action,
                                   const StepResult& r) {
  return {{"clip_id", clip_id},
          {"t", t},
          {"state", state},
          {"action", action},
          {"executed_action", r.executed_action},
          {"reward", r.reward},
          {"done", r.done},
          {"prediction", r.prediction},
          {"correct", r.correct ? nlohmann::json(*r.correct) : nlohmann::json(nullptr)}};
}

inline void write_jsonl(std::ostream& out, const nlohmann::json& record) { out << record.dump() << '\n'; }

}  // namespace earlystop::stopenv
