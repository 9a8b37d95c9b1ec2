#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "earlystop/dqn/agent.hpp"
#include "earlystop/harness/evaluate.hpp"
#include "earlystop/harness/policy.hpp"
#include "earlystop/stopenv/env.hpp"

namespace earlystop::harness {

struct Phase {
  stopenv::RewardMode mode = stopenv::RewardMode::Accuracy;
  std::size_t episodes = 0;
};

struct PhaseSchedule {
  std::vector<Phase> phases;

  // 40% accuracy-first, then 60% balanced.
  static PhaseSchedule standard(std::size_t total) {
    const auto first = static_cast<std::size_t>(std::llround(0.4 * static_cast<double>(total)));
    PhaseSchedule s;
    s.phases = {{stopenv::RewardMode::Accuracy, first}, {stopenv::RewardMode::Balanced, total - first}};
    return s;
  }

  static PhaseSchedule single(stopenv::RewardMode mode, std::size_t total) { return {{{mode, total}}}; }

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& p : phases) n += p.episodes;
    return n;
  }

  void validate() const {
    if (phases.empty()) throw ConfigError("phase schedule is empty");
    for (const auto& p : phases)
      if (p.episodes == 0) throw ConfigError("every phase needs a positive episode budget");
  }
};

inline void to_json(nlohmann::json& j, const PhaseSchedule& s) {
  j = nlohmann::json::array();
  for (const auto& p : s.phases) j.push_back({{"mode", stopenv::to_string(p.mode)}, {"episodes", p.episodes}});
}

inline void from_json(const nlohmann::json& j, PhaseSchedule& s) {
  s.phases.clear();
  for (const auto& p : j) s.phases.push_back({stopenv::reward_mode_from_string(p.at("mode")), p.at("episodes").get<std::size_t>()});
  s.validate();
}

// Mode-specific weights come from the preset of each phase; threshold,
// bonuses and t_min come from `shared`.
inline stopenv::RewardConfig phase_reward(stopenv::RewardMode mode, const stopenv::RewardConfig& shared) {
  auto c = stopenv::RewardConfig::preset(mode);
  c.zeta = shared.zeta;
  c.xi = shared.xi;
  c.omega = shared.omega;
  c.tau = shared.tau;
  c.t_min = shared.t_min;
  c.validate();
  return c;
}

struct EpisodeLog {
  std::size_t episode = 0;
  std::string phase;
  std::size_t clip = 0;
  double reward = 0.0;  // undiscounted episode return
  std::size_t stop_t = 0;
  bool correct = false;
  double epsilon = 0.0;  // at the first step of the episode
  std::uint64_t agent_steps = 0;  // agent step counter at the first step
  std::optional<double> loss_mean;  // over updates run during the episode

  friend bool operator==(const EpisodeLog&, const EpisodeLog&) = default;
};

inline void to_json(nlohmann::json& j, const EpisodeLog& e) {
  j = {{"episode", e.episode},   {"phase", e.phase},     {"clip", e.clip},
       {"reward", e.reward},     {"stop_t", e.stop_t},   {"correct", e.correct},
       {"epsilon", e.epsilon},   {"agent_steps", e.agent_steps},
       {"loss_mean", e.loss_mean ? nlohmann::json(*e.loss_mean) : nlohmann::json(nullptr)}};
}

struct TrainOptions {
  PhaseSchedule schedule = PhaseSchedule::standard(30000);
  stopenv::RewardConfig shared_reward;
  std::size_t eval_every = 0;      // episodes between greedy snapshots; 0 disables
  std::size_t eval_episodes = 200;
  std::filesystem::path failure_checkpoint;  // written if training diverges
};

// Chooses the clip for each training episode.
using ClipSampler = std::function<std::size_t(std::size_t episode)>;

inline ClipSampler sequential_clips() {
  return [](std::size_t episode) { return episode; };
}

inline ClipSampler uniform_clips(std::size_t count, std::uint64_t seed) {
  if (count == 0) throw DataError("cannot sample from an empty split");
  auto rng = std::make_shared<std::mt19937_64>(seed);
  return [rng, count](std::size_t) { return std::uniform_int_distribution<std::size_t>(0, count - 1)(*rng); };
}

struct TrainHooks {
  std::function<void(const EpisodeLog&)> on_episode;
  stopenv::StopEnv* eval_env = nullptr;
  std::function<void(std::size_t episode, const EvalSummary&)> on_snapshot;
};

// Runs every phase in order: epsilon-greedy episodes, each transition pushed
// to replay, TD updates and soft target updates on the agent's cadence.
template <class T>
std::vector<EpisodeLog> train_agent(dqn::Agent<T>& agent, stopenv::StopEnv& env, const TrainOptions& opt,
                                    const ClipSampler& sampler, const TrainHooks& hooks = {}) {
  opt.schedule.validate();
  std::vector<EpisodeLog> log;
  log.reserve(opt.schedule.total());
  std::size_t episode = 0;
  for (const auto& phase : opt.schedule.phases) {
    env.set_reward_config(phase_reward(phase.mode, opt.shared_reward));
    for (std::size_t k = 0; k < phase.episodes; ++k, ++episode) {
      EpisodeLog rec;
      rec.episode = episode;
      rec.phase = stopenv::to_string(phase.mode);
      rec.clip = sampler(episode);
      rec.agent_steps = agent.steps();
      rec.epsilon = agent.epsilon();
      stopenv::EpisodeContext ctx;
      auto state = env.reset(ctx, rec.clip);
      double loss_sum = 0.0;
      std::size_t updates = 0;
      for (;;) {
        const int a = agent.act(state, true);
        const auto r = env.step(ctx, a);
        dqn::Transition tr;
        tr.state = state;
        tr.action = r.executed_action;
        tr.reward = r.reward;
        tr.done = r.done;
        if (r.next_state) tr.next_state = *r.next_state;
        std::optional<double> loss;
        try {
          loss = agent.observe(tr);
        } catch (const NumericError&) {
          if (!opt.failure_checkpoint.empty()) agent.save(opt.failure_checkpoint);
          throw;
        }
        if (loss) {
          loss_sum += *loss;
          ++updates;
        }
        rec.reward += r.reward;
        if (r.done) {
          rec.correct = r.correct.value_or(false);
          break;
        }
        state = *r.next_state;
      }
      rec.stop_t = ctx.t;
      if (updates) rec.loss_mean = loss_sum / static_cast<double>(updates);
      log.push_back(rec);
      if (hooks.on_episode) hooks.on_episode(rec);
      if (opt.eval_every && hooks.eval_env && (episode + 1) % opt.eval_every == 0) {
        const std::size_t n = std::min(opt.eval_episodes, hooks.eval_env->source().size());
        const auto summary = evaluate_policy("agent@" + std::to_string(episode + 1), greedy_policy(agent), *hooks.eval_env, n);
        if (hooks.on_snapshot) hooks.on_snapshot(episode + 1, summary);
      }
    }
  }
  return log;
}

}  // namespace earlystop::harness
