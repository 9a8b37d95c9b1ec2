#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "earlystop/common/fileio.hpp"
#include "earlystop/dqn/qnetwork.hpp"
#include "earlystop/dqn/replay.hpp"
#include "earlystop/numkit/adam.hpp"
#include "earlystop/numkit/checkpoint.hpp"

namespace earlystop::dqn {

struct AgentHyper {
  double gamma = 0.99;
  double tau = 0.005;
  double eps_initial = 1.0;
  double eps_final = 0.05;
  std::uint64_t explore_steps = 50000;
  std::size_t batch_size = 64;
  std::size_t buffer_capacity = 100000;
  double learning_rate = 1e-4;
  std::size_t train_every = 1;   // environment steps per gradient update
  std::size_t target_every = 1;  // gradient updates per soft update
  std::size_t warmup = 0;        // transitions stored before the first update (at least one batch)

  void validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("discount must lie in [0, 1)");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("soft-update rate must lie in (0, 1]");
    if (!(eps_final >= 0.0 && eps_final <= eps_initial && eps_initial <= 1.0)) {
      throw ConfigError("exploration needs 0 <= eps_final <= eps_initial <= 1");
    }
    if (batch_size == 0 || buffer_capacity < batch_size) throw ConfigError("replay capacity must hold at least one batch");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (train_every == 0 || target_every == 0) throw ConfigError("update cadences must be positive");
  }
};

inline void to_json(nlohmann::json& j, const AgentHyper& h) {
  j = {{"gamma", h.gamma},
       {"tau", h.tau},
       {"eps_initial", h.eps_initial},
       {"eps_final", h.eps_final},
       {"explore_steps", h.explore_steps},
       {"batch_size", h.batch_size},
       {"buffer_capacity", h.buffer_capacity},
       {"learning_rate", h.learning_rate},
       {"train_every", h.train_every},
       {"target_every", h.target_every},
       {"warmup", h.warmup}};
}

inline void from_json(const nlohmann::json& j, AgentHyper& h) {
  AgentHyper d;
  h.gamma = j.value("gamma", d.gamma);
  h.tau = j.value("tau", d.tau);
  h.eps_initial = j.value("eps_initial", d.eps_initial);
  h.eps_final = j.value("eps_final", d.eps_final);
  h.explore_steps = j.value("explore_steps", d.explore_steps);
  h.batch_size = j.value("batch_size", d.batch_size);
  h.buffer_capacity = j.value("buffer_capacity", d.buffer_capacity);
  h.learning_rate = j.value("learning_rate", d.learning_rate);
  h.train_every = j.value("train_every", d.train_every);
  h.target_every = j.value("target_every", d.target_every);
  h.warmup = j.value("warmup", d.warmup);
  h.validate();
}

// Linear decay from eps_initial to eps_final over explore_steps, then flat.
inline double epsilon(const AgentHyper& h, std::uint64_t step) {
  if (h.explore_steps == 0) return h.eps_final;
  const double frac = std::max(0.0, 1.0 - static_cast<double>(step) / static_cast<double>(h.explore_steps));
  return h.eps_final + (h.eps_initial - h.eps_final) * frac;
}

// Exact ties go to continue.
inline int greedy_action(const std::array<double, 2>& q) { return q[1] > q[0] ? stopenv::kStop : stopenv::kContinue; }

template <class T>
nk::Tensor<T> stack_states(std::span<const Transition> batch, bool next) {
  constexpr std::size_t D = stopenv::kStateDim;
  nk::Tensor<T> x({batch.size(), D});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = next ? batch[i].next_state : batch[i].state;
    for (std::size_t k = 0; k < D; ++k) x[i * D + k] = static_cast<T>(s.v[k]);
  }
  return x;
}

// Mean squared TD error; accumulates dL/dtheta into the online network.
// Terminal transitions regress onto the reward alone.
template <class T>
double td_loss_and_grad(QNetwork<T>& online, QNetwork<T>& target, std::span<const Transition> batch, double gamma) {
  if (batch.empty()) throw ConfigError("TD update needs a non-empty batch");
  const std::size_t N = batch.size();
  const auto q_next = target.forward(stack_states<T>(batch, true));
  const auto q = online.forward(stack_states<T>(batch, false));
  nk::Tensor<T> dq({N, 2});
  double loss = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const auto& tr = batch[i];
    if (tr.action != 0 && tr.action != 1) throw DomainError("transition action must be 0 or 1");
    const double bootstrap = tr.done ? 0.0 : std::max<double>(q_next[i * 2], q_next[i * 2 + 1]);
    const double y = tr.reward + gamma * bootstrap;
    const double err = static_cast<double>(q[i * 2 + static_cast<std::size_t>(tr.action)]) - y;
    loss += err * err;
    dq[i * 2 + static_cast<std::size_t>(tr.action)] = static_cast<T>(2.0 * err / static_cast<double>(N));
  }
  online.backward(dq);
  return loss / static_cast<double>(N);
}

inline constexpr const char* kAgentKind = "dqn-agent";

template <class T>
class Agent {
 public:
  Agent(AgentHyper hyper, QNetConfig net, std::uint64_t seed)
      : hyper_((hyper.validate(), hyper)), online_(net), target_(net), replay_(hyper.buffer_capacity), rng_(seed), seed_(seed) {
    online_.init(seed);
    target_ = online_;
    opt_ = nk::Adam<T>(online_.parameters(), nk::AdamConfig{hyper_.learning_rate});
  }

  const AgentHyper& hyper() const { return hyper_; }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t steps() const { return steps_; }
  std::uint64_t updates() const { return updates_; }
  double epsilon() const { return dqn::epsilon(hyper_, steps_); }
  QNetwork<T>& online() { return online_; }
  QNetwork<T>& target() { return target_; }
  ReplayBuffer& replay() { return replay_; }
  std::mt19937_64& rng() { return rng_; }

  std::array<double, 2> q_values(const stopenv::StopState& s) { return online_.q_values(s); }
  int greedy(const stopenv::StopState& s) { return greedy_action(q_values(s)); }

  // epsilon-greedy at the given step count; explore = false is pure greedy.
  int act(const stopenv::StopState& s, std::uint64_t step, bool explore) {
    if (explore) {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      if (u(rng_) < dqn::epsilon(hyper_, step)) return std::uniform_int_distribution<int>(0, 1)(rng_);
    }
    return greedy(s);
  }
  int act(const stopenv::StopState& s, bool explore) { return act(s, steps_, explore); }

  // One gradient step on the online network. Throws NumericError with batch
  // diagnostics if the loss is not finite; parameters are left untouched then.
  double td_update(std::span<const Transition> batch) {
    const auto params = online_.parameters();
    opt_.zero_grad(params);
    const double loss = td_loss_and_grad(online_, target_, batch, hyper_.gamma);
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "TD loss is not finite (" << loss << ") on a batch of " << batch.size() << "; rewards:";
      for (const auto& t : batch) msg << ' ' << t.reward;
      throw NumericError(msg.str());
    }
    opt_.step(params);
    ++updates_;
    return loss;
  }

  void soft_update() { dqn::soft_update(online_, target_, hyper_.tau); }

  // Store a transition, then train and track the target on the configured
  // cadence. Returns the TD loss when an update ran.
  std::optional<double> observe(const Transition& t) {
    replay_.push(t);
    ++steps_;
    const std::size_t ready = std::max(hyper_.batch_size, hyper_.warmup);
    if (replay_.size() < ready || steps_ % hyper_.train_every != 0) return std::nullopt;
    const auto batch = replay_.sample(hyper_.batch_size, rng_);
    const double loss = td_update(batch);
    if (updates_ % hyper_.target_every == 0) soft_update();
    return loss;
  }

  // Networks and optimiser go into a checkpoint at `path`; counters, RNG
  // state and the replay buffer go into the sidecar `path`.json.
  void save(const std::filesystem::path& path, bool with_replay = true) {
    nk::Checkpoint ck;
    ck.kind = kAgentKind;
    ck.meta = {{"qnet", online_.config()}, {"hyper", hyper_}};
    ck.layers = online_.specs();
    nk::store_parameters(ck, online_.parameters());
    for (auto* p : target_.parameters()) ck.add("target/" + p->name, p->value);
    nk::store_optimizer(ck, "adam", opt_, online_.parameters());
    ck.save(path);
    write_file_atomic(sidecar_path(path), sidecar().dump(1) + "\n");
    if (with_replay) write_file_atomic(replay_path(path), replay_.to_json().dump() + "\n");
  }

  static Agent load(const std::filesystem::path& path) {
    const auto ck = nk::Checkpoint::load(path);
    if (ck.kind != kAgentKind) throw CompatibilityError(path.string() + " is not an agent checkpoint");
    const auto side = nlohmann::json::parse(read_text_file(sidecar_path(path)));
    Agent a(ck.meta.at("hyper").get<AgentHyper>(), ck.meta.at("qnet").get<QNetConfig>(), side.at("seed").get<std::uint64_t>());
    nk::restore_parameters(ck, a.online_.parameters());
    for (auto* p : a.target_.parameters()) ck.load_into("target/" + p->name, p->value);
    nk::restore_optimizer(ck, "adam", a.opt_, a.online_.parameters());
    a.steps_ = side.at("steps").get<std::uint64_t>();
    a.updates_ = side.at("updates").get<std::uint64_t>();
    std::istringstream rng(side.at("rng").get<std::string>());
    rng >> a.rng_;
    if (std::filesystem::exists(replay_path(path))) {
      a.replay_ = ReplayBuffer::from_json(nlohmann::json::parse(read_text_file(replay_path(path))));
    }
    return a;
  }

  nlohmann::json sidecar() const {
    std::ostringstream rng;
    rng << rng_;
    return {{"kind", kAgentKind},     {"hyper", hyper_},      {"qnet", online_.config()}, {"seed", seed_},
            {"steps", steps_},        {"updates", updates_},  {"epsilon", epsilon()},     {"rng", rng.str()},
            {"replay_size", replay_.size()}};
  }

  static std::filesystem::path sidecar_path(const std::filesystem::path& p) { return p.string() + ".json"; }
  static std::filesystem::path replay_path(const std::filesystem::path& p) { return p.string() + ".replay"; }

 private:
  AgentHyper hyper_;
  QNetwork<T> online_;
  QNetwork<T> target_;
  nk::Adam<T> opt_;
  ReplayBuffer replay_;
  std::mt19937_64 rng_;
  std::uint64_t seed_;
  std::uint64_t steps_ = 0;
  std::uint64_t updates_ = 0;
};

using FloatAgent = Agent<float>;

}  // namespace earlystop::dqn
