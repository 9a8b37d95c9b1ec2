#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "earlystop/harness/harness.hpp"
#include "support/optimal_oracle.hpp"

namespace es = earlystop;
namespace se = earlystop::stopenv;
namespace hn = earlystop::harness;

namespace {

// Hides the labels of another source.
class Unlabeled final : public se::ProbabilitySource {
 public:
  explicit Unlabeled(se::ProbabilitySource& inner) : inner_(inner) {}
  std::size_t size() const override { return inner_.size(); }
  std::size_t t_max() const override { return inner_.t_max(); }
  std::string clip_id(std::size_t c) const override { return inner_.clip_id(c); }
  std::optional<int> label(std::size_t) const override { return std::nullopt; }
  se::Probs probs(std::size_t c, std::size_t t) override { return inner_.probs(c, t); }

 private:
  se::ProbabilitySource& inner_;
};

se::RewardConfig accuracy_reward() { return se::RewardConfig::preset(se::RewardMode::Accuracy); }

es::dqn::AgentHyper small_hyper() {
  es::dqn::AgentHyper h;
  h.gamma = 0.95;
  h.batch_size = 16;
  h.buffer_capacity = 2000;
  h.explore_steps = 1000;
  h.learning_rate = 1e-3;
  h.train_every = 4;
  return h;
}

es::dqn::QNetConfig small_net() {
  es::dqn::QNetConfig c;
  c.hidden = 16;
  c.embed = 8;
  c.heads = 2;
  c.head_hidden = 8;
  return c;
}

hn::EvalSummary fake_summary(std::string name, double acc, double speedup, std::size_t t_max = 124) {
  hn::EvalSummary s;
  s.policy = std::move(name);
  s.accuracy = acc;
  s.speedup = speedup;
  s.mean_stop = static_cast<double>(t_max) / speedup;
  s.t_max = t_max;
  s.episodes = 10;
  return s;
}

}  // namespace

TEST(Synthetic, FramesAreProbabilityVectors) {
  for (const char* name : {"easy", "moderate", "noiseless"}) {
    const auto spec = hn::SyntheticEnvSpec::preset(name);
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
      const auto ep = hn::synth_episode(spec, seed);
      ASSERT_EQ(ep.probs.size(), spec.t_max);
      for (const auto& p : ep.probs) {
        double sum = 0;
        for (double v : p) {
          EXPECT_GE(v, 0.0);
          sum += v;
        }
        EXPECT_NEAR(sum, 1.0, 1e-9) << name;
      }
    }
  }
}

TEST(Synthetic, NoiselessRampSaturates) {
  hn::SyntheticEnvSpec spec;
  spec.ramp_frames = {10, 10, 10};
  spec.start_conf = 0.2;
  spec.peak_conf = 1.0;
  hn::SyntheticSource src(spec, 3, 4);
  se::StopEnv env(src, accuracy_reward());
  se::EpisodeContext ctx;
  auto s = env.reset(ctx, 0);
  EXPECT_NEAR(s[se::StopState::Prob0 + static_cast<std::size_t>(*ctx.label)], 0.2 + 0.8 / 10, 1e-12);
  while (ctx.t < 14) s = *env.step(ctx, se::kContinue).next_state;
  EXPECT_EQ(ctx.confidence(10), 1.0);
  EXPECT_DOUBLE_EQ(s[se::StopState::MeanConfidence], 1.0);
  EXPECT_DOUBLE_EQ(s[se::StopState::ConfidenceStd], 0.0);
  EXPECT_DOUBLE_EQ(s[se::StopState::Entropy], 0.0);
}

TEST(Synthetic, SeedsAreReproducibleAndDistinct) {
  const auto spec = hn::SyntheticEnvSpec::moderate();
  const auto a = hn::synth_episode(spec, 11), b = hn::synth_episode(spec, 11), c = hn::synth_episode(spec, 12);
  EXPECT_EQ(a.probs, b.probs);
  EXPECT_NE(a.probs, c.probs);
  std::set<std::uint64_t> seeds;
  for (std::uint64_t i = 0; i < 1000; ++i) seeds.insert(hn::derive_seed(42, i));
  EXPECT_EQ(seeds.size(), 1000u);
  hn::SyntheticSource s1(spec, 7, 50), s2(spec, 7, 50);
  for (std::size_t i : {3u, 0u, 49u, 3u}) {
    EXPECT_EQ(s1.episode(i).probs, s2.episode(i).probs);
    EXPECT_EQ(s1.label(i), s2.label(i));
  }
  EXPECT_THROW(s1.episode(50), es::DomainError);
  EXPECT_THROW(s1.probs(0, 0), es::DomainError);
}

TEST(Synthetic, LabelWeightsAndClassBalance) {
  auto spec = hn::SyntheticEnvSpec::easy();
  spec.label_weights = {0, 1, 0};
  for (std::uint64_t s = 0; s < 30; ++s) EXPECT_EQ(hn::synth_episode(spec, s).label, 1);
  hn::SyntheticSource src(hn::SyntheticEnvSpec::easy(), 1, 600);
  std::array<int, 3> counts{};
  for (std::size_t i = 0; i < src.size(); ++i) ++counts[*src.label(i)];
  for (int c : counts) EXPECT_NEAR(c, 200, 60);
}

TEST(Synthetic, SpecJsonAndValidation) {
  const auto spec = hn::SyntheticEnvSpec::moderate();
  EXPECT_EQ(nlohmann::json(spec).get<hn::SyntheticEnvSpec>().ramp_frames, spec.ramp_frames);
  const auto refined = nlohmann::json{{"name", "easy"}, {"noise", 0.0}}.get<hn::SyntheticEnvSpec>();
  EXPECT_EQ(refined.noise, 0.0);
  EXPECT_EQ(refined.ramp_frames, hn::SyntheticEnvSpec::easy().ramp_frames);
  EXPECT_THROW(hn::SyntheticEnvSpec::preset("hard"), es::ConfigError);
  EXPECT_THROW((nlohmann::json{{"name", "custom"}, {"peak_conf", 1.5}}.get<hn::SyntheticEnvSpec>()), es::ConfigError);
  EXPECT_THROW((nlohmann::json{{"ramp_jitter", 1.0}}.get<hn::SyntheticEnvSpec>()), es::ConfigError);
}

TEST(Optimal, ExhaustiveSearchMatchesBackwardInduction) {
  for (const char* name : {"noiseless", "moderate", "easy"}) {
    hn::SyntheticSource src(hn::SyntheticEnvSpec::preset(name), 5, 60);
    for (auto mode : {se::RewardMode::Accuracy, se::RewardMode::Balanced, se::RewardMode::Speed}) {
      se::StopEnv env(src, se::RewardConfig::preset(mode));
      for (double gamma : {0.99, 0.95, 0.5}) {
        for (std::size_t c = 0; c < src.size(); ++c) {
          const auto brute = hn::optimal_stop(env, c, gamma);
          const auto dp = oracle::dp_optimal_stop(env, c, gamma);
          ASSERT_EQ(brute.t, dp.t) << name << " clip " << c << " gamma " << gamma;
          ASSERT_NEAR(brute.value, dp.value, 1e-9);
        }
      }
    }
  }
}

TEST(Optimal, ReturnsMatchRollouts) {
  hn::SyntheticSource src(hn::SyntheticEnvSpec::moderate(), 9, 5);
  se::StopEnv env(src, accuracy_reward());
  const double gamma = 0.95;
  for (std::size_t c = 0; c < src.size(); ++c) {
    const auto best = hn::optimal_stop(env, c, gamma);
    EXPECT_TRUE(std::isnan(best.returns[0]));
    for (std::size_t stop : {std::size_t{15}, std::size_t{40}, best.t, std::size_t{124}}) {
      se::EpisodeContext ctx;
      env.reset(ctx, c);
      double g = 0, d = 1;
      for (;;) {
        const auto r = env.step(ctx, ctx.t >= stop ? se::kStop : se::kContinue);
        g += d * r.reward;
        d *= gamma;
        if (r.done) break;
      }
      EXPECT_EQ(ctx.t, stop);
      EXPECT_NEAR(best.returns[stop - 1], g, 1e-9);
      EXPECT_LE(g, best.value + 1e-12);
    }
  }
}

TEST(Baselines, FixedLengthAtHorizonHasUnitSpeedup) {
  hn::SyntheticSource src(hn::SyntheticEnvSpec::moderate(), 1, 40);
  se::StopEnv env(src, accuracy_reward());
  const auto b = hn::BaselinePolicy::fixed_length(124);
  const auto s = hn::evaluate_policy(b.name(), hn::as_policy(b), env, 40);
  EXPECT_EQ(s.policy, "fixed@124");
  EXPECT_EQ(s.speedup, 1.0);
  EXPECT_EQ(s.mean_stop, 124.0);
}

TEST(Baselines, ThresholdOfOneNeverFires) {
  hn::SyntheticSource src(hn::SyntheticEnvSpec::noiseless(), 1, 20);
  se::StopEnv env(src, accuracy_reward());
  const auto b = hn::BaselinePolicy::fixed_threshold(1.0);
  b.validate(15, 124);
  const auto s = hn::evaluate_policy(b.name(), hn::as_policy(b), env, 20);
  EXPECT_EQ(s.mean_stop, 124.0);
  const auto low = hn::BaselinePolicy::fixed_threshold(0.5);
  const auto early = hn::evaluate_policy(low.name(), hn::as_policy(low), env, 20);
  for (auto t : early.stop_times) EXPECT_GE(t, 15u);  // held back to t_min
  EXPECT_LT(early.mean_stop, 124.0);
}

TEST(Baselines, ValidationNamesAndJson) {
  EXPECT_THROW(hn::BaselinePolicy::fixed_threshold(0.3).validate(15, 124), es::ConfigError);
  EXPECT_THROW(hn::BaselinePolicy::fixed_threshold(1.01).validate(15, 124), es::ConfigError);
  EXPECT_THROW(hn::BaselinePolicy::fixed_length(10).validate(15, 124), es::ConfigError);
  EXPECT_THROW(hn::BaselinePolicy::fixed_length(125).validate(15, 124), es::ConfigError);
  EXPECT_EQ(hn::BaselinePolicy::fixed_threshold(0.9).name(), "threshold@0.9");
  for (const auto& b : {hn::BaselinePolicy::fixed_threshold(0.75), hn::BaselinePolicy::fixed_length(60)}) {
    const auto back = nlohmann::json(b).get<hn::BaselinePolicy>();
    EXPECT_EQ(back.name(), b.name());
  }
  EXPECT_THROW((nlohmann::json{{"kind", "oracle"}}.get<hn::BaselinePolicy>()), es::ConfigError);
}

TEST(Evaluate, SpeedupArithmetic) {
  hn::SyntheticSource src(hn::SyntheticEnvSpec::easy(), 2, 30);
  se::StopEnv env(src, accuracy_reward());
  const auto s = hn::evaluate_policy("fixed@76", hn::as_policy(hn::BaselinePolicy::fixed_length(76)), env, 30);
  EXPECT_EQ(s.mean_stop, 76.0);
  EXPECT_NEAR(s.speedup, 1.63, 0.005);
  EXPECT_EQ(s.speedup, 124.0 / 76.0);
  EXPECT_EQ(s.speedup * s.mean_stop, 124.0);
}

TEST(Evaluate, SummaryInvariants) {
  hn::SyntheticSource src(hn::SyntheticEnvSpec::moderate(), 4, 90);
  se::StopEnv env(src, accuracy_reward());
  const auto s = hn::evaluate_policy("thr", hn::as_policy(hn::BaselinePolicy::fixed_threshold(0.7)), env, 90);
  EXPECT_GE(s.accuracy, 0.0);
  EXPECT_LE(s.accuracy, 1.0);
  EXPECT_GE(s.speedup, 1.0);
  std::array<std::size_t, 3> per_class{};
  for (std::size_t i = 0; i < 90; ++i) ++per_class[*src.label(i)];
  std::size_t diag = 0;
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(std::accumulate(s.confusion[r].begin(), s.confusion[r].end(), std::size_t{0}), per_class[r]);
    diag += s.confusion[r][r];
  }
  EXPECT_DOUBLE_EQ(s.accuracy, static_cast<double>(diag) / 90.0);
  EXPECT_NEAR(s.speedup * s.mean_stop, 124.0, 1e-9);
  const auto j = s.to_json(true);
  EXPECT_EQ(j.at("stop_times").size(), 90u);
  EXPECT_EQ(j.at("recall").size(), 3u);
}

TEST(Evaluate, TracesHaveOneRecordPerStep) {
  hn::SyntheticSource src(hn::SyntheticEnvSpec::easy(), 8, 6);
  se::StopEnv env(src, accuracy_reward());
  std::ostringstream out;
  const auto s = hn::evaluate_policy("fixed@20", hn::as_policy(hn::BaselinePolicy::fixed_length(20)), env, 6, &out);
  std::istringstream in(out.str());
  std::string line;
  std::size_t n = 0, done = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("state").size(), se::kStateDim);
    done += j.at("done").get<bool>();
    ++n;
  }
  EXPECT_EQ(n, 6u * 20u);
  EXPECT_EQ(done, 6u);
  EXPECT_EQ(s.episodes, 6u);
}

TEST(Evaluate, RejectsBadRequests) {
  hn::SyntheticSource src(hn::SyntheticEnvSpec::easy(), 2, 5);
  se::StopEnv env(src, accuracy_reward());
  EXPECT_THROW(hn::evaluate_policy("x", hn::always(1), env, 0), es::ConfigError);
  EXPECT_THROW(hn::evaluate_policy("x", hn::always(1), env, 6), es::ConfigError);
  EXPECT_THROW(hn::evaluate_policy("x", hn::always(1), env, 3, nullptr, 3), es::ConfigError);
  Unlabeled blind(src);
  se::StopEnv env2(blind, accuracy_reward(), {.require_labels = false});
  EXPECT_THROW(hn::evaluate_policy("x", hn::always(1), env2, 2), es::DataError);
}

TEST(Compare, ColumnsOrderingAndErrors) {
  const auto table = hn::compare_report({fake_summary("a", 0.9, 1.5), fake_summary("b", 0.95, 1.1),
                                         fake_summary("c", 0.9, 2.0), fake_summary("d", 0.9, 1.5)});
  EXPECT_EQ(table.columns(), (std::vector<std::string>{"policy", "accuracy", "mean_stop", "speedup", "episodes"}));
  std::vector<std::string> order;
  for (const auto& r : table.rows) order.push_back(r.policy);
  EXPECT_EQ(order, (std::vector<std::string>{"b", "c", "a", "d"}));
  const auto csv = table.csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "policy,accuracy,mean_stop,speedup,episodes");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  const auto j = table.json();
  EXPECT_EQ(j.at("rows").size(), 4u);
  EXPECT_EQ(j.at("rows")[0].at("policy"), "b");
  EXPECT_EQ(j.at("t_max"), 124);
  EXPECT_THROW(hn::compare_report({fake_summary("a", 1, 1)}), es::ConfigError);
  EXPECT_THROW(hn::compare_report({fake_summary("a", 1, 1), fake_summary("b", 1, 1, 100)}), es::CompatibilityError);
}

TEST(Compare, EnvelopeViolations) {
  const auto lo = fake_summary("t_min", 0.6, 124.0 / 15), hi = fake_summary("t_max", 1.0, 1.0);
  EXPECT_TRUE(hn::envelope_violations(fake_summary("ok", 0.9, 2.0), lo, hi).empty());
  EXPECT_EQ(hn::envelope_violations(fake_summary("bad", 0.5, 2.0), lo, hi).size(), 1u);
}

TEST(Schedule, StandardSplitAndJson) {
  const auto s = hn::PhaseSchedule::standard(1000);
  ASSERT_EQ(s.phases.size(), 2u);
  EXPECT_EQ(s.phases[0].mode, se::RewardMode::Accuracy);
  EXPECT_EQ(s.phases[0].episodes, 400u);
  EXPECT_EQ(s.phases[1].mode, se::RewardMode::Balanced);
  EXPECT_EQ(s.total(), 1000u);
  const auto back = nlohmann::json(s).get<hn::PhaseSchedule>();
  EXPECT_EQ(back.phases[1].episodes, 600u);
  EXPECT_THROW(nlohmann::json::array().get<hn::PhaseSchedule>(), es::ConfigError);
  EXPECT_THROW(hn::PhaseSchedule::single(se::RewardMode::Speed, 0).validate(), es::ConfigError);

  auto shared = se::RewardConfig::preset(se::RewardMode::Accuracy);
  shared.tau = 0.8;
  const auto r = hn::phase_reward(se::RewardMode::Speed, shared);
  EXPECT_EQ(r.alpha, se::RewardConfig::preset(se::RewardMode::Speed).alpha);
  EXPECT_EQ(r.lambda, se::RewardConfig::preset(se::RewardMode::Speed).lambda);
  EXPECT_EQ(r.tau, 0.8);
}

TEST(Train, LogFollowsBudgetAndEpsilonSchedule) {
  hn::SyntheticSource src(hn::SyntheticEnvSpec::easy(), 21, 40);
  se::StopEnv env(src, accuracy_reward());
  es::dqn::FloatAgent agent(small_hyper(), small_net(), 5);
  hn::TrainOptions opt;
  opt.schedule = hn::PhaseSchedule::standard(40);
  std::size_t seen = 0;
  hn::TrainHooks hooks;
  hooks.on_episode = [&](const hn::EpisodeLog& e) { EXPECT_EQ(e.episode, seen++); };
  const auto log = hn::train_agent(agent, env, opt, hn::sequential_clips(), hooks);
  ASSERT_EQ(log.size(), 40u);
  EXPECT_EQ(seen, 40u);
  std::uint64_t steps = 0;
  for (const auto& e : log) {
    EXPECT_EQ(e.agent_steps, steps);
    EXPECT_DOUBLE_EQ(e.epsilon, es::dqn::epsilon(agent.hyper(), e.agent_steps));
    EXPECT_GE(e.stop_t, 15u);
    EXPECT_LE(e.stop_t, 124u);
    EXPECT_EQ(e.phase, e.episode < 16 ? "accuracy" : "balanced");
    steps += e.stop_t;
  }
  EXPECT_EQ(agent.steps(), steps);
  EXPECT_EQ(agent.updates(), (steps - 0) / 4 - (agent.hyper().batch_size - 1) / 4);
  EXPECT_TRUE(log.back().loss_mean.has_value());
  EXPECT_EQ(agent.replay().size(), std::min<std::size_t>(steps, 2000));
}

TEST(Train, RunsAreDeterministic) {
  auto run = [] {
    hn::SyntheticSource src(hn::SyntheticEnvSpec::moderate(), 42, 100);
    se::StopEnv env(src, accuracy_reward());
    es::dqn::FloatAgent agent(small_hyper(), small_net(), 42);
    hn::TrainOptions opt;
    opt.schedule = hn::PhaseSchedule::standard(25);
    auto log = hn::train_agent(agent, env, opt, hn::uniform_clips(src.size(), 42));
    se::EpisodeContext ctx;
    const auto q = agent.q_values(env.reset(ctx, 0));
    return std::make_pair(log, q);
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Train, SnapshotsOnCadence) {
  hn::SyntheticSource train(hn::SyntheticEnvSpec::easy(), 1, 12), held(hn::SyntheticEnvSpec::easy(), 2, 7);
  se::StopEnv env(train, accuracy_reward()), eval(held, accuracy_reward());
  es::dqn::FloatAgent agent(small_hyper(), small_net(), 1);
  hn::TrainOptions opt;
  opt.schedule = hn::PhaseSchedule::single(se::RewardMode::Balanced, 12);
  opt.eval_every = 5;
  std::vector<std::size_t> at;
  hn::TrainHooks hooks;
  hooks.eval_env = &eval;
  hooks.on_snapshot = [&](std::size_t ep, const hn::EvalSummary& s) {
    at.push_back(ep);
    EXPECT_EQ(s.episodes, 7u);
  };
  hn::train_agent(agent, env, opt, hn::sequential_clips(), hooks);
  EXPECT_EQ(at, (std::vector<std::size_t>{5, 10}));
}

TEST(Train, UniformSamplerStaysInRange) {
  auto s = hn::uniform_clips(7, 3);
  std::set<std::size_t> seen;
  for (std::size_t i = 0; i < 500; ++i) {
    const auto c = s(i);
    ASSERT_LT(c, 7u);
    seen.insert(c);
  }
  EXPECT_EQ(seen.size(), 7u);
  EXPECT_THROW(hn::uniform_clips(0, 1), es::DataError);
}
