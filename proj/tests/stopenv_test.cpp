#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "earlystop/stopenv/stopenv.hpp"
#include "support/reward_oracle.hpp"

namespace es = earlystop;
namespace se = earlystop::stopenv;

namespace {

// Hand-written trajectories, one per clip.
class FixedSource final : public se::ProbabilitySource {
 public:
  FixedSource(std::vector<std::vector<se::Probs>> traj, std::vector<std::optional<int>> labels)
      : traj_(std::move(traj)), labels_(std::move(labels)) {}
  std::size_t size() const override { return traj_.size(); }
  std::size_t t_max() const override { return traj_.front().size(); }
  std::string clip_id(std::size_t c) const override { return "clip" + std::to_string(c); }
  std::optional<int> label(std::size_t c) const override { return labels_.at(c); }
  se::Probs probs(std::size_t c, std::size_t t) override { return traj_.at(c).at(t - 1); }

 private:
  std::vector<std::vector<se::Probs>> traj_;
  std::vector<std::optional<int>> labels_;
};

std::vector<se::Probs> random_trajectory(std::size_t T, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> g(0.5, 1.0);
  std::vector<se::Probs> out(T);
  for (auto& p : out) {
    double s = 0;
    for (auto& v : p) s += (v = g(rng) + 1e-12);
    for (auto& v : p) v /= s;
  }
  return out;
}

se::RewardInputs inputs(std::size_t t, bool correct, double mu) {
  se::RewardInputs in;
  in.t = t;
  in.t_max = 124;
  in.correct = correct;
  in.confidence = mu;
  in.conf_stability = 0.1;
  return in;
}

}  // namespace

TEST(RewardConfig, PublishedPresets) {
  const auto a = se::RewardConfig::preset(se::RewardMode::Accuracy);
  EXPECT_EQ(a.alpha, 5.0);
  EXPECT_EQ(a.beta, 0.5);
  EXPECT_EQ(a.sigma, 5.0);
  EXPECT_EQ(a.lambda, 0.0005);
  EXPECT_EQ(a.tau, 0.85);
  EXPECT_EQ(a.zeta, 0.2);
  EXPECT_EQ(a.xi, 0.1);
  EXPECT_EQ(a.omega, 0.01);
  EXPECT_EQ(a.t_min, 15u);
  const auto b = se::RewardConfig::preset(se::RewardMode::Balanced);
  EXPECT_EQ(b.alpha, 3.0);
  EXPECT_EQ(b.beta, 0.3);
  EXPECT_EQ(b.sigma, 3.0);
  EXPECT_EQ(b.lambda, 0.001);
  const auto s = se::RewardConfig::preset(se::RewardMode::Speed);
  EXPECT_EQ(s.alpha, 2.0);
  EXPECT_EQ(s.beta, 0.5);
  EXPECT_EQ(s.sigma, 2.0);
  EXPECT_EQ(s.lambda, 0.005);
}

TEST(RewardConfig, JsonAndValidation) {
  auto c = se::RewardConfig::preset(se::RewardMode::Speed);
  c.tau = 0.7;
  const nlohmann::json j = c;
  const auto back = j.get<se::RewardConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_THROW(se::reward_mode_from_string("greedy"), es::ConfigError);
  auto bad = c;
  bad.tau = 0.2;
  EXPECT_THROW(bad.validate(), es::ConfigError);
  bad = c;
  bad.alpha = -1;
  EXPECT_THROW(bad.validate(), es::ConfigError);
  // Partial config: missing weights come from the named mode's preset.
  const auto partial = nlohmann::json{{"mode", "balanced"}}.get<se::RewardConfig>();
  EXPECT_EQ(partial.lambda, 0.001);
}

TEST(Reward, WorkedExamples) {
  const auto acc = se::RewardConfig::preset(se::RewardMode::Accuracy);
  const auto bal = se::RewardConfig::preset(se::RewardMode::Balanced);
  EXPECT_NEAR(se::compute_reward(inputs(30, true, 0.9), se::kStop, acc) -
                  se::early_bonus(inputs(30, true, 0.9), acc),
              5.45, 1e-12);
  EXPECT_NEAR(se::compute_reward(inputs(30, true, 0.8), se::kStop, acc), 5.4, 1e-12);
  EXPECT_NEAR(se::compute_reward(inputs(30, true, 0.5), se::kContinue, acc), -0.0005, 1e-15);
  EXPECT_NEAR(se::compute_reward(inputs(30, false, 0.5), se::kStop, bal), -2.85, 1e-12);

  auto in = inputs(20, true, 0.9);
  in.t_first_correct = 18;
  EXPECT_NEAR(se::early_bonus(in, acc), 0.2 * (1.0 - 20.0 / 124.0), 1e-15);
  EXPECT_NEAR(se::early_bonus(in, acc), 0.16774, 1e-5);
  in.t_first_correct = 10;  // outside the five-frame window
  EXPECT_NEAR(se::early_bonus(in, acc), 0.5 * 0.16774, 1e-5);
  in.confidence = 0.85;  // the threshold is strict
  EXPECT_EQ(se::early_bonus(in, acc), 0.0);

  in.n_consec = 4;
  EXPECT_NEAR(se::consec_bonus(in, acc), 0.4, 1e-15);
  in.n_consec = 2;
  EXPECT_EQ(se::consec_bonus(in, acc), 0.0);
  in.n_consec = 3;
  EXPECT_NEAR(se::consec_bonus(in, acc), 0.3, 1e-15);
}

TEST(Reward, StabilityIncentiveGuard) {
  for (auto mode : {se::RewardMode::Accuracy, se::RewardMode::Balanced, se::RewardMode::Speed}) {
    const auto c = se::RewardConfig::preset(mode);
    auto in = inputs(30, true, 0.9);
    in.conf_stability = 0.01;
    const double expect = mode == se::RewardMode::Accuracy ? -0.01 : 0.0;
    EXPECT_EQ(se::stability_incentive(in, c), expect);
    in.conf_stability = 0.02;  // strict
    EXPECT_EQ(se::stability_incentive(in, c), 0.0);
    in.conf_stability = 0.01;
    in.confidence = 0.85;
    EXPECT_EQ(se::stability_incentive(in, c), 0.0);
  }
}

TEST(Reward, MatchesClosedFormOracleOnGrid) {
  const char* modes[] = {"accuracy", "balanced", "speed"};
  std::size_t cases = 0;
  for (const char* mode : modes) {
    const auto cfg = se::RewardConfig::preset(se::reward_mode_from_string(mode));
    for (bool stop : {false, true})
      for (bool correct : {false, true})
        for (int level = 1; level <= 10; ++level)
          for (int early : {0, 1, 2})  // never hit, inside window, outside window
            for (int n : {0, 3, 5})
              for (bool stable : {false, true}) {
                oracle::Case oc{mode, stop, correct, level / 10.0, stable ? 0.01 : 0.05, 40, 124,
                                early == 0 ? -1 : (early == 1 ? 38 : 20), n};
                se::RewardInputs in;
                in.t = 40;
                in.t_max = 124;
                in.correct = correct;
                in.confidence = oc.mu;
                in.conf_stability = oc.sigma_conf;
                in.n_consec = static_cast<std::size_t>(n);
                if (oc.t_first_correct >= 0) in.t_first_correct = static_cast<std::size_t>(oc.t_first_correct);
                const double got = se::compute_reward(in, stop ? se::kStop : se::kContinue, cfg);
                ASSERT_NEAR(got, oracle::reward(oc), 1e-9)
                    << mode << " stop=" << stop << " correct=" << correct << " mu=" << oc.mu << " early=" << early
                    << " n=" << n << " stable=" << stable;
                ++cases;
              }
  }
  EXPECT_EQ(cases, 3u * 2 * 2 * 10 * 3 * 3 * 2);
}

TEST(Reward, RejectsBadAction) {
  EXPECT_THROW(se::compute_reward(inputs(3, true, 0.5), 2, se::RewardConfig{}), es::DomainError);
}

TEST(State, EntropyConventions) {
  EXPECT_NEAR(se::normalized_entropy({1.0 / 3, 1.0 / 3, 1.0 / 3}), 1.0, 1e-12);
  EXPECT_EQ(se::normalized_entropy({1.0, 0.0, 0.0}), 0.0);
  // Direct summation.
  const double h = -(0.7 * std::log(0.7) + 0.2 * std::log(0.2) + 0.1 * std::log(0.1));
  EXPECT_NEAR(se::entropy_nats({0.7, 0.2, 0.1}), h, 1e-15);
  EXPECT_NEAR(se::entropy_nats({0.7, 0.2, 0.1}), 0.80182, 1e-5);
  EXPECT_NEAR(se::normalized_entropy({0.7, 0.2, 0.1}), 0.72985, 1e-5);
}

TEST(Env, FirstStateConventions) {
  FixedSource src({random_trajectory(40, 1)}, {0});
  se::StopEnv env(src, se::RewardConfig{});
  se::EpisodeContext ctx;
  const auto s = env.reset(ctx, 0);
  EXPECT_EQ(ctx.t, 1u);
  EXPECT_DOUBLE_EQ(s[se::StopState::Progress], 1.0 / 40.0);
  EXPECT_EQ(s[se::StopState::DeltaConfidence], 0.0);
  EXPECT_EQ(s[se::StopState::DeltaEntropy], 0.0);
  EXPECT_EQ(s[se::StopState::ConfidenceStd], 0.0);
  EXPECT_EQ(s[se::StopState::PredictionStability], 1.0);
  EXPECT_DOUBLE_EQ(s[se::StopState::MeanConfidence], s[se::StopState::MaxConfidence]);
  se::EpisodeContext again;
  EXPECT_EQ(env.reset(again, 0), s);
  EXPECT_EQ(again, ctx);
}

TEST(Env, WindowStatistics) {
  // Labels: class 0. Predictions: 0,0,1,1,0,0,0 ; confidences chosen by hand.
  std::vector<se::Probs> tr = {{0.5, 0.3, 0.2}, {0.6, 0.3, 0.1}, {0.2, 0.7, 0.1}, {0.3, 0.6, 0.1},
                               {0.8, 0.1, 0.1}, {0.9, 0.05, 0.05}, {0.95, 0.03, 0.02}, {0.95, 0.03, 0.02}};
  FixedSource src({tr}, {0});
  auto cfg = se::RewardConfig{};
  cfg.t_min = 1;
  se::StopEnv env(src, cfg);
  se::EpisodeContext ctx;
  env.reset(ctx, 0);
  se::StepResult r;
  for (int i = 0; i < 6; ++i) r = env.step(ctx, se::kContinue);
  ASSERT_EQ(ctx.t, 7u);
  const auto& s = *r.next_state;
  // Window t=3..7: 0.7, 0.6, 0.8, 0.9, 0.95.
  const double mean = (0.7 + 0.6 + 0.8 + 0.9 + 0.95) / 5;
  double var = 0;
  for (double v : {0.7, 0.6, 0.8, 0.9, 0.95}) var += (v - mean) * (v - mean);
  EXPECT_NEAR(s[se::StopState::MeanConfidence], mean, 1e-12);
  EXPECT_NEAR(s[se::StopState::ConfidenceStd], std::sqrt(var / 5), 1e-12);
  // Transitions over the last five steps (3..7): 0->1 no, 1->1 yes, 1->0 no, 0->0 yes, 0->0 yes.
  EXPECT_NEAR(s[se::StopState::PredictionStability], 3.0 / 5.0, 1e-12);
  EXPECT_EQ(ctx.n_consec, 3u);
  EXPECT_NEAR(s[se::StopState::Consecutive], 0.3, 1e-12);
  EXPECT_EQ(ctx.t_first_correct, 1u);
  EXPECT_NEAR(s[se::StopState::DeltaConfidence], 0.05, 1e-12);
  EXPECT_NEAR(s[se::StopState::DeltaEntropy],
              se::normalized_entropy(tr[6]) - se::normalized_entropy(tr[5]), 1e-12);
}

TEST(Env, StopRequestsBelowTminAreOverridden) {
  FixedSource src({random_trajectory(124, 2)}, {1});
  se::StopEnv env(src, se::RewardConfig{});
  se::EpisodeContext ctx;
  env.reset(ctx, 0);
  for (std::size_t t = 1; t < 15; ++t) {
    const auto r = env.step(ctx, se::kStop);
    EXPECT_EQ(r.executed_action, se::kContinue) << t;
    EXPECT_FALSE(r.done);
  }
  EXPECT_EQ(ctx.t, 15u);
  const auto r = env.step(ctx, se::kStop);
  EXPECT_EQ(r.executed_action, se::kStop);
  EXPECT_TRUE(r.done);
  EXPECT_FALSE(r.next_state);
  EXPECT_THROW(env.step(ctx, se::kContinue), es::LifecycleError);
}

TEST(Env, ForcedStopAtTmaxEarnsStopReward) {
  FixedSource src({random_trajectory(20, 3)}, {2});
  se::StopEnv env(src, se::RewardConfig{});
  se::EpisodeContext ctx;
  env.reset(ctx, 0);
  while (ctx.t < 20) env.step(ctx, se::kContinue);
  const auto in = se::reward_inputs(ctx);
  const auto r = env.step(ctx, se::kContinue);
  EXPECT_TRUE(r.done);
  EXPECT_EQ(r.executed_action, se::kStop);
  EXPECT_EQ(r.reward, se::compute_reward(in, se::kStop, env.reward_config()));
}

TEST(Env, LabelRequiredInTraining) {
  FixedSource src({random_trajectory(20, 4)}, {std::nullopt});
  se::StopEnv train(src, se::RewardConfig{});
  se::EpisodeContext ctx;
  EXPECT_THROW(train.reset(ctx, 0), es::DataError);
  se::StopEnv infer(src, se::RewardConfig{}, {.require_labels = false});
  infer.reset(ctx, 0);
  EXPECT_EQ(ctx.n_consec, 0u);
  EXPECT_FALSE(ctx.correct());
}

TEST(Env, RewardsFollowContextOnEveryStep) {
  FixedSource src({random_trajectory(60, 5)}, {0});
  se::StopEnv env(src, se::RewardConfig::preset(se::RewardMode::Balanced));
  se::EpisodeContext ctx;
  env.reset(ctx, 0);
  std::mt19937_64 rng(9);
  while (!ctx.done) {
    const int a = static_cast<int>(rng() % 4 == 0);
    const auto in = se::reward_inputs(ctx);
    const bool forced_stop = ctx.t >= ctx.t_max;
    const int exec = ctx.t < 15 ? 0 : (forced_stop ? 1 : a);
    const auto r = env.step(ctx, a);
    EXPECT_EQ(r.executed_action, exec);
    EXPECT_EQ(r.reward, se::compute_reward(in, exec, env.reward_config()));
  }
}

TEST(Env, InvariantsUnderRandomPolicies) {
  std::vector<std::vector<se::Probs>> trajs;
  std::vector<std::optional<int>> labels;
  for (int i = 0; i < 50; ++i) {
    trajs.push_back(random_trajectory(124, 100 + i));
    labels.push_back(i % 3);
  }
  FixedSource src(trajs, labels);
  se::StopEnv env(src, se::RewardConfig{});
  std::mt19937_64 rng(17);
  for (std::size_t clip = 0; clip < src.size(); ++clip) {
    se::EpisodeContext ctx;
    auto s = env.reset(ctx, clip);
    const double p_stop = static_cast<double>(clip) / 50.0;
    for (;;) {
      ASSERT_TRUE(s.all_finite());
      EXPECT_GT(s[se::StopState::Progress], 0.0);
      EXPECT_LE(s[se::StopState::Progress], 1.0);
      EXPECT_GE(s[se::StopState::MaxConfidence], 1.0 / 3 - 1e-12);
      EXPECT_GE(s[se::StopState::Entropy], 0.0);
      EXPECT_LE(s[se::StopState::Entropy], 1.0);
      EXPECT_NEAR(s[se::StopState::Prob0] + s[se::StopState::Prob1] + s[se::StopState::Prob2], 1.0, 1e-9);
      for (auto i : {se::StopState::Consecutive, se::StopState::PredictionStability}) {
        EXPECT_GE(s[i], 0.0);
        EXPECT_LE(s[i], 1.0);
      }
      const auto r = env.step(ctx, std::uniform_real_distribution<>(0, 1)(rng) < p_stop ? 1 : 0);
      if (r.done) break;
      s = *r.next_state;
    }
    EXPECT_GE(ctx.t, 15u);
    EXPECT_LE(ctx.t, 124u);
  }
}

TEST(Env, ReplayFromSerialisedContextIsExact) {
  std::vector<std::vector<se::Probs>> trajs;
  for (int i = 0; i < 5; ++i) trajs.push_back(random_trajectory(80, 200 + i));
  FixedSource src(trajs, {0, 1, 2, 0, 1});
  se::StopEnv env(src, se::RewardConfig{});
  std::mt19937_64 rng(3);
  int checked = 0;
  for (std::size_t clip = 0; clip < 5; ++clip) {
    se::EpisodeContext ctx;
    env.reset(ctx, clip);
    while (!ctx.done) {
      const int a = static_cast<int>(rng() % 8 == 0);
      const std::string snapshot = nlohmann::json(ctx).dump();
      const auto r = env.step(ctx, a);
      auto replay = nlohmann::json::parse(snapshot).get<se::EpisodeContext>();
      FixedSource fresh(trajs, {0, 1, 2, 0, 1});
      se::StopEnv env2(fresh, se::RewardConfig{});
      const auto r2 = env2.step(replay, a);
      ASSERT_EQ(r.next_state.has_value(), r2.next_state.has_value());
      if (r.next_state) {
        EXPECT_EQ(std::memcmp(r.next_state->v.data(), r2.next_state->v.data(), sizeof(double) * 12), 0);
      }
      EXPECT_EQ(r.reward, r2.reward);
      EXPECT_EQ(replay, ctx);
      ++checked;
    }
  }
  EXPECT_GT(checked, 75);
}

TEST(Env, ContextJsonRejectsInconsistentHistory) {
  FixedSource src({random_trajectory(20, 6)}, {0});
  se::StopEnv env(src, se::RewardConfig{});
  se::EpisodeContext ctx;
  env.reset(ctx, 0);
  auto j = nlohmann::json(ctx);
  j["t"] = 3;
  EXPECT_THROW(j.get<se::EpisodeContext>(), es::DataError);
}

TEST(Env, LabelFreeStateUsesAgreementRun) {
  // Predictions 1,1,0,0,0 against label 1.
  std::vector<se::Probs> tr = {{0.2, 0.7, 0.1}, {0.3, 0.6, 0.1}, {0.6, 0.3, 0.1}, {0.7, 0.2, 0.1}, {0.8, 0.1, 0.1}};
  FixedSource src({tr}, {1});
  auto cfg = se::RewardConfig{};
  cfg.t_min = 1;
  se::StopEnv with_labels(src, cfg), label_free(src, cfg, {.label_free_state = true});
  se::EpisodeContext a, b;
  with_labels.reset(a, 0);
  label_free.reset(b, 0);
  se::StepResult ra, rb;
  for (int i = 0; i < 4; ++i) {
    ra = with_labels.step(a, se::kContinue);
    rb = label_free.step(b, se::kContinue);
  }
  EXPECT_EQ((*ra.next_state)[se::StopState::Consecutive], 0.0);
  EXPECT_NEAR((*rb.next_state)[se::StopState::Consecutive], 0.3, 1e-12);
  // Rewards still count correct predictions either way.
  EXPECT_EQ(ra.reward, rb.reward);
  EXPECT_EQ(a.n_consec, b.n_consec);
}

TEST(Env, TraceRecordCarriesFullState) {
  FixedSource src({random_trajectory(20, 7)}, {0});
  se::StopEnv env(src, se::RewardConfig{});
  se::EpisodeContext ctx;
  const auto s = env.reset(ctx, 0);
  const auto r = env.step(ctx, se::kContinue);
  const auto rec = se::trace_record(ctx.clip_id, 1, s, se::kContinue, r);
  EXPECT_EQ(rec.at("state").size(), 12u);
  EXPECT_EQ(rec.at("state").get<se::StopState>(), s);
  EXPECT_EQ(rec.at("done"), false);
  EXPECT_EQ(rec.at("reward").get<double>(), r.reward);
}
