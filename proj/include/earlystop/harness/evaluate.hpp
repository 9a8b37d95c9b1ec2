#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "earlystop/bmcnn/evaluate.hpp"
#include "earlystop/harness/policy.hpp"
#include "earlystop/stopenv/env.hpp"

namespace earlystop::harness {

struct EvalSummary {
  std::string policy;
  std::size_t episodes = 0;
  std::size_t t_max = 0;
  double accuracy = 0.0;
  std::vector<std::optional<double>> recall;
  std::vector<std::vector<std::size_t>> confusion;
  double mean_stop = 0.0;
  double speedup = 1.0;  // t_max / mean_stop
  double reward_mean = 0.0;
  double reward_std = 0.0;
  double wall_seconds = 0.0;  // informational only
  std::vector<std::size_t> stop_times;

  nlohmann::json to_json(bool with_stop_times = false) const {
    bmcnn::Metrics m;
    m.recall = recall;
    m.confusion = confusion;
    auto metrics = bmcnn::to_json_value(m);
    nlohmann::json j = {{"policy", policy},           {"episodes", episodes},     {"t_max", t_max},
                        {"accuracy", accuracy},       {"recall", metrics["recall"]}, {"confusion", confusion},
                        {"mean_stop", mean_stop},     {"speedup", speedup},       {"reward_mean", reward_mean},
                        {"reward_std", reward_std}};
    if (with_stop_times) j["stop_times"] = stop_times;
    return j;
  }
};

// Greedy rollouts over clips [first, first + episodes) of the environment's
// source. Every clip must carry a label since accuracy is always reported.
inline EvalSummary evaluate_policy(const std::string& name, const Policy& policy, stopenv::StopEnv& env,
                                   std::size_t episodes, std::ostream* traces = nullptr, std::size_t first = 0) {
  if (episodes == 0) throw ConfigError("evaluation needs at least one episode");
  if (first + episodes > env.source().size()) throw ConfigError("evaluation asks for more episodes than the source holds");
  const auto start = std::chrono::steady_clock::now();
  EvalSummary s;
  s.policy = name;
  s.episodes = episodes;
  s.t_max = env.t_max();
  std::vector<int> labels, preds;
  std::vector<double> returns;
  double stop_sum = 0.0;
  for (std::size_t e = 0; e < episodes; ++e) {
    const std::size_t clip = first + e;
    if (!env.source().label(clip)) throw DataError("accuracy requested but clip '" + env.source().clip_id(clip) + "' has no label");
    stopenv::EpisodeContext ctx;
    auto state = env.reset(ctx, clip);
    double ret = 0.0;
    for (;;) {
      const std::size_t t = ctx.t;
      const int a = policy(state, ctx);
      const auto r = env.step(ctx, a);
      if (traces) stopenv::write_jsonl(*traces, stopenv::trace_record(ctx.clip_id, t, state, a, r));
      ret += r.reward;
      if (r.done) {
        preds.push_back(r.prediction);
        break;
      }
      state = *r.next_state;
    }
    labels.push_back(*ctx.label);
    s.stop_times.push_back(ctx.t);
    stop_sum += static_cast<double>(ctx.t);
    returns.push_back(ret);
  }
  const auto m = bmcnn::summarize(labels, preds, stopenv::kClasses);
  s.accuracy = m.accuracy;
  s.recall = m.recall;
  s.confusion = m.confusion;
  s.mean_stop = stop_sum / static_cast<double>(episodes);
  s.speedup = static_cast<double>(s.t_max) / s.mean_stop;
  double mean = 0.0;
  for (double r : returns) mean += r;
  mean /= static_cast<double>(returns.size());
  double var = 0.0;
  for (double r : returns) var += (r - mean) * (r - mean);
  s.reward_mean = mean;
  s.reward_std = std::sqrt(var / static_cast<double>(returns.size()));
  s.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return s;
}

struct ComparisonTable {
  std::vector<EvalSummary> rows;  // sorted: accuracy desc, then speedup desc

  static const std::vector<std::string>& columns() {
    static const std::vector<std::string> c{"policy", "accuracy", "mean_stop", "speedup", "episodes"};
    return c;
  }

  std::string csv() const {
    std::ostringstream out;
    out.precision(10);
    out << "policy,accuracy,mean_stop,speedup,episodes\n";
    for (const auto& r : rows) out << r.policy << ',' << r.accuracy << ',' << r.mean_stop << ',' << r.speedup << ',' << r.episodes << '\n';
    return out.str();
  }

  nlohmann::json json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) {
      arr.push_back({{"policy", r.policy}, {"accuracy", r.accuracy}, {"mean_stop", r.mean_stop}, {"speedup", r.speedup},
                     {"episodes", r.episodes}});
    }
    return {{"t_max", rows.empty() ? 0 : rows.front().t_max}, {"columns", columns()}, {"rows", arr}};
  }
};

inline ComparisonTable compare_report(std::vector<EvalSummary> summaries) {
  if (summaries.size() < 2) throw ConfigError("a comparison needs at least two summaries");
  for (const auto& s : summaries) {
    if (s.t_max != summaries.front().t_max) throw CompatibilityError("summaries were evaluated with different t_max");
  }
  std::stable_sort(summaries.begin(), summaries.end(), [](const EvalSummary& a, const EvalSummary& b) {
    if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
    return a.speedup > b.speedup;
  });
  return {std::move(summaries)};
}

// Sanity envelope: stopping at t_min bounds accuracy from below and running
// to t_max bounds stop time from above. Returns a description per violation.
inline std::vector<std::string> envelope_violations(const EvalSummary& learned, const EvalSummary& at_t_min,
                                                    const EvalSummary& at_t_max) {
  std::vector<std::string> out;
  if (learned.accuracy < at_t_min.accuracy) out.push_back(learned.policy + " is less accurate than stopping at t_min");
  if (learned.mean_stop > at_t_max.mean_stop) out.push_back(learned.policy + " stops later than running to t_max");
  return out;
}

}  // namespace earlystop::harness
