#pragma once

#include <cmath>
#include <vector>

#include "earlystop/stopenv/env.hpp"

namespace earlystop::harness {

struct OptimalStop {
  std::size_t t = 0;
  double value = 0.0;              // discounted return of stopping at t
  std::vector<double> returns;     // returns[t-1] for every admissible t, NaN below t_min
};

// Exhaustive search over stop times for one clip: the discounted return of
// continuing until t and stopping there, for every t in [t_min, t_max].
// The earliest maximiser wins ties.
inline OptimalStop optimal_stop(stopenv::StopEnv& env, std::size_t clip, double gamma) {
  const auto& cfg = env.reward_config();
  stopenv::EpisodeContext ctx;
  env.reset(ctx, clip);
  const std::size_t T = ctx.t_max;
  const std::size_t t_lo = std::min(cfg.t_min, T);
  OptimalStop best;
  best.returns.assign(T, std::nan(""));
  double prefix = 0.0;  // sum_{s<t} gamma^{s-1} r_continue(s)
  double discount = 1.0;  // gamma^{t-1}
  bool found = false;
  for (std::size_t t = 1; t <= T; ++t) {
    const auto in = stopenv::reward_inputs(ctx);
    if (t >= t_lo) {
      const double g = prefix + discount * stopenv::compute_reward(in, stopenv::kStop, cfg);
      best.returns[t - 1] = g;
      if (!found || g > best.value) {
        best.value = g;
        best.t = t;
        found = true;
      }
    }
    if (t == T) break;
    prefix += discount * stopenv::compute_reward(in, stopenv::kContinue, cfg);
    discount *= gamma;
    ctx.advance(env.source().probs(clip, t + 1));
  }
  return best;
}

}  // namespace earlystop::harness
