#pragma once

#include <span>
#include <vector>

#include "mdmo/rng.hpp"
#include "mdmo/schedule.hpp"
#include "mdmo/tensor.hpp"

namespace mdmo {

struct PosteriorConfig {
  double tau = 0.1;
};

void validate_posterior_config(const PosteriorConfig& cfg);

/// Partial reverse-time path x_T .. x_{t_star+1} drawn from the posterior,
/// with decisions r_{T-1} .. r_{t_star+1}. `states.size() == T - t_star` and
/// `decisions.size() == T - t_star - 1`.
struct TrajectorySample {
  int t_star = 0;
  std::vector<Sequence> states;
  std::vector<UnmaskVector> decisions;
  double log_q = 0.0;

  const Sequence& last() const { return states.back(); }
};

/// q_n = exp((alpha_n - max over masked alpha) / tau) on masked positions and
/// exactly 0 elsewhere. Throws kInvalidArgument when nothing is masked.
ProbVector posterior_unmask_probs(const ScoreVector& scores, const Sequence& x_next, const PosteriorConfig& cfg);

/// Samples the posterior path from the fully masked x_T down to x_{t_star+1}.
/// Scores come from a single pass of the score network on x0.
TrajectorySample sample_trajectory(const Sequence& x0, int T, int t_star, const ScoreVector& scores,
                                   const PosteriorConfig& cfg, Rng& rng);

/// Same path structure as above, but each masked position is revealed with
/// the fixed probability forward_unmask_prob(sched, s). This is the forward
/// process run in reverse time, i.e. the classical masked-diffusion posterior.
TrajectorySample sample_forward_trajectory(const Sequence& x0, const MaskSchedule& sched, int t_star, Rng& rng);

/// Exact log-probability of a trajectory under the score-based posterior.
/// Deterministic reveals (q == 1) contribute nothing. Throws
/// kImpossibleTrajectory for r = 0 where q = 1 and for malformed paths.
double trajectory_log_prob(const TrajectorySample& traj, const Sequence& x0, const ScoreVector& scores,
                           const PosteriorConfig& cfg);

/// Applies one step of reveals: positions with r = 1 take their x0 token.
Sequence apply_reveals(const Sequence& x_next, const UnmaskVector& r, const Sequence& x0);

/// Throws kImpossibleTrajectory unless the path starts fully masked and each
/// state follows from the previous one by revealing exactly the r = 1 positions.
void validate_trajectory(const TrajectorySample& traj, const Sequence& x0, int T);

/// Differentiable q on a tape: alpha is the n x 1 score column.
Var posterior_probs_var(Var alpha, std::span<const int> mask, double tau);

}  // namespace mdmo
