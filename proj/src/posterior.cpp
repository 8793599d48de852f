#include "mdmo/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mdmo/error.hpp"

namespace mdmo {

namespace {

double masked_max_score(const ScoreVector& scores, const Sequence& x) {
  double best = -INFINITY;
  bool any = false;
  for (int n = 0; n < x.size(); ++n) {
    if (!x.is_masked(n)) continue;
    best = any ? std::max(best, scores[static_cast<std::size_t>(n)]) : scores[static_cast<std::size_t>(n)];
    any = true;
  }
  if (!any) fail(ErrorCode::kInvalidArgument, "posterior probabilities requested with no masked positions");
  return best;
}

void fill_probs(const ScoreVector& scores, const Sequence& x, double max_score, double inv_tau, ProbVector& q) {
  q.assign(static_cast<std::size_t>(x.size()), 0.0);
  for (int n = 0; n < x.size(); ++n) {
    if (x.is_masked(n)) q[static_cast<std::size_t>(n)] = std::exp((scores[static_cast<std::size_t>(n)] - max_score) * inv_tau);
  }
}

double step_log_mass(const ProbVector& q, const UnmaskVector& r, const Sequence& x_next) {
  double total = 0.0;
  for (int n = 0; n < x_next.size(); ++n) {
    const auto i = static_cast<std::size_t>(n);
    if (!x_next.is_masked(n)) continue;
    if (q[i] == 1.0) {
      if (!r[i]) fail(ErrorCode::kImpossibleTrajectory, "r = 0 at a position with q = 1");
      continue;
    }
    if (r[i]) {
      if (q[i] <= 0.0) fail(ErrorCode::kImpossibleTrajectory, "r = 1 at a position with q = 0");
      total += std::log(q[i]);
    } else {
      total += std::log1p(-q[i]);
    }
  }
  return total;
}

void check_scores(const ScoreVector& scores, const Sequence& x0) {
  require(static_cast<int>(scores.size()) == x0.size(), "score vector length does not match the sequence");
}

}  // namespace

void validate_posterior_config(const PosteriorConfig& cfg) {
  require(cfg.tau > 0.0 && std::isfinite(cfg.tau), "tau must be positive");
}

ProbVector posterior_unmask_probs(const ScoreVector& scores, const Sequence& x_next, const PosteriorConfig& cfg) {
  validate_posterior_config(cfg);
  check_scores(scores, x_next);
  ProbVector q;
  fill_probs(scores, x_next, masked_max_score(scores, x_next), 1.0 / cfg.tau, q);
  return q;
}

Sequence apply_reveals(const Sequence& x_next, const UnmaskVector& r, const Sequence& x0) {
  Sequence x = x_next;
  for (int n = 0; n < x.size(); ++n) {
    if (r[static_cast<std::size_t>(n)]) x.tokens[static_cast<std::size_t>(n)] = x0.tokens[static_cast<std::size_t>(n)];
  }
  return x;
}

TrajectorySample sample_trajectory(const Sequence& x0, int T, int t_star, const ScoreVector& scores,
                                   const PosteriorConfig& cfg, Rng& rng) {
  validate_posterior_config(cfg);
  require(t_star >= 0 && t_star < T, "t_star must lie in [0, T-1]");
  check_scores(scores, x0);
  const double inv_tau = 1.0 / cfg.tau;

  // Positions in descending score order; the masked max is the first entry
  // still masked, so the pointer only moves forward.
  std::vector<int> order(static_cast<std::size_t>(x0.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  std::size_t head = 0;

  TrajectorySample traj;
  traj.t_star = t_star;
  traj.states.reserve(static_cast<std::size_t>(T - t_star));
  traj.states.push_back(fully_masked(x0));
  ProbVector q;
  for (int s = T - 1; s > t_star; --s) {
    const Sequence& x_next = traj.states.back();
    while (head < order.size() && !x_next.is_masked(order[head])) ++head;
    UnmaskVector r(static_cast<std::size_t>(x0.size()), 0);
    if (head == order.size()) {
      traj.decisions.push_back(r);
      traj.states.push_back(x_next);
      continue;
    }
    fill_probs(scores, x_next, scores[static_cast<std::size_t>(order[head])], inv_tau, q);
    for (int n = 0; n < x0.size(); ++n) {
      const auto i = static_cast<std::size_t>(n);
      if (!x_next.is_masked(n)) continue;
      r[i] = q[i] == 1.0 ? 1 : (rng.bernoulli(q[i]) ? 1 : 0);
    }
    traj.log_q += step_log_mass(q, r, x_next);
    traj.states.push_back(apply_reveals(x_next, r, x0));
    traj.decisions.push_back(std::move(r));
  }
  return traj;
}

TrajectorySample sample_forward_trajectory(const Sequence& x0, const MaskSchedule& sched, int t_star, Rng& rng) {
  require(t_star >= 0 && t_star < sched.T, "t_star must lie in [0, T-1]");
  TrajectorySample traj;
  traj.t_star = t_star;
  traj.states.push_back(fully_masked(x0));
  for (int s = sched.T - 1; s > t_star; --s) {
    const Sequence& x_next = traj.states.back();
    const double p = forward_unmask_prob(sched, s);
    UnmaskVector r(static_cast<std::size_t>(x0.size()), 0);
    for (int n = 0; n < x0.size(); ++n) {
      if (!x_next.is_masked(n)) continue;
      const bool reveal = rng.bernoulli(p);
      r[static_cast<std::size_t>(n)] = reveal ? 1 : 0;
      traj.log_q += reveal ? std::log(p) : std::log1p(-p);
    }
    traj.states.push_back(apply_reveals(x_next, r, x0));
    traj.decisions.push_back(std::move(r));
  }
  return traj;
}

void validate_trajectory(const TrajectorySample& traj, const Sequence& x0, int T) {
  if (traj.t_star < 0 || traj.t_star >= T) fail(ErrorCode::kImpossibleTrajectory, "t_star out of range");
  if (traj.states.size() != static_cast<std::size_t>(T - traj.t_star) ||
      traj.decisions.size() + 1 != traj.states.size()) {
    fail(ErrorCode::kImpossibleTrajectory, "trajectory length does not match t_star");
  }
  if (!(traj.states.front() == fully_masked(x0))) fail(ErrorCode::kImpossibleTrajectory, "x_T is not fully masked");
  for (std::size_t s = 0; s < traj.decisions.size(); ++s) {
    const Sequence& from = traj.states[s];
    const UnmaskVector& r = traj.decisions[s];
    if (r.size() != from.tokens.size()) fail(ErrorCode::kImpossibleTrajectory, "decision vector length mismatch");
    for (int n = 0; n < from.size(); ++n) {
      if (r[static_cast<std::size_t>(n)] && !from.is_masked(n)) {
        fail(ErrorCode::kImpossibleTrajectory, "reveal at a position that is not masked");
      }
    }
    if (!(traj.states[s + 1] == apply_reveals(from, r, x0))) {
      fail(ErrorCode::kImpossibleTrajectory, "state does not follow from its decisions");
    }
  }
}

double trajectory_log_prob(const TrajectorySample& traj, const Sequence& x0, const ScoreVector& scores,
                           const PosteriorConfig& cfg) {
  validate_posterior_config(cfg);
  check_scores(scores, x0);
  const int T = traj.t_star + static_cast<int>(traj.states.size());
  validate_trajectory(traj, x0, T);
  double total = 0.0;
  ProbVector q;
  for (std::size_t s = 0; s < traj.decisions.size(); ++s) {
    const Sequence& x_next = traj.states[s];
    if (x_next.mask_free()) continue;
    fill_probs(scores, x_next, masked_max_score(scores, x_next), 1.0 / cfg.tau, q);
    total += step_log_mass(q, traj.decisions[s], x_next);
  }
  return total;
}

Var posterior_probs_var(Var alpha, std::span<const int> mask, double tau) {
  Matrix gate(static_cast<int>(mask.size()), 1);
  for (std::size_t i = 0; i < mask.size(); ++i) gate.data[i] = mask[i] ? 1.0 : 0.0;
  // Gate before exp so unmasked positions never overflow.
  Var d = ops::mul_const(ops::sub_broadcast(alpha, ops::masked_max(alpha, mask)), gate);
  return ops::mul_const(ops::exp(ops::scale(d, 1.0 / tau)), gate);
}

}  // namespace mdmo
