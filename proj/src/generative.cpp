#include "mdmo/generative.hpp"

#include <cmath>
#include <string>

#include "mdmo/error.hpp"

namespace mdmo {

int network_time(const Network& net, int t, int T_run) {
  if (!net.config.time_conditioning) return 0;
  const long long mapped = static_cast<long long>(t) * net.config.num_timesteps / T_run;
  return static_cast<int>(mapped);
}

DenoiserFn make_denoiser_fn(const Network& net, int T_run) {
  require(T_run >= 1, "decoding step count must be >= 1");
  const Network* p = &net;
  return [p, T_run](const Sequence& x, int t) {
    require(t >= 0 && t < T_run, "denoiser time index out of range");
    return denoiser_forward(*p, x, network_time(*p, t, T_run)).probs;
  };
}

SelectorFn make_selector_fn(const Network& net, int T_run) {
  require(T_run >= 1, "decoding step count must be >= 1");
  if (net.config.time_conditioning && net.config.num_timesteps != T_run) {
    fail(ErrorCode::kInvalidArgument, "learned selector was built for T = " + std::to_string(net.config.num_timesteps) +
                                          " and cannot decode with T = " + std::to_string(T_run));
  }
  const Network* p = &net;
  return [p, T_run](const Sequence& x, int t) {
    require(t >= 0 && t < T_run, "selector time index out of range");
    return selector_forward(*p, x, p->config.time_conditioning ? t : 0);
  };
}

SelectorFn fixed_forward_selector(const MaskSchedule& sched) {
  return [sched](const Sequence& x, int t) {
    const double p = forward_unmask_prob(sched, t);
    ProbVector out(x.tokens.size(), 0.0);
    for (int n = 0; n < x.size(); ++n) {
      if (x.is_masked(n)) out[static_cast<std::size_t>(n)] = p;
    }
    return out;
  };
}

SelectorFn constant_selector(double p) {
  require(p >= 0.0 && p <= 1.0, "selector probability must lie in [0, 1]");
  return [p](const Sequence& x, int) {
    ProbVector out(x.tokens.size(), 0.0);
    for (int n = 0; n < x.size(); ++n) {
      if (x.is_masked(n)) out[static_cast<std::size_t>(n)] = p;
    }
    return out;
  };
}

int draw_value(std::span<const double> row, ValueDecoding mode, Rng& rng) {
  if (mode == ValueDecoding::kSample) return rng.categorical(row);
  int best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
  }
  return best;
}

ReverseStepResult reverse_step(const Sequence& x_next, int t, const DenoiserFn& denoiser, const SelectorFn& selector,
                               const ReverseStepPolicy& policy, Rng& rng) {
  require(t >= 0, "reverse_step time index must be >= 0");
  const auto n_pos = x_next.tokens.size();
  ReverseStepResult out{x_next, UnmaskVector(n_pos, 0)};
  if (x_next.mask_free()) return out;

  ProbVector p;
  switch (policy.mode) {
    case PolicyMode::kLearnedSelector:
      p = selector(x_next, t);
      break;
    case PolicyMode::kFixedForward: {
      const double f = forward_unmask_prob(policy.schedule, t);
      p.assign(n_pos, 0.0);
      for (int n = 0; n < x_next.size(); ++n) {
        if (x_next.is_masked(n)) p[static_cast<std::size_t>(n)] = f;
      }
      break;
    }
    case PolicyMode::kExternalR:
      require(policy.external_r.size() == n_pos, "external r-vector length mismatch");
      break;
  }
  const bool force = policy.force_unmask_final && t == 0;
  bool any = false;
  for (int n = 0; n < x_next.size(); ++n) {
    const auto i = static_cast<std::size_t>(n);
    if (!x_next.is_masked(n)) {
      if (policy.mode == PolicyMode::kExternalR && policy.external_r[i]) {
        fail(ErrorCode::kInvalidArgument, "external r reveals a position that is not masked");
      }
      continue;
    }
    int r;
    if (policy.mode == PolicyMode::kExternalR) {
      r = policy.external_r[i] ? 1 : 0;
    } else {
      r = rng.bernoulli(p[i]) ? 1 : 0;
    }
    if (force) r = 1;
    out.r[i] = r;
    any = any || r;
  }
  if (!any) return out;
  const Matrix mu = denoiser(x_next, t);
  for (int n = 0; n < x_next.size(); ++n) {
    if (out.r[static_cast<std::size_t>(n)]) out.x.tokens[static_cast<std::size_t>(n)] = draw_value(mu.row(n), policy.values, rng);
  }
  return out;
}

double bernoulli_log_mass(int r, double p) {
  if (r) return p > 0.0 ? std::log(p) : -INFINITY;
  return p < 1.0 ? std::log1p(-p) : -INFINITY;
}

double model_joint_log_prob(const std::vector<Sequence>& states, const std::vector<UnmaskVector>& decisions,
                            const DenoiserFn& denoiser, const SelectorFn& selector) {
  if (states.size() < 2 || decisions.size() + 1 != states.size()) {
    fail(ErrorCode::kImpossibleTrajectory, "path needs T + 1 states and T decision vectors");
  }
  const int T = static_cast<int>(decisions.size());
  if (!(states.front() == fully_masked(states.front()))) fail(ErrorCode::kImpossibleTrajectory, "x_T is not fully masked");
  double total = 0.0;
  for (int k = 0; k < T; ++k) {
    const int t = T - 1 - k;
    const Sequence& x_next = states[static_cast<std::size_t>(k)];
    const Sequence& x_t = states[static_cast<std::size_t>(k) + 1];
    const UnmaskVector& r = decisions[static_cast<std::size_t>(k)];
    if (x_t.size() != x_next.size() || r.size() != x_next.tokens.size()) {
      fail(ErrorCode::kImpossibleTrajectory, "path shapes are inconsistent");
    }
    bool any_masked = false;
    bool any_reveal = false;
    for (int n = 0; n < x_next.size(); ++n) {
      const auto i = static_cast<std::size_t>(n);
      if (!x_next.is_masked(n)) {
        if (r[i] || x_t.tokens[i] != x_next.tokens[i]) fail(ErrorCode::kImpossibleTrajectory, "unmasked position changed");
        continue;
      }
      any_masked = true;
      if (r[i]) {
        if (x_t.is_masked(n)) fail(ErrorCode::kImpossibleTrajectory, "revealed position still carries the mask");
        any_reveal = true;
      } else if (x_t.tokens[i] != x_next.tokens[i]) {
        fail(ErrorCode::kImpossibleTrajectory, "position changed without a reveal");
      }
    }
    if (!any_masked) continue;
    const ProbVector p = selector(x_next, t);
    Matrix mu;
    if (any_reveal) mu = denoiser(x_next, t);
    for (int n = 0; n < x_next.size(); ++n) {
      const auto i = static_cast<std::size_t>(n);
      if (!x_next.is_masked(n)) continue;
      total += bernoulli_log_mass(r[i], p[i]);
      if (r[i]) total += std::log(mu(n, x_t.tokens[i]));
    }
  }
  return total;
}

}  // namespace mdmo
