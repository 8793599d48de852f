#include "mdmo/loss.hpp"

#include <cmath>

#include "mdmo/error.hpp"
#include "mdmo/generative.hpp"

namespace mdmo {

double scale_factor(const DiffusionConfig& cfg) {
  return cfg.scale_mode == ScaleMode::kUnbiasedT ? static_cast<double>(cfg.T()) : static_cast<double>(cfg.T() - 1);
}

double bernoulli_kl(double q, double p) {
  require(q >= 0.0 && q <= 1.0, "bernoulli_kl: q outside [0, 1]");
  require(p >= 0.0 && p <= 1.0, "bernoulli_kl: p outside [0, 1]");
  double kl = 0.0;
  if (q > 0.0) {
    if (p == 0.0) fail(ErrorCode::kInfiniteKl, "KL infinite: q > 0 with p = 0");
    kl += q * (std::log(q) - std::log(p));
  }
  if (q < 1.0) {
    if (p == 1.0) fail(ErrorCode::kInfiniteKl, "KL infinite: q < 1 with p = 1");
    kl += (1.0 - q) * (std::log1p(-q) - std::log1p(-p));
  }
  return kl;
}

LossTerms local_loss(const Sequence& x_next, const Sequence& x0, const ProbVector& q_probs, const ProbVector& p_probs,
                     const Matrix& mu, int t, double log_floor) {
  require(q_probs.size() == x_next.tokens.size() && p_probs.size() == x_next.tokens.size(),
          "local_loss: probability vectors must match the sequence length");
  require(mu.rows == x_next.size(), "local_loss: denoiser rows must match the sequence length");
  LossTerms terms;
  terms.t = t;
  double kl = 0.0;
  for (int n = 0; n < x_next.size(); ++n) {
    const auto i = static_cast<std::size_t>(n);
    if (!x_next.is_masked(n)) {
      if (q_probs[i] != 0.0 || p_probs[i] != 0.0) {
        fail(ErrorCode::kContractViolation, "local_loss: probabilities must be gated by the mask");
      }
      continue;
    }
    const double m = mu(n, x0.tokens[i]);
    if (!(m > 0.0) && log_floor <= 0.0) fail(ErrorCode::kNumericFailure, "denoiser probability 0 at a data token");
    const double log_m = log_floor > 0.0 ? std::max(std::log(m), std::log(log_floor)) : std::log(m);
    terms.f1 += q_probs[i] * log_m;
    kl += bernoulli_kl(q_probs[i], p_probs[i]);
  }
  terms.f2 = -kl;
  terms.f = terms.f1 + terms.f2;
  return terms;
}

ProbVector loss_posterior_probs(const DiffusionConfig& cfg, const ScoreVector& scores, const Sequence& x_next, int t) {
  require(t >= 0 && t < cfg.T(), "posterior step out of range");
  ProbVector q(x_next.tokens.size(), 0.0);
  if (x_next.mask_free()) return q;
  if (t == 0 || cfg.posterior_kind == PosteriorKind::kForward) {
    const double p = t == 0 ? 1.0 : forward_unmask_prob(cfg.schedule, t);
    for (int n = 0; n < x_next.size(); ++n) {
      if (x_next.is_masked(n)) q[static_cast<std::size_t>(n)] = p;
    }
    return q;
  }
  return posterior_unmask_probs(scores, x_next, cfg.posterior);
}

ProbVector loss_selector_probs(const DiffusionConfig& cfg, const Model& model, const Sequence& x_next, int t) {
  require(t >= 0 && t < cfg.T(), "selector step out of range");
  if (cfg.selector_kind == SelectorKind::kForward) return fixed_forward_selector(cfg.schedule)(x_next, t);
  return selector_forward(model.selector, x_next, network_time(model.selector, t, cfg.T()));
}

TrajectorySample sample_posterior_path(const DiffusionConfig& cfg, const Sequence& x0, const ScoreVector& scores, int t,
                                       Rng& rng) {
  if (cfg.posterior_kind == PosteriorKind::kForward) return sample_forward_trajectory(x0, cfg.schedule, t, rng);
  return sample_trajectory(x0, cfg.T(), t, scores, cfg.posterior, rng);
}

Var score_column(Tape& tape, const Model& model, const Sequence& x0) {
  return ops::sigmoid(score_logits(tape, model.score, x0.tokens));
}

Var step_objective(Tape& tape, const Model& model, const DiffusionConfig& cfg, const Sequence& x0, Var alpha,
                   const Sequence& x_next, int t, LossTerms* terms) {
  require(t >= 0 && t < cfg.T(), "objective step out of range");
  if (terms) *terms = LossTerms{0.0, 0.0, 0.0, t, terms->k_index};
  const std::vector<int> mask = x_next.mask_indicator();
  const int n = x_next.size();
  Matrix gate(n, 1);
  int masked = 0;
  for (int i = 0; i < n; ++i) {
    gate.data[static_cast<std::size_t>(i)] = mask[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    masked += mask[static_cast<std::size_t>(i)];
  }
  if (masked == 0) return tape.scalar_constant(0.0);

  Var q;
  if (t == 0) {
    q = tape.constant(gate);
  } else if (cfg.posterior_kind == PosteriorKind::kForward) {
    Matrix c = gate;
    const double p = forward_unmask_prob(cfg.schedule, t);
    for (double& v : c.data) v *= p;
    q = tape.constant(std::move(c));
  } else {
    q = posterior_probs_var(alpha, mask, cfg.posterior.tau);
  }

  const int T = cfg.T();
  Var log_mu = denoiser_log_probs(tape, model.denoiser, x_next.tokens, network_time(model.denoiser, t, T));
  Var picked = ops::clamp_min(ops::pick(log_mu, x0.tokens), std::log(cfg.log_floor));
  Var f1 = ops::weighted_sum(ops::mul(q, picked), gate);

  Var log_p, log_1mp;
  if (cfg.selector_kind == SelectorKind::kLearned) {
    Var z = selector_logits(tape, model.selector, x_next.tokens, network_time(model.selector, t, T));
    log_p = ops::log_sigmoid(z);
    log_1mp = ops::log_sigmoid(ops::negate(z));
  } else {
    const double p = forward_unmask_prob(cfg.schedule, t);
    log_p = tape.constant(Matrix(n, 1, std::log(p)));
    log_1mp = tape.constant(Matrix(n, 1, std::log1p(-p)));
  }
  Var f2 = ops::negate(ops::bernoulli_kl_sum(q, log_p, log_1mp, mask));
  Var f = ops::add(f1, f2);
  if (terms) {
    terms->f1 = f1.scalar();
    terms->f2 = f2.scalar();
    terms->f = f.scalar();
  }
  if (!std::isfinite(f.scalar())) fail(ErrorCode::kNumericFailure, "non-finite objective at step " + std::to_string(t));
  return f;
}

Var trajectory_log_q(Tape& tape, Var alpha, const TrajectorySample& traj, double tau) {
  Var total = tape.scalar_constant(0.0);
  for (std::size_t s = 0; s < traj.decisions.size(); ++s) {
    const Sequence& x_next = traj.states[s];
    if (x_next.mask_free()) continue;
    const std::vector<int> mask = x_next.mask_indicator();
    Var q = posterior_probs_var(alpha, mask, tau);
    total = ops::add(total, ops::bernoulli_log_mass_sum(q, traj.decisions[s], mask));
  }
  return total;
}

std::vector<double> rloo_weights(const std::vector<double>& f) {
  const std::size_t k = f.size();
  require(k >= 2, "leave-one-out baseline needs k >= 2");
  std::vector<double> w(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    double acc = 0.0;
    for (std::size_t l = 0; l < k; ++l) {
      if (l != i) acc += f[i] - f[l];
    }
    w[i] = acc / static_cast<double>(k - 1);
  }
  return w;
}

namespace {

struct SampleSet {
  int t = 0;
  Var alpha;
  std::vector<Var> f;
  std::vector<TrajectorySample> trajs;
  std::vector<LossTerms> terms;
};

SampleSet draw_samples(Tape& tape, const Sequence& x0, const Model& model, const DiffusionConfig& cfg, int k, Rng& rng) {
  require(k >= 1, "sample count k must be >= 1");
  require(cfg.T() >= 1, "schedule must have T >= 1");
  SampleSet set;
  set.t = rng.uniform_int(cfg.T());
  ScoreVector scores;
  if (cfg.posterior_kind == PosteriorKind::kLearned) {
    set.alpha = score_column(tape, model, x0);
    scores = set.alpha.value().data;
  }
  for (int i = 0; i < k; ++i) {
    set.trajs.push_back(sample_posterior_path(cfg, x0, scores, set.t, rng));
    LossTerms terms;
    terms.k_index = i;
    set.f.push_back(step_objective(tape, model, cfg, x0, set.alpha, set.trajs.back().last(), set.t, &terms));
    set.terms.push_back(terms);
  }
  return set;
}

Var mean_scaled(const std::vector<Var>& vars, double factor) {
  Var total = vars.front();
  for (std::size_t i = 1; i < vars.size(); ++i) total = ops::add(total, vars[i]);
  return ops::scale(total, factor / static_cast<double>(vars.size()));
}

}  // namespace

ElboEstimate elbo_estimate(const Sequence& x0, const Model& model, const DiffusionConfig& cfg, int k, Rng& rng) {
  Tape tape;
  SampleSet set = draw_samples(tape, x0, model, cfg, k, rng);
  ElboEstimate out;
  out.t = set.t;
  out.value = mean_scaled(set.f, scale_factor(cfg)).scalar();
  out.terms = std::move(set.terms);
  return out;
}

GradEstimate grad_step(const Sequence& x0, const Model& model, const DiffusionConfig& cfg, int k, Rng& rng,
                       const GradOptions& opts) {
  const bool learned = cfg.posterior_kind == PosteriorKind::kLearned;
  const bool phi = opts.phi && learned;
  if (phi && k < 2) fail(ErrorCode::kInvalidArgument, "k must be >= 2 for the leave-one-out estimator");
  Tape tape;
  if (opts.theta) tape.track(model.denoiser.params);
  if (opts.psi && cfg.selector_kind == SelectorKind::kLearned) tape.track(model.selector.params);
  if (phi) tape.track(model.score.params);

  SampleSet set = draw_samples(tape, x0, model, cfg, k, rng);
  const double sf = scale_factor(cfg);
  GradEstimate out;
  out.k = k;
  out.t = set.t;
  Var j1 = mean_scaled(set.f, sf);
  out.elbo = j1.scalar();
  tape.backward(j1);
  out.grad_theta = tape.gradient(model.denoiser.params);
  out.grad_psi = tape.gradient(model.selector.params);
  out.grad_phi_pathwise = tape.gradient(model.score.params);
  out.grad_phi_rloo = model.score.params.zeros_like();
  if (phi) {
    std::vector<double> f(set.f.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = set.f[i].scalar();
    const std::vector<double> w = opts.rloo_baseline ? rloo_weights(f) : f;
    std::vector<Var> weighted;
    for (std::size_t i = 0; i < f.size(); ++i) {
      weighted.push_back(ops::scale(trajectory_log_q(tape, set.alpha, set.trajs[i], cfg.posterior.tau), w[i]));
    }
    tape.backward(mean_scaled(weighted, sf));
    out.grad_phi_rloo = tape.gradient(model.score.params);
  }
  out.terms = std::move(set.terms);
  return out;
}

FixedPathObjective fixed_path_objective(const Sequence& x0, const Model& model, const DiffusionConfig& cfg, int t,
                                        const std::vector<TrajectorySample>& paths, const std::vector<double>& weights) {
  require(!paths.empty(), "fixed_path_objective needs at least one path");
  require(weights.size() == paths.size(), "one weight per path is required");
  const bool learned = cfg.posterior_kind == PosteriorKind::kLearned;
  Tape tape;
  tape.track(model.denoiser.params);
  if (cfg.selector_kind == SelectorKind::kLearned) tape.track(model.selector.params);
  if (learned) tape.track(model.score.params);
  Var alpha;
  if (learned) alpha = score_column(tape, model, x0);
  std::vector<Var> f;
  for (const TrajectorySample& path : paths) {
    if (path.t_star != t) fail(ErrorCode::kInvalidArgument, "paths must end at step t");
    f.push_back(step_objective(tape, model, cfg, x0, alpha, path.last(), t, nullptr));
  }
  const double sf = scale_factor(cfg);
  FixedPathObjective out;
  Var j1 = mean_scaled(f, sf);
  out.j1 = j1.scalar();
  tape.backward(j1);
  out.theta = tape.gradient(model.denoiser.params);
  out.psi = tape.gradient(model.selector.params);
  out.phi_pathwise = tape.gradient(model.score.params);
  out.phi_score = model.score.params.zeros_like();
  if (learned) {
    std::vector<Var> weighted;
    for (std::size_t i = 0; i < paths.size(); ++i) {
      weighted.push_back(ops::scale(trajectory_log_q(tape, alpha, paths[i], cfg.posterior.tau), weights[i]));
    }
    Var j2 = mean_scaled(weighted, sf);
    out.j2 = j2.scalar();
    tape.backward(j2);
    out.phi_score = tape.gradient(model.score.params);
  }
  return out;
}

}  // namespace mdmo
