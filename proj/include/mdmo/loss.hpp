#pragma once

#include <vector>

#include "mdmo/nets.hpp"
#include "mdmo/posterior.hpp"
#include "mdmo/rng.hpp"
#include "mdmo/schedule.hpp"
#include "mdmo/tensor.hpp"

namespace mdmo {

/// kUnbiasedT scales the single-step estimate by T; kPaperLiteral uses T - 1.
/// Both draw t uniformly from {0, ..., T-1}.
enum class ScaleMode { kUnbiasedT, kPaperLiteral };
/// kLearned is the score-based posterior; kForward reveals each mask with
/// forward_unmask_prob, independent of any network.
enum class PosteriorKind { kLearned, kForward };
/// kLearned uses the selector network; kForward pins p to forward_unmask_prob.
enum class SelectorKind { kLearned, kForward };

struct DiffusionConfig {
  MaskSchedule schedule;
  PosteriorConfig posterior;
  ScaleMode scale_mode = ScaleMode::kUnbiasedT;
  PosteriorKind posterior_kind = PosteriorKind::kLearned;
  SelectorKind selector_kind = SelectorKind::kLearned;
  /// Floor applied to denoiser probabilities inside the log.
  double log_floor = 1e-12;

  int T() const { return schedule.T; }
};

double scale_factor(const DiffusionConfig& cfg);

struct LossTerms {
  double f1 = 0.0;
  double f2 = 0.0;
  double f = 0.0;
  int t = 0;
  int k_index = 0;
};

/// KL(Bern(q) || Bern(p)) with 0 log 0 = 0. Throws kInfiniteKl when p is 0 or
/// 1 and q puts mass where p has none.
double bernoulli_kl(double q, double p);

/// f1 = sum over masked n of q_n log mu_n[x0_n]; f2 = -sum over masked n of
/// KL(q_n || p_n). `mu` is N x (V-1).
LossTerms local_loss(const Sequence& x_next, const Sequence& x0, const ProbVector& q_probs, const ProbVector& p_probs,
                     const Matrix& mu, int t, double log_floor = 1e-12);

/// Posterior reveal probabilities used by the loss at step t. At t = 0 every
/// remaining mask is revealed with probability 1, since x_0 must equal the
/// data; for t >= 1 they follow the configured posterior.
ProbVector loss_posterior_probs(const DiffusionConfig& cfg, const ScoreVector& scores, const Sequence& x_next, int t);
/// Selector reveal probabilities used by the loss at step t.
ProbVector loss_selector_probs(const DiffusionConfig& cfg, const Model& model, const Sequence& x_next, int t);

/// Draws the posterior path down to x_{t+1} for the configured posterior.
TrajectorySample sample_posterior_path(const DiffusionConfig& cfg, const Sequence& x0, const ScoreVector& scores, int t,
                                       Rng& rng);

// Tape building blocks, shared by the estimators and the enumeration oracle.

/// alpha(x0) as an n x 1 column of sigmoid scores.
Var score_column(Tape& tape, const Model& model, const Sequence& x0);
/// F = f1 + f2 at state x_next for step t. `terms` receives the values.
Var step_objective(Tape& tape, const Model& model, const DiffusionConfig& cfg, const Sequence& x0, Var alpha,
                   const Sequence& x_next, int t, LossTerms* terms);
/// log Q of the path's decisions under the score-based posterior.
Var trajectory_log_q(Tape& tape, Var alpha, const TrajectorySample& traj, double tau);

struct ElboEstimate {
  double value = 0.0;
  int t = 0;
  std::vector<LossTerms> terms;
};

/// Draws t, then k posterior paths sharing it, and returns scale * mean F.
ElboEstimate elbo_estimate(const Sequence& x0, const Model& model, const DiffusionConfig& cfg, int k, Rng& rng);

struct GradOptions {
  bool theta = true;
  bool psi = true;
  bool phi = true;
  /// Leave-one-out baseline for the score-function term; without it the
  /// weights are the raw F values.
  bool rloo_baseline = true;
};

/// All components are gradients of the ELBO estimate (ascent direction) and
/// include the scale factor. Components for untracked networks are zero.
struct GradEstimate {
  ParamVector grad_theta;
  ParamVector grad_psi;
  ParamVector grad_phi_pathwise;
  ParamVector grad_phi_rloo;
  int k = 0;
  int t = 0;
  double elbo = 0.0;
  std::vector<LossTerms> terms;
};

/// Requires k >= 2 whenever the score-function term is needed (learned
/// posterior with phi tracked).
GradEstimate grad_step(const Sequence& x0, const Model& model, const DiffusionConfig& cfg, int k, Rng& rng,
                       const GradOptions& opts = {});

/// The estimator's two objectives on fixed paths sharing step t:
/// j1 = scale * mean F and j2 = scale * mean w_i log Q(path_i) with constant
/// weights. Gradients cover every learnable network; phi_score is the
/// gradient of j2 and stays zero without a learned posterior.
struct FixedPathObjective {
  double j1 = 0.0;
  double j2 = 0.0;
  ParamVector theta;
  ParamVector psi;
  ParamVector phi_pathwise;
  ParamVector phi_score;
};

FixedPathObjective fixed_path_objective(const Sequence& x0, const Model& model, const DiffusionConfig& cfg, int t,
                                        const std::vector<TrajectorySample>& paths, const std::vector<double>& weights);

/// Leave-one-out weights F_i - mean_{l != i} F_l. Identical F give exact zeros.
std::vector<double> rloo_weights(const std::vector<double>& f);

}  // namespace mdmo
