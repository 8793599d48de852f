#pragma once

#include <functional>
#include <vector>

#include "mdmo/nets.hpp"
#include "mdmo/rng.hpp"
#include "mdmo/schedule.hpp"
#include "mdmo/tensor.hpp"

namespace mdmo {

/// mu(x_next, t): N x (V-1) categorical rows over the non-mask vocabulary.
using DenoiserFn = std::function<Matrix(const Sequence& x_next, int t)>;
/// p(x_next, t): per-position reveal probabilities, zero off the mask.
using SelectorFn = std::function<ProbVector(const Sequence& x_next, int t)>;

/// Time index a network sees when the run uses `T_run` steps:
/// floor(t * T_net / T_run), or 0 without time conditioning.
int network_time(const Network& net, int t, int T_run);

/// Wraps a denoiser network for decoding with `T_run` steps. A network trained
/// with a different step count sees t mapped to floor(t * T_net / T_run).
DenoiserFn make_denoiser_fn(const Network& net, int T_run);
/// Wraps a selector network. Time-conditioned selectors require T_run to equal
/// the step count they were built with (kInvalidArgument otherwise).
SelectorFn make_selector_fn(const Network& net, int T_run);
/// forward_unmask_prob(sched, t) on every masked position.
SelectorFn fixed_forward_selector(const MaskSchedule& sched);
/// Constant probability on every masked position.
SelectorFn constant_selector(double p);

enum class PolicyMode { kLearnedSelector, kFixedForward, kExternalR };
enum class ValueDecoding { kSample, kGreedy };

struct ReverseStepPolicy {
  PolicyMode mode = PolicyMode::kLearnedSelector;
  bool force_unmask_final = true;
  ValueDecoding values = ValueDecoding::kSample;
  /// Used by kFixedForward.
  MaskSchedule schedule;
  /// Used by kExternalR; entries off the mask must be 0.
  UnmaskVector external_r;
};

struct ReverseStepResult {
  Sequence x;
  UnmaskVector r;
};

/// Draws r_t from the policy, then fills every revealed position from the
/// denoiser categorical. The selector is consulted only in learned mode.
ReverseStepResult reverse_step(const Sequence& x_next, int t, const DenoiserFn& denoiser, const SelectorFn& selector,
                               const ReverseStepPolicy& policy, Rng& rng);

/// Samples a value from one categorical row, or takes its argmax (lowest
/// index on ties). Returns a non-mask token id.
int draw_value(std::span<const double> row, ValueDecoding mode, Rng& rng);

/// log P(x_{0:T}, r_{0:T-1}) under the generative model. `states` holds
/// x_T .. x_0 and `decisions` r_{T-1} .. r_0. Returns -inf for structurally
/// valid paths with zero probability; throws kImpossibleTrajectory for
/// inconsistent ones.
double model_joint_log_prob(const std::vector<Sequence>& states, const std::vector<UnmaskVector>& decisions,
                            const DenoiserFn& denoiser, const SelectorFn& selector);

/// log Bern(r; p) with log 0 = -inf.
double bernoulli_log_mass(int r, double p);

}  // namespace mdmo
