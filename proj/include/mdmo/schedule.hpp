#pragma once

#include <vector>

#include "mdmo/rng.hpp"

namespace mdmo {

/// Per-position probabilities, gated to zero at positions that are not masked.
using ProbVector = std::vector<double>;
/// Per-position order scores in [0, 1].
using ScoreVector = std::vector<double>;
/// Per-position 0/1 reveal decisions.
using UnmaskVector = std::vector<int>;

/// Token sequence over {0..mask_id}; mask_id is the mask token. The first
/// `prompt_len` positions form a conditioning prefix that is never masked.
struct Sequence {
  std::vector<int> tokens;
  int mask_id = 0;
  int prompt_len = 0;

  int size() const { return static_cast<int>(tokens.size()); }
  bool is_masked(int n) const { return tokens[static_cast<std::size_t>(n)] == mask_id; }
  int count_masked() const;
  bool mask_free() const { return count_masked() == 0; }
  /// 0/1 indicator of masked positions.
  std::vector<int> mask_indicator() const;

  bool operator==(const Sequence&) const = default;
};

/// Copy of `x0` with every position after the prompt replaced by the mask.
Sequence fully_masked(const Sequence& x0);

/// Throws kValidation unless tokens are in range and the prompt is mask-free.
void validate_sequence(const Sequence& x);

/// Discretised masking schedule: alpha[j] is the keep probability at grid
/// time j / T, with alpha[0] = 1, alpha[T] = 0 and strictly decreasing values.
struct MaskSchedule {
  int T = 0;
  std::vector<double> alpha;

  double at(int j) const { return alpha[static_cast<std::size_t>(j)]; }
};

/// Validates the schedule invariants; throws kInvalidArgument otherwise.
MaskSchedule make_schedule(std::vector<double> alpha);
MaskSchedule make_linear_schedule(int T);

/// alpha_t / alpha_s, the probability that a token survives from s to t.
double keep_prob(const MaskSchedule& sched, int s, int t);

/// Samples x_t ~ q(x_t | x_0) independently per diffused position.
Sequence forward_corrupt(const Sequence& x0, int t, const MaskSchedule& sched, Rng& rng);

/// Reverse-time categorical q(x_{t-1} | x_t, x_0) on {x0_token, mask}.
struct ReverseCategorical {
  double p_token = 0.0;
  double p_mask = 0.0;
};

ReverseCategorical reverse_cond_prob(const MaskSchedule& sched, int t, int x_t_token, int x0_token, int mask_id);

/// (alpha_t - alpha_{t+1}) / (1 - alpha_{t+1}): the probability that a masked
/// position is revealed on the step from t+1 to t.
double forward_unmask_prob(const MaskSchedule& sched, int t);

}  // namespace mdmo
