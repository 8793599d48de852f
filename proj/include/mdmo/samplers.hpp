#pragma once

#include <string>
#include <vector>

#include "mdmo/generative.hpp"
#include "mdmo/rng.hpp"
#include "mdmo/schedule.hpp"

namespace mdmo {

struct DecodeResult {
  Sequence output;
  /// Denoiser passes, one per decoding step.
  int steps_used = 0;
  std::vector<int> per_step_unmask_counts;
  /// Decoding step (0-based) at which each position was revealed; -1 for
  /// positions that were never masked.
  std::vector<int> reveal_step;
};

struct UnmaskBudget {
  std::vector<int> counts;
};

/// counts[s] = floor(n (s+1) / T) - floor(n s / T).
UnmaskBudget linear_unmask_counts(int n_masked, int T);

DecodeResult sample_iid(const Sequence& prompted_x, int T, const DenoiserFn& denoiser, Rng& rng,
                        ValueDecoding values = ValueDecoding::kSample);
DecodeResult sample_top_prob(const Sequence& prompted_x, int T, const DenoiserFn& denoiser, Rng& rng,
                             ValueDecoding values = ValueDecoding::kSample);
DecodeResult sample_top_prob_margin(const Sequence& prompted_x, int T, const DenoiserFn& denoiser, Rng& rng,
                                    ValueDecoding values = ValueDecoding::kSample);
DecodeResult sample_learned(const Sequence& prompted_x, int T, const DenoiserFn& denoiser, const SelectorFn& selector,
                            Rng& rng, ValueDecoding values = ValueDecoding::kSample);

/// Positions to reveal this step: the `k` masked positions with the largest
/// key, lowest index first on ties.
std::vector<int> select_top_k(const std::vector<double>& keys, const Sequence& x, int k);
/// max_j mu(n, j) per position.
std::vector<double> top_prob_keys(const Matrix& mu);
/// mu(n, j1) - mu(n, j2) for the two largest entries per position.
std::vector<double> top_margin_keys(const Matrix& mu);

enum class Strategy { kIid, kTopProb, kTopProbMargin, kLearned };

const char* strategy_name(Strategy s);
/// Throws kInvalidArgument listing the valid names.
Strategy parse_strategy(const std::string& name);
std::string valid_strategy_names();

struct EvalMetrics {
  double exact_match = 0.0;
  double token_acc = 0.0;
  double avg_steps = 0.0;
  int min_steps = 0;
  int max_steps = 0;
  int n_examples = 0;
};

/// Exact match and token accuracy over the completion region.
EvalMetrics evaluate(const std::vector<DecodeResult>& decoded, const std::vector<Sequence>& references);

/// Pairs (j, j + L/2) of the completion region of length L.
std::vector<std::pair<int, int>> completion_pairs(int seq_len, int prompt_len);
/// Fraction of pairs whose members were revealed in the same step.
double co_unmask_rate(const std::vector<DecodeResult>& decoded, int prompt_len);
/// Fraction of pairs whose members carry the same token.
double pair_consistency(const std::vector<DecodeResult>& decoded, int prompt_len);

}  // namespace mdmo
