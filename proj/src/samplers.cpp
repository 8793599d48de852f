#include "mdmo/samplers.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "mdmo/error.hpp"

namespace mdmo {

namespace {

void check_prompted(const Sequence& x, int T) {
  require(T >= 1, "decoding needs T >= 1");
  for (int n = 0; n < x.prompt_len; ++n) {
    if (x.is_masked(n)) fail(ErrorCode::kInvalidArgument, "prompt region contains the mask token");
  }
}

DecodeResult start(const Sequence& x) {
  DecodeResult res;
  res.output = x;
  res.reveal_step.assign(x.tokens.size(), -1);
  return res;
}

// Reveals `positions` with values drawn from mu, recording the step.
void reveal(DecodeResult& res, const std::vector<int>& positions, const Matrix& mu, ValueDecoding values, Rng& rng) {
  for (int n : positions) {
    res.output.tokens[static_cast<std::size_t>(n)] = draw_value(mu.row(n), values, rng);
    res.reveal_step[static_cast<std::size_t>(n)] = res.steps_used;
  }
  res.per_step_unmask_counts.push_back(static_cast<int>(positions.size()));
  ++res.steps_used;
}

DecodeResult sample_top_k(const Sequence& prompted_x, int T, const DenoiserFn& denoiser, Rng& rng, ValueDecoding values,
                          bool margin) {
  check_prompted(prompted_x, T);
  DecodeResult res = start(prompted_x);
  const UnmaskBudget budget = linear_unmask_counts(prompted_x.count_masked(), T);
  for (int s = 0; s < T; ++s) {
    const int t = T - 1 - s;
    const int k = budget.counts[static_cast<std::size_t>(s)];
    if (k == 0) {
      reveal(res, {}, Matrix(), values, rng);
      continue;
    }
    const Matrix mu = denoiser(res.output, t);
    const std::vector<double> keys = margin ? top_margin_keys(mu) : top_prob_keys(mu);
    reveal(res, select_top_k(keys, res.output, k), mu, values, rng);
  }
  return res;
}

}  // namespace

UnmaskBudget linear_unmask_counts(int n_masked, int T) {
  require(T >= 1, "linear_unmask_counts needs T >= 1");
  require(n_masked >= 0, "n_masked must be >= 0");
  UnmaskBudget b;
  b.counts.resize(static_cast<std::size_t>(T));
  const long long n = n_masked;
  for (int s = 0; s < T; ++s) {
    b.counts[static_cast<std::size_t>(s)] = static_cast<int>(n * (s + 1) / T - n * s / T);
  }
  return b;
}

std::vector<int> select_top_k(const std::vector<double>& keys, const Sequence& x, int k) {
  std::vector<int> masked;
  for (int n = 0; n < x.size(); ++n) {
    if (x.is_masked(n)) masked.push_back(n);
  }
  require(k >= 0 && k <= static_cast<int>(masked.size()), "cannot select more positions than are masked");
  std::stable_sort(masked.begin(), masked.end(), [&](int a, int b) {
    return keys[static_cast<std::size_t>(a)] > keys[static_cast<std::size_t>(b)];
  });
  masked.resize(static_cast<std::size_t>(k));
  std::sort(masked.begin(), masked.end());
  return masked;
}

std::vector<double> top_prob_keys(const Matrix& mu) {
  std::vector<double> keys(static_cast<std::size_t>(mu.rows));
  for (int n = 0; n < mu.rows; ++n) {
    const auto row = mu.row(n);
    keys[static_cast<std::size_t>(n)] = *std::max_element(row.begin(), row.end());
  }
  return keys;
}

std::vector<double> top_margin_keys(const Matrix& mu) {
  require(mu.cols >= 2, "top-probability-margin needs at least two non-mask tokens");
  std::vector<double> keys(static_cast<std::size_t>(mu.rows));
  for (int n = 0; n < mu.rows; ++n) {
    double first = -std::numeric_limits<double>::infinity();
    double second = first;
    for (double v : mu.row(n)) {
      if (v > first) {
        second = first;
        first = v;
      } else if (v > second) {
        second = v;
      }
    }
    keys[static_cast<std::size_t>(n)] = first - second;
  }
  return keys;
}

DecodeResult sample_iid(const Sequence& prompted_x, int T, const DenoiserFn& denoiser, Rng& rng, ValueDecoding values) {
  check_prompted(prompted_x, T);
  const MaskSchedule sched = make_linear_schedule(T);
  DecodeResult res = start(prompted_x);
  for (int s = 0; s < T; ++s) {
    const int t = T - 1 - s;
    const double p = forward_unmask_prob(sched, t);
    std::vector<int> chosen;
    for (int n = 0; n < res.output.size(); ++n) {
      if (res.output.is_masked(n) && (t == 0 || rng.bernoulli(p))) chosen.push_back(n);
    }
    if (chosen.empty()) {
      reveal(res, {}, Matrix(), values, rng);
      continue;
    }
    reveal(res, chosen, denoiser(res.output, t), values, rng);
  }
  return res;
}

DecodeResult sample_top_prob(const Sequence& prompted_x, int T, const DenoiserFn& denoiser, Rng& rng,
                             ValueDecoding values) {
  return sample_top_k(prompted_x, T, denoiser, rng, values, false);
}

DecodeResult sample_top_prob_margin(const Sequence& prompted_x, int T, const DenoiserFn& denoiser, Rng& rng,
                                    ValueDecoding values) {
  return sample_top_k(prompted_x, T, denoiser, rng, values, true);
}

DecodeResult sample_learned(const Sequence& prompted_x, int T, const DenoiserFn& denoiser, const SelectorFn& selector,
                            Rng& rng, ValueDecoding values) {
  check_prompted(prompted_x, T);
  DecodeResult res = start(prompted_x);
  ReverseStepPolicy policy;
  policy.mode = PolicyMode::kLearnedSelector;
  policy.force_unmask_final = true;
  policy.values = values;
  for (int t = T - 1; t >= 0 && !res.output.mask_free(); --t) {
    ReverseStepResult step = reverse_step(res.output, t, denoiser, selector, policy, rng);
    int revealed = 0;
    for (std::size_t i = 0; i < step.r.size(); ++i) {
      if (!step.r[i]) continue;
      res.reveal_step[i] = res.steps_used;
      ++revealed;
    }
    res.output = std::move(step.x);
    res.per_step_unmask_counts.push_back(revealed);
    ++res.steps_used;
  }
  return res;
}

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kIid:
      return "iid";
    case Strategy::kTopProb:
      return "top-prob";
    case Strategy::kTopProbMargin:
      return "top-prob-margin";
    case Strategy::kLearned:
      return "learned";
  }
  return "?";
}

std::string valid_strategy_names() { return "iid, top-prob, top-prob-margin, learned"; }

Strategy parse_strategy(const std::string& name) {
  for (Strategy s : {Strategy::kIid, Strategy::kTopProb, Strategy::kTopProbMargin, Strategy::kLearned}) {
    if (name == strategy_name(s)) return s;
  }
  fail(ErrorCode::kInvalidArgument, "unknown strategy '" + name + "'; valid names: " + valid_strategy_names());
}

EvalMetrics evaluate(const std::vector<DecodeResult>& decoded, const std::vector<Sequence>& references) {
  require(decoded.size() == references.size(), "evaluate: decoded and reference counts differ");
  EvalMetrics m;
  m.n_examples = static_cast<int>(decoded.size());
  if (decoded.empty()) return m;
  long long correct_tokens = 0;
  long long total_tokens = 0;
  long long exact = 0;
  long long steps = 0;
  m.min_steps = std::numeric_limits<int>::max();
  m.max_steps = 0;
  for (std::size_t i = 0; i < decoded.size(); ++i) {
    const Sequence& out = decoded[i].output;
    const Sequence& ref = references[i];
    require(out.size() == ref.size(), "evaluate: sequence length mismatch");
    bool same = true;
    for (int n = ref.prompt_len; n < ref.size(); ++n) {
      const bool ok = out.tokens[static_cast<std::size_t>(n)] == ref.tokens[static_cast<std::size_t>(n)];
      correct_tokens += ok ? 1 : 0;
      same = same && ok;
      ++total_tokens;
    }
    exact += same ? 1 : 0;
    steps += decoded[i].steps_used;
    m.min_steps = std::min(m.min_steps, decoded[i].steps_used);
    m.max_steps = std::max(m.max_steps, decoded[i].steps_used);
  }
  const double n = static_cast<double>(decoded.size());
  m.exact_match = static_cast<double>(exact) / n;
  m.token_acc = total_tokens > 0 ? static_cast<double>(correct_tokens) / static_cast<double>(total_tokens) : 1.0;
  m.avg_steps = static_cast<double>(steps) / n;
  return m;
}

std::vector<std::pair<int, int>> completion_pairs(int seq_len, int prompt_len) {
  const int L = seq_len - prompt_len;
  require(L >= 0 && L % 2 == 0, "pair structure needs an even completion length");
  std::vector<std::pair<int, int>> pairs;
  for (int j = 0; j < L / 2; ++j) pairs.emplace_back(prompt_len + j, prompt_len + j + L / 2);
  return pairs;
}

double co_unmask_rate(const std::vector<DecodeResult>& decoded, int prompt_len) {
  long long total = 0;
  long long together = 0;
  for (const DecodeResult& d : decoded) {
    for (auto [a, b] : completion_pairs(d.output.size(), prompt_len)) {
      ++total;
      together += d.reveal_step[static_cast<std::size_t>(a)] == d.reveal_step[static_cast<std::size_t>(b)] ? 1 : 0;
    }
  }
  return total > 0 ? static_cast<double>(together) / static_cast<double>(total) : 0.0;
}

double pair_consistency(const std::vector<DecodeResult>& decoded, int prompt_len) {
  long long total = 0;
  long long equal = 0;
  for (const DecodeResult& d : decoded) {
    for (auto [a, b] : completion_pairs(d.output.size(), prompt_len)) {
      ++total;
      equal += d.output.tokens[static_cast<std::size_t>(a)] == d.output.tokens[static_cast<std::size_t>(b)] ? 1 : 0;
    }
  }
  return total > 0 ? static_cast<double>(equal) / static_cast<double>(total) : 0.0;
}

}  // namespace mdmo
