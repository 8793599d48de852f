#include "mdmo/schedule.hpp"

#include <string>

#include "mdmo/error.hpp"

namespace mdmo {

int Sequence::count_masked() const {
  int c = 0;
  for (int tok : tokens) c += tok == mask_id ? 1 : 0;
  return c;
}

std::vector<int> Sequence::mask_indicator() const {
  std::vector<int> m(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) m[i] = tokens[i] == mask_id ? 1 : 0;
  return m;
}

Sequence fully_masked(const Sequence& x0) {
  Sequence x = x0;
  for (int n = x.prompt_len; n < x.size(); ++n) x.tokens[static_cast<std::size_t>(n)] = x.mask_id;
  return x;
}

void validate_sequence(const Sequence& x) {
  if (x.prompt_len < 0 || x.prompt_len > x.size()) fail(ErrorCode::kValidation, "prompt_len out of range");
  for (int n = 0; n < x.size(); ++n) {
    const int tok = x.tokens[static_cast<std::size_t>(n)];
    if (tok < 0 || tok > x.mask_id) fail(ErrorCode::kValidation, "token id out of range at position " + std::to_string(n));
    if (n < x.prompt_len && tok == x.mask_id) fail(ErrorCode::kValidation, "mask token inside the prompt");
  }
}

MaskSchedule make_schedule(std::vector<double> alpha) {
  require(alpha.size() >= 2, "schedule needs at least two grid points");
  require(alpha.front() == 1.0, "schedule must start at alpha = 1");
  require(alpha.back() == 0.0, "schedule must end at alpha = 0");
  for (std::size_t j = 1; j < alpha.size(); ++j) {
    require(alpha[j] < alpha[j - 1], "schedule must be strictly decreasing");
  }
  MaskSchedule s;
  s.T = static_cast<int>(alpha.size()) - 1;
  s.alpha = std::move(alpha);
  return s;
}

MaskSchedule make_linear_schedule(int T) {
  require(T >= 1, "linear schedule requires T >= 1");
  std::vector<double> alpha(static_cast<std::size_t>(T) + 1);
  for (int j = 0; j <= T; ++j) alpha[static_cast<std::size_t>(j)] = static_cast<double>(T - j) / T;
  alpha.back() = 0.0;
  return make_schedule(std::move(alpha));
}

double keep_prob(const MaskSchedule& sched, int s, int t) {
  require(s >= 0 && t <= sched.T, "keep_prob indices out of range");
  require(s < t, "keep_prob requires s < t");
  if (sched.at(s) == 0.0) fail(ErrorCode::kDomainError, "keep_prob with alpha[s] = 0");
  return sched.at(t) / sched.at(s);
}

Sequence forward_corrupt(const Sequence& x0, int t, const MaskSchedule& sched, Rng& rng) {
  require(t >= 0 && t <= sched.T, "forward_corrupt time out of range");
  Sequence x = x0;
  const double keep = sched.at(t);
  for (int n = x.prompt_len; n < x.size(); ++n) {
    if (!rng.bernoulli(keep)) x.tokens[static_cast<std::size_t>(n)] = x.mask_id;
  }
  return x;
}

ReverseCategorical reverse_cond_prob(const MaskSchedule& sched, int t, int x_t_token, int x0_token, int mask_id) {
  require(t >= 1 && t <= sched.T, "reverse_cond_prob requires 1 <= t <= T");
  if (x_t_token != x0_token && x_t_token != mask_id) {
    fail(ErrorCode::kInvalidState, "x_t token is neither x0 nor the mask");
  }
  if (x_t_token != mask_id) return {1.0, 0.0};
  const double a_s = sched.at(t - 1);
  const double a_t = sched.at(t);
  const double p = (a_s - a_t) / (1.0 - a_t);
  return {p, 1.0 - p};
}

double forward_unmask_prob(const MaskSchedule& sched, int t) {
  require(t >= 0 && t < sched.T, "forward_unmask_prob requires 0 <= t <= T-1");
  const double a_t = sched.at(t);
  const double a_next = sched.at(t + 1);
  return (a_t - a_next) / (1.0 - a_next);
}

}  // namespace mdmo
