#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "mdmo/error.hpp"
#include "mdmo/generative.hpp"
#include "mdmo/oracle.hpp"
#include "test_util.hpp"

using namespace mdmo;

namespace {

Sequence masked(int N, int mask_id, int prompt_len = 0, std::vector<int> prompt = {}) {
  Sequence x;
  x.mask_id = mask_id;
  x.prompt_len = prompt_len;
  x.tokens.assign(static_cast<std::size_t>(N), mask_id);
  for (int n = 0; n < prompt_len; ++n) x.tokens[static_cast<std::size_t>(n)] = prompt[static_cast<std::size_t>(n)];
  return x;
}

DenoiserFn constant_denoiser(std::vector<double> row) {
  return [row](const Sequence& x, int) {
    Matrix m(x.size(), static_cast<int>(row.size()));
    for (int n = 0; n < x.size(); ++n)
      for (int v = 0; v < m.cols; ++v) m(n, v) = row[static_cast<std::size_t>(v)];
    return m;
  };
}

// Every path x_T .. x_0 with its decisions, for N positions starting all masked.
void enumerate_paths(const Sequence& x, int t, int V, std::vector<Sequence>& states, std::vector<UnmaskVector>& rs,
                     const std::function<void()>& visit) {
  if (t < 0) {
    visit();
    return;
  }
  std::vector<int> m;
  for (int n = 0; n < x.size(); ++n)
    if (x.is_masked(n)) m.push_back(n);
  const int subsets = 1 << m.size();
  for (int s = 0; s < subsets; ++s) {
    std::vector<int> chosen;
    for (std::size_t i = 0; i < m.size(); ++i)
      if (s & (1 << i)) chosen.push_back(m[i]);
    int fills = 1;
    for (std::size_t i = 0; i < chosen.size(); ++i) fills *= V;
    for (int f = 0; f < fills; ++f) {
      Sequence next = x;
      UnmaskVector r(static_cast<std::size_t>(x.size()), 0);
      int code = f;
      for (int n : chosen) {
        next.tokens[static_cast<std::size_t>(n)] = code % V;
        code /= V;
        r[static_cast<std::size_t>(n)] = 1;
      }
      states.push_back(next);
      rs.push_back(r);
      enumerate_paths(next, t - 1, V, states, rs, visit);
      states.pop_back();
      rs.pop_back();
    }
  }
}

}  // namespace

TEST(ReverseStep, FullyUnmaskedIsCopied) {
  Sequence x = masked(3, 2);
  x.tokens = {0, 1, 1};
  Rng rng(1);
  const ReverseStepResult res = reverse_step(x, 1, constant_denoiser({0.5, 0.5}), constant_selector(1.0), {}, rng);
  EXPECT_EQ(res.x, x);
  EXPECT_EQ(res.r, (UnmaskVector{0, 0, 0}));
}

TEST(ReverseStep, UniformDenoiserIsSymmetric) {
  const Sequence x = masked(2000, 2);
  Rng rng(3);
  const ReverseStepResult res = reverse_step(x, 2, constant_denoiser({0.5, 0.5}), constant_selector(1.0), {}, rng);
  int zeros = 0;
  for (int v : res.x.tokens) {
    ASSERT_TRUE(v == 0 || v == 1);
    zeros += v == 0;
  }
  EXPECT_NEAR(zeros / 2000.0, 0.5, 3.0 * std::sqrt(0.25 / 2000.0));
}

TEST(ReverseStep, FixedForwardFinalStepUnmasksAll) {
  ReverseStepPolicy policy;
  policy.mode = PolicyMode::kFixedForward;
  policy.force_unmask_final = false;
  policy.schedule = make_linear_schedule(5);
  const Sequence x = masked(6, 2, 2, {0, 1});
  Rng rng(4);
  const ReverseStepResult res = reverse_step(x, 0, constant_denoiser({0.5, 0.5}), constant_selector(0.0), policy, rng);
  EXPECT_TRUE(res.x.mask_free());
  EXPECT_EQ(res.r, (UnmaskVector{0, 0, 1, 1, 1, 1}));
  EXPECT_EQ(res.x.tokens[0], 0);
  EXPECT_EQ(res.x.tokens[1], 1);
}

TEST(ReverseStep, ForcedFinalOverridesSelector) {
  ReverseStepPolicy policy;
  const Sequence x = masked(3, 2);
  Rng rng(4);
  EXPECT_TRUE(reverse_step(x, 0, constant_denoiser({0.5, 0.5}), constant_selector(0.0), policy, rng).x.mask_free());
  policy.force_unmask_final = false;
  EXPECT_EQ(reverse_step(x, 0, constant_denoiser({0.5, 0.5}), constant_selector(0.0), policy, rng).x, x);
}

TEST(ReverseStep, FixedForwardMarginalsAreBinomial) {
  ReverseStepPolicy policy;
  policy.mode = PolicyMode::kFixedForward;
  policy.force_unmask_final = false;
  policy.schedule = make_linear_schedule(4);
  const int n_masked = 6;
  const int t = 2;
  const double p = forward_unmask_prob(policy.schedule, t);
  const int runs = 4000;
  std::vector<int> hist(n_masked + 1, 0);
  Rng rng(9);
  for (int i = 0; i < runs; ++i) {
    const ReverseStepResult res = reverse_step(masked(n_masked, 2), t, constant_denoiser({0.5, 0.5}),
                                               constant_selector(0.0), policy, rng);
    ++hist[static_cast<std::size_t>(res.x.count_masked())];
  }
  // Chi-square against Binomial(n_masked, 1 - p) on the count left masked.
  double chi2 = 0.0;
  for (int k = 0; k <= n_masked; ++k) {
    const double expected = runs * std::exp(std::lgamma(n_masked + 1.0) - std::lgamma(k + 1.0) -
                                            std::lgamma(n_masked - k + 1.0) + k * std::log(1.0 - p) +
                                            (n_masked - k) * std::log(p));
    chi2 += (hist[static_cast<std::size_t>(k)] - expected) * (hist[static_cast<std::size_t>(k)] - expected) / expected;
  }
  // 6 degrees of freedom: P(chi2 > 22.46) = 0.001.
  EXPECT_LT(chi2, 22.46);
}

TEST(ReverseStep, PromptNeverResampled) {
  const Sequence x = masked(5, 3, 2, {2, 0});
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const ReverseStepResult res = reverse_step(x, 1, constant_denoiser({0.2, 0.3, 0.5}), constant_selector(1.0), {}, rng);
    EXPECT_EQ(res.x.tokens[0], 2);
    EXPECT_EQ(res.x.tokens[1], 0);
    EXPECT_EQ(res.r[0], 0);
    EXPECT_EQ(res.r[1], 0);
  }
}

TEST(JointLogProb, AllCopyPath) {
  const Sequence x = masked(2, 2);
  const double p = 0.3;
  std::vector<Sequence> states = {x, x, x};
  std::vector<UnmaskVector> rs = {{0, 0}, {0, 0}};
  const double lp = model_joint_log_prob(states, rs, constant_denoiser({0.5, 0.5}), constant_selector(p));
  EXPECT_NEAR(lp, 4.0 * std::log(1.0 - p), 1e-12);
}

TEST(JointLogProb, SingleFactor) {
  const Sequence x = masked(1, 2);
  Sequence a = x;
  a.tokens = {0};
  const double lp = model_joint_log_prob({x, a}, {{1}}, constant_denoiser({0.7, 0.3}), constant_selector(1.0));
  EXPECT_NEAR(lp, std::log(0.7), 1e-12);
}

TEST(JointLogProb, InconsistentPathRejected) {
  const Sequence x = masked(1, 2);
  Sequence a = x;
  a.tokens = {0};
  try {
    model_joint_log_prob({x, a}, {{0}}, constant_denoiser({0.7, 0.3}), constant_selector(0.5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kImpossibleTrajectory);
  }
}

TEST(JointLogProb, PathsSumToOne) {
  for (int N : {1, 2}) {
    Model model = test::tiny_model(2, N, 2, 5);
    const DiffusionConfig cfg = test::tiny_config(2);
    const DenoiserFn den = loss_denoiser_fn(model, cfg);
    const SelectorFn sel = loss_selector_fn(model, cfg);
    const Sequence x = masked(N, 2);
    std::vector<Sequence> states = {x};
    std::vector<UnmaskVector> rs;
    double total = 0.0;
    enumerate_paths(x, 1, 2, states, rs, [&] { total += std::exp(model_joint_log_prob(states, rs, den, sel)); });
    EXPECT_NEAR(total, 1.0, 1e-10) << "N=" << N;
  }
}

TEST(ExactLikelihood, SingleStepExamples) {
  const Sequence x0 = [] {
    Sequence s = masked(1, 2);
    s.tokens = {0};
    return s;
  }();
  EXPECT_NEAR(exact_log_likelihood(x0, constant_denoiser({0.5, 0.5}), constant_selector(1.0), 1), std::log(0.5), 1e-12);
  EXPECT_NEAR(exact_log_likelihood(x0, constant_denoiser({0.7, 0.3}), constant_selector(1.0), 1), std::log(0.7), 1e-12);
  // A selector that never reveals leaves the mask in place: x0 is unreachable.
  EXPECT_EQ(exact_log_likelihood(x0, constant_denoiser({0.7, 0.3}), constant_selector(0.0), 1),
            -std::numeric_limits<double>::infinity());
}

TEST(ExactLikelihood, DataProbabilitiesSumToAtMostOne) {
  Model model = test::tiny_model(2, 2, 2, 8);
  const DiffusionConfig cfg = test::tiny_config(2);
  const double total = total_data_probability(masked(2, 2), loss_denoiser_fn(model, cfg), loss_selector_fn(model, cfg), 2);
  EXPECT_GT(total, 0.0);
  EXPECT_LE(total, 1.0 + 1e-12);
}

TEST(NetworkTime, Mapping) {
  Network net = make_network(NetRole::kDenoiser, test::tiny_net(3, 2, 4));
  EXPECT_EQ(network_time(net, 3, 4), 3);
  EXPECT_EQ(network_time(net, 1, 2), 2);
  net.config.time_conditioning = false;
  EXPECT_EQ(network_time(net, 3, 4), 0);
}
