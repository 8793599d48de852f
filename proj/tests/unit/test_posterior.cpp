#include <gtest/gtest.h>

#include <cmath>

#include "mdmo/error.hpp"
#include "mdmo/posterior.hpp"

using namespace mdmo;

namespace {

Sequence masked_seq(int n, int vocab) {
  Sequence x;
  x.mask_id = vocab;
  x.tokens.assign(static_cast<std::size_t>(n), vocab);
  return x;
}

}  // namespace

TEST(Posterior, WorkedExample) {
  const Sequence x = masked_seq(3, 4);
  const ProbVector q = posterior_unmask_probs({0.2, 0.5, 0.9}, x, {0.1});
  EXPECT_NEAR(q[0], std::exp(-7.0), 1e-12);
  EXPECT_NEAR(q[1], std::exp(-4.0), 1e-12);
  EXPECT_EQ(q[2], 1.0);
}

TEST(Posterior, GatedOffMask) {
  Sequence x = masked_seq(3, 4);
  x.tokens[2] = 1;
  const ProbVector q = posterior_unmask_probs({0.2, 0.5, 0.9}, x, {0.1});
  EXPECT_EQ(q[2], 0.0);
  EXPECT_EQ(q[1], 1.0);
}

TEST(Posterior, NothingMaskedThrows) {
  Sequence x = masked_seq(2, 4);
  x.tokens = {0, 1};
  EXPECT_THROW(posterior_unmask_probs({0.1, 0.2}, x, {0.1}), Error);
}

TEST(Posterior, TrajectoryLogProbMatchesSample) {
  Sequence x0;
  x0.mask_id = 3;
  x0.tokens = {0, 1, 2, 1, 0};
  Rng rng(7);
  const ScoreVector s = {0.3, 0.31, 0.9, 0.5, 0.1};
  for (int rep = 0; rep < 50; ++rep) {
    const TrajectorySample tr = sample_trajectory(x0, 4, rep % 4, s, {0.2}, rng);
    EXPECT_EQ(tr.log_q, trajectory_log_prob(tr, x0, s, {0.2}));
    validate_trajectory(tr, x0, 4);
  }
}

TEST(Posterior, ImpossibleTrajectoryThrows) {
  Sequence x0;
  x0.mask_id = 3;
  x0.tokens = {0, 1};
  TrajectorySample tr;
  tr.t_star = 0;
  tr.states = {fully_masked(x0), fully_masked(x0)};
  tr.decisions = {{0, 0}};
  // The argmax position has q = 1, so r = 0 there is impossible.
  EXPECT_THROW(trajectory_log_prob(tr, x0, {0.1, 0.9}, {0.1}), Error);
}

TEST(Posterior, SmallTauGivesDescendingOrder) {
  Sequence x0;
  x0.mask_id = 5;
  x0.tokens = {0, 1, 2, 3, 4};
  const ScoreVector s = {0.5, 0.1, 0.9, 0.3, 0.7};
  Rng rng(1);
  const TrajectorySample tr = sample_trajectory(x0, 6, 0, s, {1e-3}, rng);
  // One reveal per step, highest score first.
  const std::vector<int> expected = {2, 4, 0, 3, 1};
  for (std::size_t step = 0; step < expected.size(); ++step) {
    for (int n = 0; n < 5; ++n) EXPECT_EQ(tr.decisions[step][static_cast<std::size_t>(n)], n == expected[step] ? 1 : 0);
  }
}
