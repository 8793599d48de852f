#include <gtest/gtest.h>

#include <cmath>

#include "mdmo/error.hpp"
#include "mdmo/schedule.hpp"

using namespace mdmo;

TEST(Schedule, Linear) {
  const MaskSchedule s = make_linear_schedule(5);
  const std::vector<double> expected = {1.0, 0.8, 0.6, 0.4, 0.2, 0.0};
  for (int j = 0; j <= 5; ++j) EXPECT_NEAR(s.at(j), expected[static_cast<std::size_t>(j)], 1e-15);
  EXPECT_EQ(s.at(0), 1.0);
  EXPECT_EQ(s.at(5), 0.0);
  EXPECT_EQ(make_linear_schedule(1).alpha, (std::vector<double>{1.0, 0.0}));
  EXPECT_THROW(make_linear_schedule(0), Error);
  EXPECT_THROW(make_schedule({1.0, 0.5, 0.5, 0.0}), Error);
}

TEST(Schedule, KeepProb) {
  const MaskSchedule s = make_linear_schedule(5);
  EXPECT_NEAR(keep_prob(s, 0, 1), 0.8, 1e-15);
  EXPECT_EQ(keep_prob(s, 2, 5), 0.0);
  double chain = 1.0;
  for (int t = 1; t <= 4; ++t) chain *= keep_prob(s, t - 1, t);
  EXPECT_NEAR(chain, s.at(4), 1e-15);
  EXPECT_THROW(keep_prob(s, 3, 3), Error);
  EXPECT_THROW(keep_prob(s, 5, 5), Error);
}

TEST(Schedule, ForwardUnmaskProb) {
  const MaskSchedule s = make_linear_schedule(5);
  for (int t = 0; t < 5; ++t) EXPECT_NEAR(forward_unmask_prob(s, t), 1.0 / (t + 1), 1e-15);
  EXPECT_EQ(forward_unmask_prob(s, 0), 1.0);
  EXPECT_NEAR(forward_unmask_prob(s, 4), 0.2, 1e-15);
}

TEST(Schedule, ReverseCondProb) {
  const MaskSchedule s = make_linear_schedule(5);
  const ReverseCategorical stay = reverse_cond_prob(s, 3, 1, 1, 4);
  EXPECT_EQ(stay.p_token, 1.0);
  EXPECT_EQ(stay.p_mask, 0.0);
  EXPECT_NEAR(reverse_cond_prob(s, 5, 4, 1, 4).p_token, 0.2, 1e-15);
  EXPECT_NEAR(reverse_cond_prob(s, 1, 4, 1, 4).p_token, 1.0, 1e-15);
  EXPECT_THROW(reverse_cond_prob(s, 2, 2, 1, 4), Error);
  // Forward marginal at t composed with one reverse step gives the marginal at t-1.
  for (int t = 1; t <= 5; ++t) {
    const double p_unmasked_t = s.at(t);
    const double p_token_s = p_unmasked_t + (1.0 - p_unmasked_t) * reverse_cond_prob(s, t, 4, 1, 4).p_token;
    EXPECT_NEAR(p_token_s, s.at(t - 1), 1e-12);
  }
}

TEST(Schedule, ForwardCorrupt) {
  const MaskSchedule s = make_linear_schedule(4);
  Sequence x0;
  x0.mask_id = 3;
  x0.prompt_len = 2;
  for (int n = 0; n < 10002; ++n) x0.tokens.push_back(n % 3);
  Rng rng(1);
  EXPECT_EQ(forward_corrupt(x0, 0, s, rng), x0);
  const Sequence all = forward_corrupt(x0, 4, s, rng);
  EXPECT_EQ(all.tokens[0], x0.tokens[0]);
  EXPECT_EQ(all.tokens[1], x0.tokens[1]);
  EXPECT_EQ(all.count_masked(), 10000);
  const Sequence half = forward_corrupt(x0, 2, s, rng);
  EXPECT_NEAR(half.count_masked() / 10000.0, 0.5, 0.02);
  EXPECT_EQ(half.tokens[0], x0.tokens[0]);
}

TEST(Schedule, SequenceValidation) {
  Sequence x;
  x.mask_id = 2;
  x.prompt_len = 1;
  x.tokens = {2, 0};
  EXPECT_THROW(validate_sequence(x), Error);
  x.tokens = {0, 3};
  EXPECT_THROW(validate_sequence(x), Error);
  x.tokens = {0, 2};
  EXPECT_NO_THROW(validate_sequence(x));
}
