#include <gtest/gtest.h>

#include <cmath>

#include "mdmo/error.hpp"
#include "mdmo/gradcheck.hpp"
#include "mdmo/rng.hpp"
#include "mdmo/tensor.hpp"

using namespace mdmo;

namespace {

ParamVector random_params(std::uint64_t seed) {
  ParamVector p;
  p.add_segment("a", 3, 4);
  p.add_segment("b", 4, 4);
  p.add_segment("c", 1, 4);
  p.add_segment("g", 1, 4);
  Rng rng(seed);
  for (double& v : p.values()) v = rng.uniform() * 2.0 - 1.0;
  return p;
}

using Builder = std::function<Var(Tape&, const ParamVector&)>;

void expect_fd_match(const Builder& build, std::uint64_t seed = 3) {
  const ParamVector p = random_params(seed);
  Tape tape;
  tape.track(p);
  tape.backward(build(tape, p));
  const ParamVector g = tape.gradient(p);
  const LossFn loss = [&](const ParamVector& q) {
    Tape t;
    return build(t, q).scalar();
  };
  const FdReport rep = finite_diff_check(p, loss, g, 1e-5, 1e-4);
  EXPECT_TRUE(rep.pass) << "worst segment " << rep.worst_segment << " err " << rep.max_rel_error;
}

}  // namespace

TEST(Tensor, ConstantLossHasZeroGradient) {
  const ParamVector p = random_params(1);
  Tape tape;
  tape.track(p);
  tape.backward(tape.scalar_constant(3.0));
  const ParamVector g = tape.gradient(p);
  for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(Tensor, SumOfParamsHasOnesGradient) {
  const ParamVector p = random_params(1);
  Tape tape;
  tape.track(p);
  Var total = ops::add(ops::add(ops::sum(tape.param(p, "a")), ops::sum(tape.param(p, "b"))),
                       ops::add(ops::sum(tape.param(p, "c")), ops::sum(tape.param(p, "g"))));
  tape.backward(total);
  const ParamVector g = tape.gradient(p);
  for (double v : g.values()) EXPECT_EQ(v, 1.0);
}

TEST(Tensor, NonScalarRootIsContractViolation) {
  const ParamVector p = random_params(1);
  Tape tape;
  tape.track(p);
  try {
    tape.backward(tape.param(p, "a"));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kContractViolation);
  }
}

TEST(Tensor, RepeatedBackwardIsIdentical) {
  const ParamVector p = random_params(2);
  Tape tape;
  tape.track(p);
  Var y = ops::sum(ops::gelu(ops::matmul(tape.param(p, "a"), tape.param(p, "b"))));
  tape.backward(y);
  const ParamVector g1 = tape.gradient(p);
  tape.backward(y);
  const ParamVector g2 = tape.gradient(p);
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_EQ(g1.values()[i], g2.values()[i]);
}

TEST(Tensor, QuadraticLossFiniteDifferences) {
  const ParamVector p = random_params(4);
  const LossFn loss = [](const ParamVector& q) {
    double s = 0.0;
    for (double v : q.values()) s += 0.5 * v * v;
    return s;
  };
  const FdReport rep = finite_diff_check(p, loss, p, 1e-5, 1e-8);
  EXPECT_TRUE(rep.pass);
  EXPECT_LE(rep.max_rel_error, 1e-8);
}

TEST(Tensor, NonDeterministicLossDetected) {
  const ParamVector p = random_params(4);
  int calls = 0;
  const LossFn loss = [&](const ParamVector&) { return static_cast<double>(++calls); };
  try {
    finite_diff_check(p, loss, p);
    FAIL() << "expected a determinism error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDeterminism);
  }
}

TEST(Tensor, SignFlipNamesSegment) {
  const ParamVector p = random_params(4);
  const LossFn loss = [](const ParamVector& q) {
    double s = 0.0;
    for (double v : q.values()) s += 0.5 * v * v;
    return s;
  };
  ParamVector wrong = p;
  for (double& v : wrong.view(wrong.segment("b"))) v = -v;
  const FdReport rep = finite_diff_check(p, loss, wrong, 1e-5, 1e-4);
  EXPECT_FALSE(rep.pass);
  ASSERT_EQ(rep.failing.size(), 1u);
  EXPECT_EQ(rep.failing[0], "b");
}

TEST(TensorOps, MatmulAddGelu) {
  expect_fd_match([](Tape& t, const ParamVector& p) {
    Var h = ops::add_row(ops::matmul(t.param(p, "a"), t.param(p, "b")), t.param(p, "c"));
    return ops::sum(ops::mul(ops::gelu(h), h));
  });
}

TEST(TensorOps, LayerNormSoftmax) {
  expect_fd_match([](Tape& t, const ParamVector& p) {
    Var h = ops::layer_norm(t.param(p, "a"), t.param(p, "g"), t.param(p, "c"));
    Matrix w(3, 4);
    for (std::size_t i = 0; i < w.size(); ++i) w.data[i] = 0.1 * static_cast<double>(i) - 0.3;
    return ops::add(ops::weighted_sum(ops::log_softmax_rows(h), w), ops::weighted_sum(ops::softmax_rows(h), w));
  });
}

TEST(TensorOps, Attention) {
  expect_fd_match([](Tape& t, const ParamVector& p) {
    Var a = t.param(p, "a");
    Var b = t.param(p, "b");
    Var q = ops::matmul(a, b);
    Var k = ops::scale(q, 0.7);
    Var v = ops::sub(a, q);
    Matrix w(3, 4);
    for (std::size_t i = 0; i < w.size(); ++i) w.data[i] = std::sin(static_cast<double>(i));
    return ops::weighted_sum(ops::attention(q, k, v, 2), w);
  });
}

TEST(TensorOps, SigmoidMaskedMaxExp) {
  expect_fd_match([](Tape& t, const ParamVector& p) {
    Var col = ops::matmul(t.param(p, "a"), ops::scale(ops::exp(ops::negate(t.param(p, "b"))), 0.5));
    Var first = ops::pick(col, std::vector<int>{0, 1, 3});
    Var s = ops::sigmoid(first);
    const std::vector<int> mask = {1, 0, 1};
    Var m = ops::masked_max(s, mask);
    Var d = ops::exp(ops::scale(ops::sub_broadcast(s, m), 2.0));
    return ops::add(ops::sum(ops::log_sigmoid(first)), ops::sum(ops::log(ops::add_scalar(d, 1.0))));
  });
}

TEST(TensorOps, BernoulliKlAndLogMass) {
  expect_fd_match([](Tape& t, const ParamVector& p) {
    Var z = ops::pick(t.param(p, "a"), std::vector<int>{0, 1, 2});
    Var q = ops::mul_const(ops::sigmoid(z), Matrix::column(std::vector<double>{1.0, 1.0, 1.0}));
    Var zp = ops::pick(t.param(p, "a"), std::vector<int>{3, 2, 1});
    const std::vector<int> mask = {1, 1, 1};
    const std::vector<int> r = {1, 0, 1};
    Var kl = ops::bernoulli_kl_sum(q, ops::log_sigmoid(zp), ops::log_sigmoid(ops::negate(zp)), mask);
    return ops::add(kl, ops::bernoulli_log_mass_sum(q, r, mask));
  });
}

TEST(TensorOps, GatherAndClamp) {
  expect_fd_match([](Tape& t, const ParamVector& p) {
    const std::vector<int> ids = {2, 0, 2, 1};
    Var e = ops::gather_rows(t.param(p, "b"), ids);
    Var h = ops::add(e, ops::broadcast_row(t.param(p, "b"), 3, 4));
    return ops::sum(ops::clamp_min(ops::mul(h, h), 0.05));
  });
}

TEST(ParamVectorLayout, SegmentsAndValidation) {
  ParamVector p = random_params(1);
  EXPECT_EQ(p.size(), 12u + 16u + 4u + 4u);
  EXPECT_EQ(p.segment_of(13).name, "b");
  EXPECT_THROW(p.add_segment("a", 1, 1), Error);
  p.values()[5] = NAN;
  try {
    p.validate_finite();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNumericFailure);
    EXPECT_NE(std::string(e.what()).find("a"), std::string::npos);
  }
}
