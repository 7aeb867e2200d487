#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "retina/autograd.hpp"
#include "retina/grad_check.hpp"
#include "retina/masked_attention.hpp"
#include "retina/semantic_head.hpp"
#include "test_util.hpp"

namespace retina {
namespace {

using testing::random_tensor;

double check(const LossBuilder& loss, std::vector<ParamLeaf*> leaves) {
  return grad_check(loss, leaves).max_rel_error;
}

TEST(GradCheck, SumOfSquaresIsExact) {
  ParamLeaf w("w", random_tensor({1, 6}, 1));
  EXPECT_LT(check([&](ag::Tape& t) { return ag::sum_squares(t.param(w)); }, {&w}), 1e-8);
}

TEST(GradCheck, EmptyParameterSetReportsZero) {
  ParamLeaf w("w", random_tensor({1, 2}, 2));
  const GradCheckReport r =
      grad_check([&](ag::Tape& t) { return ag::sum(t.param(w)); }, std::vector<ParamLeaf*>{});
  EXPECT_EQ(r.max_rel_error, 0.0);
  EXPECT_EQ(r.entries_checked, 0u);
}

TEST(GradCheck, RejectsEpsOutsideRange) {
  ParamLeaf w("w", random_tensor({1, 2}, 3));
  std::vector<ParamLeaf*> leaves{&w};
  auto loss = [&](ag::Tape& t) { return ag::sum(t.param(w)); };
  EXPECT_THROW(grad_check(loss, leaves, {1e-2, 0, 0}), std::invalid_argument);
  EXPECT_THROW(grad_check(loss, leaves, {1e-9, 0, 0}), std::invalid_argument);
}

TEST(GradCheck, NonFiniteLossNamesTheParameter) {
  ParamLeaf w("offending.weight", Tensor::matrix(1, 2, {1.0, 0.0}));
  std::vector<ParamLeaf*> leaves{&w};
  // log(x) is finite at the start but the perturbed entry 1 crosses zero.
  auto loss = [&](ag::Tape& t) {
    ag::Var p = t.param(w);
    const Tensor& v = p.value();
    Tensor out({1, 1}, std::log(v[0]) + (v[1] < 0 ? std::log(v[1]) : 0.0));
    return t.record(out, {p}, [](ag::Tape&, const Tensor&) {});
  };
  try {
    grad_check(loss, leaves);
    FAIL() << "expected GradCheckError";
  } catch (const GradCheckError& e) {
    EXPECT_NE(std::string(e.what()).find("offending.weight[1]"), std::string::npos) << e.what();
  }
}

TEST(GradCheck, SamplingCapsEntriesPerLeaf) {
  ParamLeaf a("a", random_tensor({5, 5}, 4)), b("b", random_tensor({1, 3}, 5));
  GradCheckOptions opt;
  opt.max_entries_per_leaf = 4;
  const auto r = grad_check(
      [&](ag::Tape& t) { return ag::add(ag::sum_squares(t.param(a)), ag::sum(t.param(b))); },
      std::vector<ParamLeaf*>{&a, &b}, opt);
  EXPECT_EQ(r.entries_checked, 4u + 3u);
}

// Each composition ends in a weighted sum so every output entry matters.
class OpGradient : public ::testing::Test {
 protected:
  ParamLeaf a{"a", random_tensor({3, 4}, 11)};
  ParamLeaf b{"b", random_tensor({4, 5}, 12)};
  ParamLeaf r{"r", random_tensor({1, 4}, 13)};
  ParamLeaf g{"g", random_tensor({1, 4}, 14, 0.5, 1.5)};

  static ag::Var weighted(ag::Var x, std::uint64_t seed) {
    const Tensor w = random_tensor(x.shape(), seed);
    return ag::sum(ag::mul(x, x.tape->constant(w)));
  }
};

TEST_F(OpGradient, Matmul) {
  EXPECT_LT(check([&](ag::Tape& t) { return weighted(ag::matmul(t.param(a), t.param(b)), 1); }, {&a, &b}), 1e-6);
}

TEST_F(OpGradient, MatmulNt) {
  ParamLeaf c("c", random_tensor({6, 4}, 15));
  EXPECT_LT(check([&](ag::Tape& t) { return weighted(ag::matmul_nt(t.param(a), t.param(c)), 2); }, {&a, &c}), 1e-6);
}

TEST_F(OpGradient, AddRowAndScale) {
  EXPECT_LT(check([&](ag::Tape& t) { return weighted(ag::scale(ag::add_row(t.param(a), t.param(r)), -1.7), 3); },
                  {&a, &r}), 1e-6);
}

TEST_F(OpGradient, GeluAndSigmoid) {
  EXPECT_LT(check([&](ag::Tape& t) { return weighted(ag::sigmoid(ag::gelu(t.param(a))), 4); }, {&a}), 1e-6);
}

TEST_F(OpGradient, LayerNorm) {
  EXPECT_LT(check([&](ag::Tape& t) {
              return weighted(ag::layer_norm(t.param(a), t.param(g), t.param(r), 1e-6), 5);
            },
            {&a, &g, &r}), 1e-6);
}

TEST_F(OpGradient, L2NormalizeRows) {
  EXPECT_LT(check([&](ag::Tape& t) { return weighted(ag::l2_normalize_rows(t.param(a)), 6); }, {&a}), 1e-6);
}

TEST_F(OpGradient, StructuralOps) {
  EXPECT_LT(check([&](ag::Tape& t) {
              ag::Var x = t.param(a);
              const std::vector<std::size_t> rows{2, 0, 2, 1};
              const std::vector<ag::Var> parts{ag::gather_rows(x, rows), ag::reshape(t.param(r), {1, 4})};
              const std::vector<double> f{0.5, -1.0, 2.0, 3.0, 0.25};
              return weighted(ag::scale_rows(ag::concat_rows(parts), f), 7);
            },
            {&a, &r}), 1e-6);
}

TEST_F(OpGradient, SegmentedAttentionWithMaskSlot) {
  ParamLeaf qkv("qkv", random_tensor({7, 12}, 16));
  const std::vector<Segment> segs{{0, 4, true, 5}, {4, 3, false, 0}};
  EXPECT_LT(check([&](ag::Tape& t) { return weighted(segmented_attention(t.param(qkv), segs, 2), 8); }, {&qkv}),
            1e-6);
}

TEST_F(OpGradient, PlainAttention) {
  ParamLeaf q("q", random_tensor({3, 4}, 17)), k("k", random_tensor({5, 4}, 18)), v("v", random_tensor({5, 2}, 19));
  EXPECT_LT(check([&](ag::Tape& t) { return weighted(attention(t.param(q), t.param(k), t.param(v), 0.5), 9); },
                  {&q, &k, &v}), 1e-6);
}

TEST(Tape, ParamAccumulatesIntoLeafGradient) {
  ParamLeaf w("w", Tensor::matrix(1, 3, {1, 2, 3}));
  for (int rep = 0; rep < 2; ++rep) {
    ag::Tape t;
    t.backward(ag::sum_squares(t.param(w)));
  }
  EXPECT_EQ(w.grad, Tensor::matrix(1, 3, {4, 8, 12}));
}

TEST(Tape, ConstantsReceiveNoGradientClosure) {
  ag::Tape t;
  ag::Var c = t.constant(Tensor::matrix(1, 2, {1, 2}));
  ag::Var s = ag::sum(c);
  EXPECT_FALSE(t.requires_grad(s.id));
  EXPECT_EQ(s.value()[0], 3.0);
}

TEST(Gelu, ValueAndDerivativeAtZero) {
  EXPECT_EQ(ag::gelu_value(0.0), 0.0);
  EXPECT_DOUBLE_EQ(ag::gelu_derivative(0.0), 0.5);
  const double h = 1e-6;
  for (double x : {-2.0, -0.3, 0.7, 3.0}) {
    const double fd = (ag::gelu_value(x + h) - ag::gelu_value(x - h)) / (2 * h);
    EXPECT_NEAR(ag::gelu_derivative(x), fd, 1e-8);
  }
}

}  // namespace
}  // namespace retina
