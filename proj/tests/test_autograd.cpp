#include <gtest/gtest.h>

#include "binlab/autograd.hpp"
#include "support.hpp"

using namespace binlab;
using testing_support::grad_check;
using testing_support::random_tensor;

namespace {

ag::Var param(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  return ag::leaf(random_tensor(s, rng, lo, hi), true);
}

}  // namespace

TEST(Autograd, ElementwiseOps) {
  std::mt19937_64 rng(1);
  auto a = param({2, 3, 4, 4}, rng);
  auto b = param({2, 3, 4, 4}, rng);
  auto s = param({1, 1, 1, 1}, rng);
  auto w = ag::constant(random_tensor(a->value.shape(), rng));
  auto loss = [&] {
    auto y = ag::add(ag::mul(a, b), ag::sub(ag::square(a), ag::scale(b, 0.3)));
    y = ag::add_scalar(ag::mul_bcast(y, s), 0.25);
    y = ag::add_bcast(y, s);
    return ag::add(ag::sum(ag::mul(y, w)), ag::add(ag::mean(a), ag::sum_squares(b)));
  };
  auto r = grad_check(loss, {a, b, s}, rng, 20);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Autograd, Activations) {
  std::mt19937_64 rng(2);
  auto x = param({1, 2, 5, 5}, rng, -2, 2);
  auto w = ag::constant(random_tensor(x->value.shape(), rng));
  auto loss = [&] {
    return ag::sum(ag::mul(ag::add(ag::sigmoid(x), ag::add(ag::leaky_relu(x, 0.2), ag::relu(x))), w));
  };
  EXPECT_LT(grad_check(loss, {x}, rng, 50).max_rel_error, 1e-6);
}

TEST(Autograd, ConvStridesAndUpsample) {
  std::mt19937_64 rng(3);
  auto x = param({2, 3, 8, 8}, rng);
  auto w = param({4, 3, 3, 3}, rng);
  auto b = param({1, 4, 1, 1}, rng);
  for (int stride : {1, 2}) {
    auto forward = [&] { return ag::upsample2x(ag::conv2d(x, w, b, stride, 1)); };
    auto weights = ag::constant(random_tensor(forward()->value.shape(), rng));
    auto loss = [&] { return ag::sum(ag::mul(forward(), weights)); };
    EXPECT_LT(grad_check(loss, {x, w, b}, rng, 15).max_rel_error, 1e-5) << "stride " << stride;
  }
}

TEST(Autograd, ConvMatchesDirectLoopWithReplicatePadding) {
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({1, 2, 5, 6}, rng);
  const Tensor w = random_tensor({3, 2, 3, 3}, rng);
  const Tensor b = random_tensor({1, 3, 1, 1}, rng);
  for (int stride : {1, 2}) {
    auto y = ag::conv2d(ag::constant(x), ag::constant(w), ag::constant(b), stride, 1)->value;
    const int oh = (5 + 2 - 3) / stride + 1, ow = (6 + 2 - 3) / stride + 1;
    ASSERT_EQ(y.shape(), (Shape{1, 3, oh, ow}));
    for (int o = 0; o < 3; ++o)
      for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c) {
          double acc = b.at(0, o, 0, 0);
          for (int i = 0; i < 2; ++i)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int yy = std::clamp(r * stride + ky - 1, 0, 4);
                const int xx = std::clamp(c * stride + kx - 1, 0, 5);
                acc += w.at(o, i, ky, kx) * x.at(0, i, yy, xx);
              }
          EXPECT_NEAR(y.at(0, o, r, c), acc, 1e-12);
        }
  }
}

TEST(Autograd, InstanceNormConcatGram) {
  std::mt19937_64 rng(5);
  auto x = param({2, 3, 4, 4}, rng);
  auto z = param({2, 2, 4, 4}, rng);
  std::mt19937_64 wr(7);
  const Tensor w1 = random_tensor({2, 5, 4, 4}, wr);
  const Tensor w2 = random_tensor({2, 1, 5, 5}, wr);
  auto loss = [&] {
    auto y = ag::concat_channels(ag::instance_norm(x), z);
    return ag::add(ag::sum(ag::mul(y, ag::constant(w1))), ag::sum(ag::mul(ag::gram(y), ag::constant(w2))));
  };
  EXPECT_LT(grad_check(loss, {x, z}, rng, 30).max_rel_error, 1e-5);
}

TEST(Autograd, InstanceNormStatistics) {
  std::mt19937_64 rng(6);
  auto y = ag::instance_norm(ag::constant(random_tensor({2, 3, 5, 5}, rng)))->value;
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c) {
      double m = 0, v = 0;
      for (int i = 0; i < 25; ++i) m += y.at(n, c, i / 5, i % 5);
      m /= 25;
      for (int i = 0; i < 25; ++i) v += std::pow(y.at(n, c, i / 5, i % 5) - m, 2);
      EXPECT_NEAR(m, 0.0, 1e-12);
      EXPECT_NEAR(v / 25, 1.0, 1e-3);
    }
}

TEST(Autograd, BceAndMse) {
  std::mt19937_64 rng(7);
  auto p = param({1, 1, 3, 3}, rng, 0.05, 0.95);
  auto q = param({1, 1, 3, 3}, rng);
  auto loss = [&] { return ag::add(ag::add(ag::bce(p, 1.0), ag::bce(p, 0.3)), ag::mse(p, q)); };
  EXPECT_LT(grad_check(loss, {p, q}, rng, 9).max_rel_error, 1e-6);
}

TEST(Autograd, BceClampHasZeroGradient) {
  auto p = ag::leaf(Tensor(Shape{1, 1, 1, 2}, std::vector<double>{0.0, 1.0}), true);
  auto l = ag::bce(p, 1.0);
  EXPECT_NEAR(l->value.item(), -0.5 * std::log(ag::kProbClamp) - 0.5 * std::log(1 - ag::kProbClamp), 1e-12);
  ag::backward(l);
  EXPECT_EQ(p->grad[0], 0.0);
  EXPECT_EQ(p->grad[1], 0.0);
}

TEST(Autograd, GradReverseNegatesOnlyTheBackwardPass) {
  std::mt19937_64 rng(8);
  auto x = param({1, 1, 2, 2}, rng);
  auto y = ag::grad_reverse(x, 1.0);
  EXPECT_EQ(y->value, x->value);
  ag::backward(ag::sum_squares(y));
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(x->grad[i], -2.0 * x->value[i]);
}

TEST(Autograd, GradientsAccumulateUntilZeroed) {
  auto x = ag::leaf(Tensor::scalar(3.0), true);
  ag::backward(ag::square(x));
  ag::backward(ag::square(x));
  EXPECT_EQ(x->grad[0], 12.0);
  x->zero_grad();
  ag::backward(ag::square(x));
  EXPECT_EQ(x->grad[0], 6.0);
}

TEST(Autograd, SharedSubgraphVisitedOnce) {
  auto x = ag::leaf(Tensor::scalar(2.0), true);
  auto y = ag::square(x);
  ag::backward(ag::add(y, y));  // d/dx 2x^2 = 4x
  EXPECT_EQ(x->grad[0], 8.0);
}

TEST(Autograd, ShapeMismatchThrows) {
  auto a = ag::constant(Tensor(Shape{1, 1, 2, 2}));
  auto b = ag::constant(Tensor(Shape{1, 1, 2, 3}));
  EXPECT_THROW(ag::add(a, b), ArgumentError);
  EXPECT_THROW(ag::concat_channels(a, b), ArgumentError);
}
