#include <gtest/gtest.h>

#include <functional>

#include "taskweave/autodiff.hpp"
#include "taskweave/rng.hpp"

namespace ad = taskweave::ad;
using ad::Mat;
using ad::Tensor;
using taskweave::Rng;

namespace {

Mat random_mat(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

// central finite differences of a scalar-valued function of one parameter
void check_gradient(const std::function<Tensor(const Tensor&)>& f, Mat x0,
                    double h = 1e-6, double tol = 1e-5) {
  Tensor x = Tensor::param(x0);
  Tensor y = f(x);
  ASSERT_EQ(y.rows(), 1);
  ASSERT_EQ(y.cols(), 1);
  y.backward();
  Mat analytic = x.grad();
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    for (Eigen::Index j = 0; j < x0.cols(); ++j) {
      Mat xp = x0, xm = x0;
      xp(i, j) += h;
      xm(i, j) -= h;
      const double fp = f(Tensor::constant(xp)).item();
      const double fm = f(Tensor::constant(xm)).item();
      const double numeric = (fp - fm) / (2.0 * h);
      const double scale = std::max({1.0, std::abs(numeric), std::abs(analytic(i, j))});
      EXPECT_NEAR(analytic(i, j), numeric, tol * scale)
          << "entry (" << i << "," << j << ")";
    }
  }
}

TEST(Autodiff, AddForwardAndGrad) {
  Rng rng(1);
  Mat a = random_mat(rng, 3, 4), b = random_mat(rng, 3, 4);
  check_gradient([&](const Tensor& x) {
    return ad::sum(ad::add(x, Tensor::constant(b)));
  }, a);
}

TEST(Autodiff, BroadcastRowColScalar) {
  Rng rng(2);
  Mat a = random_mat(rng, 3, 4);
  Mat row = random_mat(rng, 1, 4);
  Mat col = random_mat(rng, 3, 1);
  // grads flow to the broadcast operand too
  check_gradient([&](const Tensor& x) {
    return ad::sum(ad::add(Tensor::constant(a), x));
  }, row);
  check_gradient([&](const Tensor& x) {
    return ad::sum(ad::mul(Tensor::constant(a), x));
  }, col);
  check_gradient([&](const Tensor& x) {
    return ad::sum(ad::mul(Tensor::constant(a), x));
  }, Mat::Constant(1, 1, 0.7));
  // auto-swap: smaller operand first gives the same value
  Tensor swapped = ad::add(Tensor::constant(row), Tensor::constant(a));
  Mat expected = a + row.replicate(3, 1);
  EXPECT_TRUE(swapped.value().isApprox(expected));
}

TEST(Autodiff, MatmulTransposeGrad) {
  Rng rng(3);
  Mat a = random_mat(rng, 3, 4), b = random_mat(rng, 4, 2);
  check_gradient([&](const Tensor& x) {
    return ad::sum(ad::matmul(x, Tensor::constant(b)));
  }, a);
  check_gradient([&](const Tensor& x) {
    return ad::sum(ad::matmul(Tensor::constant(a), x));
  }, b);
  check_gradient([&](const Tensor& x) {
    return ad::sum(ad::matmul(ad::transpose(x), Tensor::constant(a)));
  }, random_mat(rng, 3, 5));
}

TEST(Autodiff, ElementwiseOps) {
  Rng rng(4);
  Mat a = random_mat(rng, 4, 3);
  // keep values away from the relu/abs kinks
  a = a.unaryExpr([](double v) { return std::abs(v) < 0.05 ? v + 0.2 : v; });
  for (auto op : {ad::relu, ad::sigmoid, ad::exp, ad::abs, ad::sin, ad::cos}) {
    check_gradient([&](const Tensor& x) { return ad::sum(op(x)); }, a);
  }
  Mat positive = (a.array().abs() + 0.5).matrix();
  check_gradient([&](const Tensor& x) { return ad::sum(ad::log(x)); }, positive);
}

TEST(Autodiff, DivMinMaxGrad) {
  Rng rng(5);
  Mat a = random_mat(rng, 3, 3);
  Mat b = (random_mat(rng, 3, 3).array().abs() + 0.5).matrix();
  check_gradient([&](const Tensor& x) {
    return ad::sum(ad::div(x, Tensor::constant(b)));
  }, a);
  check_gradient([&](const Tensor& x) {
    return ad::sum(ad::div(Tensor::constant(a), x));
  }, b);
  check_gradient([&](const Tensor& x) {
    return ad::sum(ad::minimum(x, Tensor::constant(b)));
  }, a);
  check_gradient([&](const Tensor& x) {
    return ad::sum(ad::maximum(x, Tensor::constant(b)));
  }, a);
}

TEST(Autodiff, MinimumTiesRouteToFirst) {
  Mat v = Mat::Constant(2, 2, 1.5);
  Tensor a = Tensor::param(v), b = Tensor::param(v);
  ad::sum(ad::minimum(a, b)).backward();
  EXPECT_TRUE(a.grad().isApprox(Mat::Ones(2, 2)));
  EXPECT_TRUE(b.grad().isApprox(Mat::Zero(2, 2)));
}

TEST(Autodiff, ReductionsAndSlices) {
  Rng rng(6);
  Mat a = random_mat(rng, 5, 4);
  check_gradient([&](const Tensor& x) { return ad::mean(x); }, a);
  check_gradient([&](const Tensor& x) {
    return ad::sum(ad::mul(ad::row_sum(x), ad::row_sum(x)));
  }, a);
  check_gradient([&](const Tensor& x) {
    return ad::sum(ad::slice_rows(x, 1, 3));
  }, a);
  check_gradient([&](const Tensor& x) {
    return ad::sum(ad::mul(ad::slice_cols(x, 1, 2), ad::slice_cols(x, 1, 2)));
  }, a);
  check_gradient([&](const Tensor& x) {
    return ad::sum(ad::mul(ad::concat_cols(x, x), ad::concat_cols(x, x)));
  }, a);
  check_gradient([&](const Tensor& x) {
    return ad::sum(ad::mul(ad::concat_rows(x, x), ad::concat_rows(x, x)));
  }, a);
}

TEST(Autodiff, ShiftRows) {
  Mat a(4, 1);
  a << 1, 2, 3, 4;
  Mat down = ad::shift_rows(Tensor::constant(a), 1).value();
  Mat up = ad::shift_rows(Tensor::constant(a), -1).value();
  Mat exp_down(4, 1), exp_up(4, 1);
  exp_down << 0, 1, 2, 3;
  exp_up << 2, 3, 4, 0;
  EXPECT_TRUE(down.isApprox(exp_down));
  EXPECT_TRUE(up.isApprox(exp_up));
  Rng rng(7);
  Mat b = random_mat(rng, 5, 3);
  for (int off : {-2, -1, 0, 1, 2}) {
    check_gradient([&, off](const Tensor& x) {
      Tensor s = ad::shift_rows(x, off);
      return ad::sum(ad::mul(s, s));
    }, b);
  }
}

TEST(Autodiff, SoftmaxRows) {
  Rng rng(8);
  Mat a = random_mat(rng, 3, 5);
  Tensor y = ad::softmax_rows(Tensor::constant(a));
  for (Eigen::Index i = 0; i < 3; ++i)
    EXPECT_NEAR(y.value().row(i).sum(), 1.0, 1e-12);
  Mat w = random_mat(rng, 3, 5);
  check_gradient([&](const Tensor& x) {
    return ad::sum(ad::mul(ad::softmax_rows(x), Tensor::constant(w)));
  }, a);
}

TEST(Autodiff, LayerNormRows) {
  Rng rng(9);
  Mat a = random_mat(rng, 4, 6);
  Tensor y = ad::layer_norm_rows(Tensor::constant(a));
  for (Eigen::Index i = 0; i < 4; ++i) {
    EXPECT_NEAR(y.value().row(i).mean(), 0.0, 1e-12);
    EXPECT_NEAR(y.value().row(i).squaredNorm() / 6.0, 1.0, 1e-4);
  }
  Mat w = random_mat(rng, 4, 6);
  check_gradient([&](const Tensor& x) {
    return ad::sum(ad::mul(ad::layer_norm_rows(x), Tensor::constant(w)));
  }, a, 1e-6, 1e-4);
}

TEST(Autodiff, MaxpoolRows) {
  Mat a(5, 1);
  a << 1, 3, 2, 5, 4;
  Mat pooled = ad::maxpool_rows(Tensor::constant(a), 5).value();
  Mat expected(5, 1);
  expected << 3, 5, 5, 5, 5;
  EXPECT_TRUE(pooled.isApprox(expected));
  Rng rng(10);
  Mat b = random_mat(rng, 7, 3);
  check_gradient([&](const Tensor& x) {
    Tensor p = ad::maxpool_rows(x, 5);
    return ad::sum(ad::mul(p, p));
  }, b);
}

TEST(Autodiff, StopGradientBlocksFlow) {
  Mat v = Mat::Constant(2, 2, 3.0);
  Tensor x = Tensor::param(v);
  Tensor y = ad::sum(ad::mul(ad::stop_gradient(x), x));
  y.backward();
  EXPECT_TRUE(x.grad().isApprox(Mat::Constant(2, 2, 3.0)));  // not 6
}

TEST(Autodiff, SharedSubgraphAccumulates) {
  Tensor x = Tensor::param(Mat::Constant(1, 1, 2.0));
  Tensor y = ad::add(ad::mul(x, x), ad::mul(x, x));  // 2x^2
  ad::sum(y).backward();
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 8.0);
}

TEST(Autodiff, BackwardRequiresScalar) {
  Tensor x = Tensor::param(Mat::Ones(2, 2));
  EXPECT_THROW(x.backward(), std::logic_error);
}

TEST(Autodiff, RepeatedBackwardResetsGrads) {
  Tensor x = Tensor::param(Mat::Constant(1, 1, 3.0));
  Tensor y = ad::mul(x, x);
  y.backward();
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 6.0);  // not accumulated to 12
}

TEST(Autodiff, DeepChainGradient) {
  // a long chain exercises the iterative topological sort
  Tensor x = Tensor::param(Mat::Constant(1, 1, 1.0));
  Tensor y = x;
  for (int i = 0; i < 5000; ++i) y = ad::add_const(y, 0.001);
  ad::sum(y).backward();
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 1.0);
}

}  // namespace
