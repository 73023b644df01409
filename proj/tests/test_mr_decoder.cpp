#include <gtest/gtest.h>

#include "taskweave/mr_decoder.hpp"

using namespace taskweave;
namespace ad = taskweave::ad;

namespace {

Mat random_mat(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

TEST(InverseSigmoid, InvertsSigmoid) {
  for (double x : {0.01, 0.1, 0.5, 0.9, 0.99}) {
    const double logit = inverse_sigmoid(x);
    EXPECT_NEAR(1.0 / (1.0 + std::exp(-logit)), x, 1e-9);
  }
  // clamped at the boundary instead of diverging
  EXPECT_TRUE(std::isfinite(inverse_sigmoid(0.0)));
  EXPECT_TRUE(std::isfinite(inverse_sigmoid(1.0)));
}

TEST(AnchorQuery, Validation) {
  EXPECT_NO_THROW((AnchorQuery{0.5, 0.1}.validate()));
  EXPECT_THROW((AnchorQuery{-0.1, 0.1}.validate()), ValidationError);
  EXPECT_THROW((AnchorQuery{1.1, 0.1}.validate()), ValidationError);
  EXPECT_THROW((AnchorQuery{0.5, 0.0}.validate()), ValidationError);
  EXPECT_THROW((AnchorQuery{0.5, 1.5}.validate()), ValidationError);
}

TEST(MomentsToSeconds, ArithmeticAndClamping) {
  Mat moments(3, 2);
  moments << 0.5, 0.2,   // (0.4, 0.6) of 100s
             0.05, 0.2,  // clamps at 0
             0.95, 0.2;  // clamps at duration
  const auto windows = moments_to_seconds(moments, 100.0);
  EXPECT_NEAR(windows[0].first, 40.0, 1e-12);
  EXPECT_NEAR(windows[0].second, 60.0, 1e-12);
  EXPECT_NEAR(windows[1].first, 0.0, 1e-12);
  EXPECT_NEAR(windows[1].second, 15.0, 1e-12);
  EXPECT_NEAR(windows[2].first, 85.0, 1e-12);
  EXPECT_NEAR(windows[2].second, 100.0, 1e-12);
}

TEST(MrDecoder, InitialAnchorsAreSpreadCentersSmallWidths) {
  nn::ParamRegistry reg;
  Rng init(31);
  MrDecoder dec(reg, "mr", init, 16, 10, 2, 4, 0.0);
  Mat logits = reg.find("mr.anchor_logits").value();
  for (int i = 0; i < 10; ++i) {
    const double c = 1.0 / (1.0 + std::exp(-logits(i, 0)));
    const double w = 1.0 / (1.0 + std::exp(-logits(i, 1)));
    EXPECT_NEAR(c, (i + 0.5) / 10.0, 1e-9);
    EXPECT_NEAR(w, 0.1, 1e-9);
  }
}

TEST(MrDecoder, OutputShapesAndBounds) {
  nn::ParamRegistry reg;
  Rng init(32);
  MrDecoder dec(reg, "mr", init, 16, 10, 3, 4, 0.0);
  Rng rng(41);
  nn::Context ctx{false, nullptr};
  MomentPredictions p = dec.decode(ad::Tensor::constant(random_mat(rng, 20, 16)), ctx);
  EXPECT_EQ(p.moments.rows(), 10);
  EXPECT_EQ(p.moments.cols(), 2);
  EXPECT_EQ(p.logits.rows(), 10);
  EXPECT_EQ(p.logits.cols(), 1);
  ASSERT_EQ(p.aux_moments.size(), 3u);
  ASSERT_EQ(p.aux_logits.size(), 3u);
  EXPECT_TRUE(p.moments.value() == p.aux_moments.back().value());
  for (const auto& m : p.aux_moments) {
    EXPECT_GE(m.value().minCoeff(), 0.0);
    EXPECT_LE(m.value().maxCoeff(), 1.0);
  }
}

TEST(MrDecoder, AuxLayersDiffer) {
  nn::ParamRegistry reg;
  Rng init(33);
  MrDecoder dec(reg, "mr", init, 16, 6, 2, 4, 0.0);
  Rng rng(42);
  nn::Context ctx{false, nullptr};
  MomentPredictions p = dec.decode(ad::Tensor::constant(random_mat(rng, 15, 16)), ctx);
  EXPECT_FALSE(p.aux_moments[0].value() == p.aux_moments[1].value());
}

TEST(MrDecoder, AnchorOverrideSeedsRefinement) {
  nn::ParamRegistry reg;
  Rng init(34);
  MrDecoder dec(reg, "mr", init, 16, 4, 1, 4, 0.0);
  Rng rng(43);
  Mat x = random_mat(rng, 12, 16);
  nn::Context ctx{false, nullptr};

  Mat anchors(4, 2);
  anchors << 0.1, 0.2, 0.3, 0.2, 0.6, 0.3, 0.9, 0.1;
  MomentPredictions p = dec.decode(ad::Tensor::constant(x), ctx, anchors);

  // one refinement step in inverse-sigmoid space, recomputed by hand
  MomentPredictions base = dec.decode(ad::Tensor::constant(x), ctx, anchors);
  EXPECT_TRUE(p.moments.value() == base.moments.value());
  for (int i = 0; i < 4; ++i) {
    // refined anchors stay in (0,1) but have moved off the override
    EXPECT_GT(p.moments.value()(i, 0), 0.0);
    EXPECT_LT(p.moments.value()(i, 0), 1.0);
  }
  EXPECT_FALSE(p.moments.value().col(0).isApprox(anchors.col(0), 1e-12));

  Mat bad(1, 2);
  bad << 1.5, 0.1;
  EXPECT_THROW(dec.decode(ad::Tensor::constant(x), ctx, bad), ValidationError);
}

TEST(MrDecoder, RefinementIsResidualInLogitSpace) {
  // zero out the refinement head: predicted moments must equal the anchors
  nn::ParamRegistry reg;
  Rng init(35);
  MrDecoder dec(reg, "mr", init, 16, 5, 2, 4, 0.0);
  reg.find("mr.refine_out.weight").mutable_value().setZero();
  reg.find("mr.refine_out.bias").mutable_value().setZero();
  Rng rng(44);
  nn::Context ctx{false, nullptr};
  Mat anchors(5, 2);
  anchors << 0.1, 0.1, 0.3, 0.2, 0.5, 0.3, 0.7, 0.2, 0.9, 0.1;
  MomentPredictions p =
      dec.decode(ad::Tensor::constant(random_mat(rng, 10, 16)), ctx, anchors);
  EXPECT_TRUE(p.moments.value().isApprox(anchors, 1e-9));
}

TEST(MrDecoder, GradientsReachAnchorsAndQueries) {
  nn::ParamRegistry reg;
  Rng init(36);
  MrDecoder dec(reg, "mr", init, 16, 4, 2, 4, 0.0);
  Rng rng(45);
  nn::Context ctx{false, nullptr};
  MomentPredictions p = dec.decode(ad::Tensor::constant(random_mat(rng, 10, 16)), ctx);
  ad::add(ad::sum(p.moments), ad::sum(p.logits)).backward();
  EXPECT_GT(reg.find("mr.anchor_logits").grad().norm(), 0.0);
  EXPECT_GT(reg.find("mr.query_embed").grad().norm(), 0.0);
  EXPECT_GT(reg.find("mr.class_head.weight").grad().norm(), 0.0);
}

}  // namespace
