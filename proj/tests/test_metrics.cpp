#include <gtest/gtest.h>

#include <algorithm>

#include "taskweave/metrics.hpp"
#include "taskweave/rng.hpp"

using namespace taskweave;

namespace {

// independent quadratic-time AP: rank by confidence (ties: earlier start),
// greedy TP assignment, then area under the enveloped PR curve
double brute_force_ap(std::vector<std::array<double, 3>> preds,
                      const std::vector<std::pair<double, double>>& gts,
                      double threshold) {
  if (gts.empty()) return 0.0;
  std::stable_sort(preds.begin(), preds.end(), [](const auto& a, const auto& b) {
    if (a[2] != b[2]) return a[2] > b[2];
    return a[0] < b[0];
  });
  std::vector<bool> used(gts.size(), false);
  std::vector<double> prec, rec;
  int tp = 0;
  for (size_t p = 0; p < preds.size(); ++p) {
    double best = threshold;
    int pick = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      const double iou = tiou({preds[p][0], preds[p][1]}, gts[g]);
      if (iou >= best) {
        best = iou;
        pick = static_cast<int>(g);
      }
    }
    if (pick >= 0) {
      used[pick] = true;
      ++tp;
    }
    prec.push_back(double(tp) / double(p + 1));
    rec.push_back(double(tp) / double(gts.size()));
  }
  double ap = 0.0;
  for (size_t p = 0; p < prec.size(); ++p) {
    double env = 0.0;
    for (size_t q = p; q < prec.size(); ++q) env = std::max(env, prec[q]);
    const double prev = p == 0 ? 0.0 : rec[p - 1];
    ap += (rec[p] - prev) * env;
  }
  return ap;
}

TEST(Tiou, KnownValues) {
  EXPECT_DOUBLE_EQ(tiou({0, 10}, {5, 15}), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(tiou({0, 10}, {0, 10}), 1.0);
  EXPECT_DOUBLE_EQ(tiou({0, 5}, {5, 10}), 0.0);
  EXPECT_DOUBLE_EQ(tiou({0, 5}, {20, 30}), 0.0);
}

TEST(Ap, RankOneTrueThenFalsePositive) {
  EvalItem item;
  item.pred_windows = {{0, 10, 0.9}, {20, 30, 0.8}};
  item.gt_windows = {{0, 10}};
  // the trailing FP does not reduce the interpolated AP at full recall
  EXPECT_DOUBLE_EQ(map_at({item}, 0.5), 1.0);
}

TEST(Ap, MatchesBruteForceOnRandomFixtures) {
  Rng rng(81);
  for (int trial = 0; trial < 500; ++trial) {
    EvalItem item;
    const int npred = 1 + static_cast<int>(rng.uniform_int(8));
    const int ngt = 1 + static_cast<int>(rng.uniform_int(3));
    for (int p = 0; p < npred; ++p) {
      double s = std::floor(rng.uniform(0, 20));
      double e = s + 1 + std::floor(rng.uniform(0, 10));
      // quantized confidences force plenty of rank ties
      item.pred_windows.push_back({s, e, std::floor(rng.uniform(0, 5)) / 4.0});
    }
    double cursor = 0.0;
    for (int gix = 0; gix < ngt; ++gix) {
      double s = cursor + std::floor(rng.uniform(0, 4));
      double e = s + 1 + std::floor(rng.uniform(0, 8));
      item.gt_windows.emplace_back(s, e);
      cursor = e;
    }
    for (double t : {0.3, 0.5, 0.75}) {
      EXPECT_NEAR(map_at({item}, t),
                  brute_force_ap(item.pred_windows, item.gt_windows, t), 1e-9)
          << "trial " << trial << " t " << t;
    }
  }
}

TEST(Ap, InvariantToInputOrder) {
  Rng rng(82);
  EvalItem item;
  for (int p = 0; p < 8; ++p) {
    double s = std::floor(rng.uniform(0, 20));
    item.pred_windows.push_back({s, s + 5, std::floor(rng.uniform(0, 3)) / 2.0});
  }
  item.gt_windows = {{2, 9}, {12, 18}};
  const double base = map_at({item}, 0.5);
  for (int shuffle = 0; shuffle < 20; ++shuffle) {
    EvalItem perm = item;
    for (size_t i = perm.pred_windows.size(); i > 1; --i)
      std::swap(perm.pred_windows[i - 1], perm.pred_windows[rng.uniform_int(i)]);
    EXPECT_DOUBLE_EQ(map_at({perm}, 0.5), base);
  }
}

TEST(RecallAt1, TopPredictionAgainstAnyGt) {
  EvalItem hit;
  hit.pred_windows = {{10, 20, 0.9}, {0, 5, 0.2}};
  hit.gt_windows = {{0, 4}, {11, 19}};
  EvalItem miss;
  miss.pred_windows = {{0, 5, 0.9}, {10, 20, 0.8}};
  miss.gt_windows = {{40, 50}};
  EXPECT_DOUBLE_EQ(recall_at_1({hit}, 0.5), 1.0);
  EXPECT_DOUBLE_EQ(recall_at_1({miss}, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(recall_at_1({hit, miss}, 0.5), 0.5);
}

TEST(MrMap, AveragesTenThresholds) {
  EvalItem item;
  item.pred_windows = {{0, 10, 0.9}};
  item.gt_windows = {{0, 8}};  // tIoU 0.8: counts for t in {0.5..0.8}
  MrEvalResult r = mr_map({item});
  EXPECT_DOUBLE_EQ(r.map_050, 1.0);
  EXPECT_DOUBLE_EQ(r.map_075, 1.0);
  EXPECT_DOUBLE_EQ(r.r1_050, 1.0);
  EXPECT_DOUBLE_EQ(r.r1_070, 1.0);
  EXPECT_NEAR(r.map_avg, 7.0 / 10.0, 1e-12);  // thresholds 0.50..0.80 pass
}

TEST(HdEval, ClipApByHand) {
  // scores rank clips [2, 0, 1]; positives (label 4) at clips 0 and 2
  HdEvalItem item;
  item.scores = {0.5, 0.1, 0.9};
  item.labels = {4, 0, 4};
  // AP = (1/1 + 2/2) / 2 = 1; positives occupy the top two ranks
  EXPECT_DOUBLE_EQ(clip_ap(item, 4), 1.0);

  item.scores = {0.1, 0.5, 0.9};  // positives now at ranks 1 and 3
  EXPECT_DOUBLE_EQ(clip_ap(item, 4), (1.0 / 1.0 + 2.0 / 3.0) / 2.0);
}

TEST(HdEval, MapAndHit1) {
  HdEvalItem good;
  good.scores = {0.9, 0.1};
  good.labels = {4, 0};
  HdEvalItem bad;
  bad.scores = {0.1, 0.9};
  bad.labels = {4, 0};
  HdEvalItem no_pos;  // skipped entirely
  no_pos.scores = {0.5, 0.5};
  no_pos.labels = {2, 3};
  HdEvalResult r = hd_eval({good, bad, no_pos});
  EXPECT_DOUBLE_EQ(r.hit1, 0.5);
  EXPECT_DOUBLE_EQ(r.map, (1.0 + 0.5) / 2.0);
}

TEST(HdEval, VeryGoodThresholdConfigurable) {
  HdEvalItem item;
  item.scores = {0.9, 0.1};
  item.labels = {3, 0};
  EXPECT_DOUBLE_EQ(hd_eval({item}, 4).map, 0.0);  // no label-4 positives
  EXPECT_DOUBLE_EQ(hd_eval({item}, 3).map, 1.0);
}

TEST(EvalReport, JsonShape) {
  MrEvalResult mr;
  mr.r1_050 = 0.5;
  HdEvalResult hd;
  hd.map = 0.25;
  const auto j = eval_report(mr, hd);
  EXPECT_DOUBLE_EQ(j["mr"]["r1_050"].get<double>(), 0.5);
  EXPECT_DOUBLE_EQ(j["hd"]["map"].get<double>(), 0.25);
  EXPECT_TRUE(j["mr"].contains("map_avg"));
  EXPECT_TRUE(j["hd"].contains("hit1"));
}

}  // namespace
