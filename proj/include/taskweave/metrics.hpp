#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "taskweave/feature_store.hpp"

namespace taskweave {

inline double tiou(std::pair<double, double> a, std::pair<double, double> b) {
  const double inter =
      std::max(0.0, std::min(a.second, b.second) - std::max(a.first, b.first));
  const double uni = (a.second - a.first) + (b.second - b.first) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

struct MrEvalResult {
  double r1_050 = 0.0;
  double r1_070 = 0.0;
  double map_050 = 0.0;
  double map_075 = 0.0;
  double map_avg = 0.0;
};

struct HdEvalResult {
  double map = 0.0;
  double hit1 = 0.0;
};

namespace detail {

// ranked predictions sorted by confidence descending, ties by earlier start
inline std::vector<std::array<double, 3>> ranked(
    std::vector<std::array<double, 3>> preds) {
  std::stable_sort(preds.begin(), preds.end(),
                   [](const auto& a, const auto& b) {
                     if (a[2] != b[2]) return a[2] > b[2];
                     return a[0] < b[0];
                   });
  return preds;
}

// VOC-style continuous AP: greedy TP assignment in rank order, then the area
// under the precision-envelope interpolated PR curve
inline double average_precision(
    const std::vector<std::array<double, 3>>& preds_ranked,
    const std::vector<std::pair<double, double>>& gts, double threshold) {
  if (gts.empty()) return 0.0;
  std::vector<bool> taken(gts.size(), false);
  std::vector<bool> tp(preds_ranked.size(), false);
  for (size_t p = 0; p < preds_ranked.size(); ++p) {
    int best = -1;
    double best_iou = threshold;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double iou =
          tiou({preds_ranked[p][0], preds_ranked[p][1]}, gts[g]);
      if (iou >= best_iou) {
        best_iou = iou;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      taken[best] = true;
      tp[p] = true;
    }
  }
  std::vector<double> precision, recall;
  int tps = 0;
  for (size_t p = 0; p < preds_ranked.size(); ++p) {
    tps += tp[p];
    precision.push_back(static_cast<double>(tps) / static_cast<double>(p + 1));
    recall.push_back(static_cast<double>(tps) / static_cast<double>(gts.size()));
  }
  // precision envelope
  for (int p = static_cast<int>(precision.size()) - 2; p >= 0; --p)
    precision[p] = std::max(precision[p], precision[p + 1]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (size_t p = 0; p < precision.size(); ++p) {
    ap += (recall[p] - prev_recall) * precision[p];
    prev_recall = recall[p];
  }
  return ap;
}

}  // namespace detail

struct EvalItem {
  std::vector<std::array<double, 3>> pred_windows;  // (start, end, confidence)
  std::vector<std::pair<double, double>> gt_windows;
};

inline double recall_at_1(const std::vector<EvalItem>& items, double threshold) {
  if (items.empty()) return 0.0;
  int hits = 0;
  for (const auto& item : items) {
    if (item.pred_windows.empty() || item.gt_windows.empty()) continue;
    const auto ranked = detail::ranked(item.pred_windows);
    for (const auto& gt : item.gt_windows) {
      if (tiou({ranked[0][0], ranked[0][1]}, gt) >= threshold) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(items.size());
}

inline double map_at(const std::vector<EvalItem>& items, double threshold) {
  if (items.empty()) return 0.0;
  double total = 0.0;
  int counted = 0;
  for (const auto& item : items) {
    if (item.gt_windows.empty()) continue;
    total += detail::average_precision(detail::ranked(item.pred_windows),
                                       item.gt_windows, threshold);
    ++counted;
  }
  return counted > 0 ? total / counted : 0.0;
}

inline MrEvalResult mr_map(const std::vector<EvalItem>& items) {
  MrEvalResult r;
  r.r1_050 = recall_at_1(items, 0.5);
  r.r1_070 = recall_at_1(items, 0.7);
  r.map_050 = map_at(items, 0.5);
  r.map_075 = map_at(items, 0.75);
  double sum = 0.0;
  for (int t = 0; t < 10; ++t) sum += map_at(items, 0.5 + 0.05 * t);
  r.map_avg = sum / 10.0;
  return r;
}

struct HdEvalItem {
  std::vector<double> scores;
  std::vector<int> labels;
};

// AP of the clip ranking with positives at label >= very_good_threshold;
// score ties break by earlier clip index (stable ordering).
inline double clip_ap(const HdEvalItem& item, int very_good_threshold) {
  std::vector<int> order(item.scores.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return item.scores[a] > item.scores[b];
  });
  int total_pos = 0;
  for (int l : item.labels) total_pos += l >= very_good_threshold;
  if (total_pos == 0) return 0.0;
  double ap = 0.0;
  int tps = 0;
  for (size_t rank = 0; rank < order.size(); ++rank) {
    if (item.labels[order[rank]] >= very_good_threshold) {
      ++tps;
      ap += static_cast<double>(tps) / static_cast<double>(rank + 1);
    }
  }
  return ap / total_pos;
}

inline HdEvalResult hd_eval(const std::vector<HdEvalItem>& items,
                            int very_good_threshold = 4) {
  HdEvalResult r;
  int counted = 0;
  for (const auto& item : items) {
    int total_pos = 0;
    for (int l : item.labels) total_pos += l >= very_good_threshold;
    if (total_pos == 0 || item.scores.empty()) continue;
    ++counted;
    r.map += clip_ap(item, very_good_threshold);
    const int top = static_cast<int>(std::distance(
        item.scores.begin(),
        std::max_element(item.scores.begin(), item.scores.end())));
    r.hit1 += item.labels[top] >= very_good_threshold ? 1.0 : 0.0;
  }
  if (counted > 0) {
    r.map /= counted;
    r.hit1 /= counted;
  }
  return r;
}

inline nlohmann::json eval_report(const MrEvalResult& mr, const HdEvalResult& hd) {
  return nlohmann::json{{"mr", {{"r1_050", mr.r1_050},
                                {"r1_070", mr.r1_070},
                                {"map_050", mr.map_050},
                                {"map_075", mr.map_075},
                                {"map_avg", mr.map_avg}}},
                        {"hd", {{"map", hd.map}, {"hit1", hd.hit1}}}};
}

}  // namespace taskweave
