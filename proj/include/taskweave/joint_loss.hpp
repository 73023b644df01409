#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "taskweave/feature_store.hpp"
#include "taskweave/mr_decoder.hpp"
#include "taskweave/nn.hpp"

namespace taskweave {

// ---- 1D generalized IoU ----

inline double giou_1d(std::pair<double, double> a, std::pair<double, double> b) {
  if (a.first >= a.second || b.first >= b.second)
    throw ValidationError("giou_1d: degenerate interval");
  const double inter =
      std::max(0.0, std::min(a.second, b.second) - std::max(a.first, b.first));
  const double uni = (a.second - a.first) + (b.second - b.first) - inter;
  const double hull = std::max(a.second, b.second) - std::min(a.first, b.first);
  return inter / uni - (hull - uni) / hull;
}

// differentiable gIoU between a predicted (center, width) row and a fixed
// ground-truth (center, width) pair, all normalized
inline ad::Tensor giou_1d_t(const ad::Tensor& pred_cw,
                            std::pair<double, double> gt_cw) {
  ad::Tensor c = ad::slice_cols(pred_cw, 0, 1);
  ad::Tensor w = ad::slice_cols(pred_cw, 1, 1);
  ad::Tensor s1 = ad::sub(c, ad::scale(w, 0.5));
  ad::Tensor e1 = ad::add(c, ad::scale(w, 0.5));
  ad::Tensor s2 = ad::Tensor::scalar(gt_cw.first - gt_cw.second / 2.0);
  ad::Tensor e2 = ad::Tensor::scalar(gt_cw.first + gt_cw.second / 2.0);
  ad::Tensor zero = ad::Tensor::scalar(0.0);
  ad::Tensor inter = ad::maximum(
      zero, ad::sub(ad::minimum(e1, e2), ad::maximum(s1, s2)));
  ad::Tensor len1 = ad::sub(e1, s1);
  ad::Tensor uni = ad::sub(
      ad::add(len1, ad::Tensor::scalar(gt_cw.second)), inter);
  ad::Tensor hull = ad::sub(ad::maximum(e1, e2), ad::minimum(s1, s2));
  return ad::sub(ad::div(inter, uni), ad::div(ad::sub(hull, uni), hull));
}

// ---- Hungarian matching ----

struct MatchResult {
  // pairs of (ground-truth index, query index), one per ground truth
  std::vector<std::pair<int, int>> assignment;
  double cost = 0.0;
};

namespace detail {

// Kuhn-Munkres with potentials; rows <= cols, minimization.
// Returns per-row assigned column.
inline std::vector<int> hungarian_min(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

inline double assignment_cost(const Eigen::MatrixXd& cost,
                              const std::vector<int>& row_to_col) {
  double total = 0.0;
  for (int i = 0; i < static_cast<int>(row_to_col.size()); ++i)
    total += cost(i, row_to_col[i]);
  return total;
}

}  // namespace detail

// Globally optimal one-to-one assignment of ground truths (rows) to queries
// (columns). Among cost-optimal assignments the lexicographically smallest
// query-index sequence (in ground-truth order) is returned.
inline MatchResult solve_assignment(const Eigen::MatrixXd& cost) {
  MatchResult result;
  const int g = static_cast<int>(cost.rows());
  const int q = static_cast<int>(cost.cols());
  if (g == 0) return result;
  if (g > q) throw ValidationError("more ground truths than queries");
  const auto base = detail::hungarian_min(cost);
  const double optimal = detail::assignment_cost(cost, base);
  result.cost = optimal;

  // lexicographic tie-break: fix each gt to the lowest query index that still
  // admits a completion at optimal cost
  const double tol = 1e-9 * std::max(1.0, std::abs(optimal));
  std::vector<int> fixed(g, -1);
  std::vector<bool> col_taken(q, false);
  double fixed_cost = 0.0;
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < q; ++j) {
      if (col_taken[j]) continue;
      // residual problem over remaining rows/cols
      std::vector<int> rows, cols;
      for (int r = i + 1; r < g; ++r) rows.push_back(r);
      for (int c = 0; c < q; ++c)
        if (!col_taken[c] && c != j) cols.push_back(c);
      double rest = 0.0;
      if (!rows.empty()) {
        Eigen::MatrixXd sub(rows.size(), cols.size());
        for (size_t r = 0; r < rows.size(); ++r)
          for (size_t c = 0; c < cols.size(); ++c)
            sub(r, c) = cost(rows[r], cols[c]);
        rest = detail::assignment_cost(sub, detail::hungarian_min(sub));
      }
      if (fixed_cost + cost(i, j) + rest <= optimal + tol) {
        fixed[i] = j;
        col_taken[j] = true;
        fixed_cost += cost(i, j);
        break;
      }
    }
    if (fixed[i] < 0) throw std::logic_error("assignment tie-break failed");
  }
  for (int i = 0; i < g; ++i) result.assignment.emplace_back(i, fixed[i]);
  return result;
}

inline std::pair<double, double> window_to_cw(std::pair<double, double> window,
                                              double duration) {
  return {(window.first + window.second) / (2.0 * duration),
          (window.second - window.first) / duration};
}

// Matching cost: |pred - gt|_1 in normalized (c, w) + (1 - gIoU) - confidence.
inline Eigen::MatrixXd match_cost_matrix(
    const Eigen::MatrixXd& pred_moments, const Eigen::VectorXd& pred_logits,
    const std::vector<std::pair<double, double>>& gt_cw) {
  const int g = static_cast<int>(gt_cw.size());
  const int q = static_cast<int>(pred_moments.rows());
  Eigen::MatrixXd cost(g, q);
  for (int i = 0; i < g; ++i) {
    const auto [gc, gw] = gt_cw[i];
    const std::pair<double, double> gt_se{gc - gw / 2.0, gc + gw / 2.0};
    for (int j = 0; j < q; ++j) {
      const double pc = pred_moments(j, 0), pw = pred_moments(j, 1);
      const double l1 = std::abs(pc - gc) + std::abs(pw - gw);
      const double giou = giou_1d({pc - pw / 2.0, pc + pw / 2.0}, gt_se);
      const double conf = 1.0 / (1.0 + std::exp(-pred_logits(j)));
      cost(i, j) = l1 + (1.0 - giou) - conf;
    }
  }
  return cost;
}

inline MatchResult hungarian_match(
    const Eigen::MatrixXd& pred_moments, const Eigen::VectorXd& pred_logits,
    const std::vector<std::pair<double, double>>& gt_cw) {
  if (gt_cw.empty()) return {};
  return solve_assignment(match_cost_matrix(pred_moments, pred_logits, gt_cw));
}

// ---- loss terms ----

using LossBreakdown = std::map<std::string, double>;

namespace detail {

inline ad::Tensor bce_with_logits_mean(const ad::Tensor& logits,
                                       const Eigen::VectorXd& targets) {
  ad::Tensor y = ad::Tensor::constant(targets);
  ad::Tensor softplus_neg_abs =
      ad::log(ad::add_const(ad::exp(ad::neg(ad::abs(logits))), 1.0));
  return ad::mean(
      ad::add(ad::sub(ad::relu(logits), ad::mul(logits, y)), softplus_neg_abs));
}

}  // namespace detail

// set loss for one decoder layer; matching is recomputed on detached values
inline ad::Tensor mr_loss_single(
    const ad::Tensor& moments, const ad::Tensor& logits,
    const std::vector<std::pair<double, double>>& gt_cw,
    const MatchResult& match, LossBreakdown* breakdown = nullptr) {
  const int q = static_cast<int>(moments.rows());
  Eigen::VectorXd fg = Eigen::VectorXd::Zero(q);
  ad::Tensor l1 = ad::Tensor::scalar(0.0);
  ad::Tensor giou = ad::Tensor::scalar(0.0);
  if (!match.assignment.empty()) {
    for (const auto& [gi, qi] : match.assignment) {
      fg(qi) = 1.0;
      ad::Tensor pred = ad::slice_rows(moments, qi, 1);
      Eigen::MatrixXd gt(1, 2);
      gt << gt_cw[gi].first, gt_cw[gi].second;
      l1 = ad::add(l1, ad::mean(ad::abs(ad::sub(pred, ad::Tensor::constant(gt)))));
      giou = ad::add(
          giou, ad::sub(ad::Tensor::scalar(1.0), giou_1d_t(pred, gt_cw[gi])));
    }
    const double inv = 1.0 / static_cast<double>(match.assignment.size());
    l1 = ad::scale(l1, inv);
    giou = ad::scale(giou, inv);
  }
  ad::Tensor bce = detail::bce_with_logits_mean(logits, fg);
  if (breakdown) {
    (*breakdown)["mr.l1"] += l1.item();
    (*breakdown)["mr.giou"] += giou.item();
    (*breakdown)["mr.bce"] += bce.item();
  }
  return ad::add(ad::add(l1, giou), bce);
}

// L(theta_mr) = L_L1 + L_gIoU + L_BCE over the final layer, plus the same
// loss on every auxiliary layer when deep supervision is enabled.
inline ad::Tensor mr_loss(const MomentPredictions& preds,
                          const std::vector<std::pair<double, double>>& gt_cw,
                          bool aux_loss = true,
                          LossBreakdown* breakdown = nullptr) {
  const size_t layers = preds.aux_moments.size();
  const size_t first = aux_loss ? 0 : layers - 1;
  ad::Tensor total = ad::Tensor::scalar(0.0);
  for (size_t l = first; l < layers; ++l) {
    const auto& m = preds.aux_moments[l];
    const auto& lg = preds.aux_logits[l];
    MatchResult match =
        hungarian_match(m.value(), Eigen::VectorXd(lg.value().col(0)), gt_cw);
    total = ad::add(total,
                    mr_loss_single(m, lg, gt_cw, match,
                                   l + 1 == layers ? breakdown : nullptr));
  }
  return total;
}

struct HingeSample {
  // clip indices; sampled by the caller so the loss is a pure function
  std::vector<int> positives;
  std::vector<int> negatives;
};

// L(theta_hd) = L_hinge + L_neg + L_cont.
//   L_hinge: margin 0.2 over the sampled (positive, negative) clip pairs
//   L_neg:   -mean log(1 - sigmoid(s)) over a mismatched video-query pair
//   L_cont:  rank-aware contrastive over label thresholds 1..4, tau = 0.5
inline ad::Tensor hd_loss(const ad::Tensor& scores,
                          const std::vector<int>& labels,
                          const ad::Tensor& neg_pair_scores,
                          const HingeSample& sample,
                          LossBreakdown* breakdown = nullptr) {
  constexpr double kMargin = 0.2;
  constexpr double kTau = 0.5;

  ad::Tensor hinge = ad::Tensor::scalar(0.0);
  const size_t pairs = std::min(sample.positives.size(), sample.negatives.size());
  if (pairs >= 1) {
    for (size_t p = 0; p < pairs; ++p) {
      ad::Tensor s_hi = ad::slice_rows(scores, sample.positives[p], 1);
      ad::Tensor s_lo = ad::slice_rows(scores, sample.negatives[p], 1);
      hinge = ad::add(hinge,
                      ad::relu(ad::add_const(ad::sub(s_lo, s_hi), kMargin)));
    }
    hinge = ad::scale(hinge, 1.0 / static_cast<double>(pairs));
  } else if (breakdown) {
    (*breakdown)["hd.hinge_skipped"] = 1.0;
  }

  ad::Tensor neg = ad::Tensor::scalar(0.0);
  if (neg_pair_scores.defined()) {
    // -log(1 - sigmoid(s)) == softplus(s)
    neg = ad::mean(ad::add(
        ad::relu(neg_pair_scores),
        ad::log(ad::add_const(ad::exp(ad::neg(ad::abs(neg_pair_scores))), 1.0))));
  }

  ad::Tensor cont = ad::Tensor::scalar(0.0);
  int active_thresholds = 0;
  const double smax = scores.value().maxCoeff() / kTau;  // constant shift
  for (int r = 1; r <= 4; ++r) {
    Eigen::VectorXd mask(labels.size());
    int npos = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
      mask(i) = labels[i] >= r ? 1.0 : 0.0;
      npos += labels[i] >= r;
    }
    if (npos == 0) continue;
    ++active_thresholds;
    ad::Tensor e =
        ad::exp(ad::add_const(ad::scale(scores, 1.0 / kTau), -smax));
    ad::Tensor pos_sum = ad::sum(ad::mul(e, ad::Tensor::constant(mask)));
    cont = ad::add(cont, ad::neg(ad::log(ad::div(pos_sum, ad::sum(e)))));
  }
  if (active_thresholds > 0)
    cont = ad::scale(cont, 1.0 / static_cast<double>(active_thresholds));

  if (breakdown) {
    (*breakdown)["hd.hinge"] += hinge.item();
    (*breakdown)["hd.neg"] += neg.item();
    (*breakdown)["hd.cont"] += cont.item();
  }
  return ad::add(ad::add(hinge, neg), cont);
}

// ---- task-dependent combination ----

enum class LossType { kSum, kWeightedSum, kTaskDependent };

inline LossType loss_type_from_string(const std::string& s) {
  if (s == "sum") return LossType::kSum;
  if (s == "weighted_sum") return LossType::kWeightedSum;
  if (s == "task_dependent") return LossType::kTaskDependent;
  throw std::invalid_argument("unknown loss type: " + s);
}

inline std::string to_string(LossType t) {
  switch (t) {
    case LossType::kSum: return "sum";
    case LossType::kWeightedSum: return "weighted_sum";
    case LossType::kTaskDependent: return "task_dependent";
  }
  return "?";
}

// Learnable uncertainty parameters gamma = log(delta^2), initialized to 0.
struct LossState {
  ad::Tensor gamma_mr;
  ad::Tensor gamma_hd;

  LossState() = default;
  explicit LossState(nn::ParamRegistry& reg)
      : gamma_mr(reg.add("loss.gamma_mr", ad::Mat::Zero(1, 1))),
        gamma_hd(reg.add("loss.gamma_hd", ad::Mat::Zero(1, 1))) {}
};

// exp(-gamma_mr) * l_mr + 2 exp(-gamma_hd) * l_hd + gamma_mr + gamma_hd.
// The factor 2 comes from scaling the likelihood objective so the MR
// coefficient 1/(2 delta^2) becomes exp(-gamma); argmin-invariant.
inline ad::Tensor joint(const ad::Tensor& l_mr, const ad::Tensor& l_hd,
                        const LossState& state) {
  ad::Tensor mr_term = ad::mul(ad::exp(ad::neg(state.gamma_mr)), l_mr);
  ad::Tensor hd_term =
      ad::scale(ad::mul(ad::exp(ad::neg(state.gamma_hd)), l_hd), 2.0);
  return ad::add(ad::add(mr_term, hd_term),
                 ad::add(state.gamma_mr, state.gamma_hd));
}

inline ad::Tensor combine_losses(const ad::Tensor& l_mr, const ad::Tensor& l_hd,
                                 LossType type, const LossState& state,
                                 double w_mr = 1.0, double w_hd = 4.0) {
  switch (type) {
    case LossType::kSum:
      return ad::add(l_mr, l_hd);
    case LossType::kWeightedSum:
      return ad::add(ad::scale(l_mr, w_mr), ad::scale(l_hd, w_hd));
    case LossType::kTaskDependent:
      return joint(l_mr, l_hd, state);
  }
  return ad::add(l_mr, l_hd);
}

}  // namespace taskweave
