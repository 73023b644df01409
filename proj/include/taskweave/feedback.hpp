#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "taskweave/feature_store.hpp"
#include "taskweave/nn.hpp"

namespace taskweave {

enum class MaskKind { kM2m, kH2m };

struct GuidingMask {
  Eigen::VectorXd xi;  // nonnegative, length N
  MaskKind kind = MaskKind::kM2m;
};

enum class FeedbackMode { kNone, kMr2Hd, kHd2Mr, kBi, kMrThenHd, kHdThenMr };

inline FeedbackMode feedback_mode_from_string(const std::string& s) {
  if (s == "none") return FeedbackMode::kNone;
  if (s == "mr2hd") return FeedbackMode::kMr2Hd;
  if (s == "hd2mr") return FeedbackMode::kHd2Mr;
  if (s == "bi") return FeedbackMode::kBi;
  if (s == "mr_then_hd") return FeedbackMode::kMrThenHd;
  if (s == "hd_then_mr") return FeedbackMode::kHdThenMr;
  throw std::invalid_argument("unknown feedback mode: " + s);
}

inline std::string to_string(FeedbackMode m) {
  switch (m) {
    case FeedbackMode::kNone: return "none";
    case FeedbackMode::kMr2Hd: return "mr2hd";
    case FeedbackMode::kHd2Mr: return "hd2mr";
    case FeedbackMode::kBi: return "bi";
    case FeedbackMode::kMrThenHd: return "mr_then_hd";
    case FeedbackMode::kHdThenMr: return "hd_then_mr";
  }
  return "?";
}

// Moment-to-Mask: per moment, mark clips whose interval overlaps the moment
// with positive length, sum the binary vectors over queries and L2-normalize.
inline GuidingMask m2m_convert(
    const std::vector<std::pair<double, double>>& moments_s, double duration,
    int n, double clip_length = kDefaultClipLength) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(n);
  for (const auto& [start, end] : moments_s) {
    for (int i = 0; i < n; ++i) {
      const double clip_lo = i * clip_length;
      const double clip_hi = (i + 1) * clip_length;
      if (std::min(end, clip_hi) - std::max(start, clip_lo) > 0.0) sum(i) += 1.0;
    }
  }
  (void)duration;
  const double norm = sum.norm();
  GuidingMask mask;
  mask.kind = MaskKind::kM2m;
  mask.xi = norm > 0.0 ? Eigen::VectorXd(sum / norm) : sum;
  return mask;
}

// Highlightness-to-Mask: binarize at the mean; ties (== mean) map to 1.
// The mean is clamped to the maximum score: mathematically mean <= max, but
// floating-point summation can round above it for near-constant inputs, which
// would flip a constant vector from all-ones to all-zeros.
inline GuidingMask h2m_convert(const Eigen::VectorXd& scores) {
  GuidingMask mask;
  mask.kind = MaskKind::kH2m;
  const double mean = std::min(scores.mean(), scores.maxCoeff());
  mask.xi.resize(scores.size());
  for (Eigen::Index i = 0; i < scores.size(); ++i)
    mask.xi(i) = scores(i) >= mean ? 1.0 : 0.0;
  return mask;
}

// X + X (.) xi, with xi broadcast across feature columns. The mask enters the
// graph as a gradient-stopped constant.
inline ad::Tensor apply_mask(const ad::Tensor& x, const GuidingMask& mask) {
  if (mask.xi.size() != x.rows())
    throw ValidationError("guiding mask length does not match clip count");
  ad::Tensor xi = ad::Tensor::constant(mask.xi);
  return ad::add(x, ad::mul(x, xi));
}

// Effective per-pass routing for a training epoch.
struct FeedbackRouting {
  bool mask_mr = false;  // apply an H2M mask to the MR decoder input
  bool mask_hd = false;  // apply an M2M mask to the HD decoder input
  bool two_pass = false; // preliminary unmasked pass feeds both masks
};

inline FeedbackRouting feedback_active(int epoch, int max_epoch,
                                       FeedbackMode mode,
                                       double start_frac = 0.5) {
  FeedbackRouting r;
  if (mode == FeedbackMode::kNone) return r;
  if (epoch < static_cast<int>(std::ceil(max_epoch * start_frac))) return r;
  FeedbackMode effective = mode;
  if (mode == FeedbackMode::kMrThenHd || mode == FeedbackMode::kHdThenMr) {
    // the two phased modes switch direction at 3/4 of max epoch
    const bool second_phase = epoch >= (3 * max_epoch) / 4;
    if (mode == FeedbackMode::kMrThenHd)
      effective = second_phase ? FeedbackMode::kHd2Mr : FeedbackMode::kMr2Hd;
    else
      effective = second_phase ? FeedbackMode::kMr2Hd : FeedbackMode::kHd2Mr;
  }
  switch (effective) {
    case FeedbackMode::kMr2Hd:
      r.mask_hd = true;
      break;
    case FeedbackMode::kHd2Mr:
      r.mask_mr = true;
      break;
    case FeedbackMode::kBi:
      r.mask_mr = r.mask_hd = true;
      r.two_pass = true;
      break;
    default:
      break;
  }
  return r;
}

}  // namespace taskweave
