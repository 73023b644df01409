#pragma once

#include <optional>
#include <string>
#include <vector>

#include "taskweave/feature_store.hpp"
#include "taskweave/nn.hpp"

namespace taskweave {

using Mat = ad::Mat;

struct AnchorQuery {
  double center = 0.5;  // normalized, in [0, 1]
  double width = 0.1;   // normalized, in (0, 1]

  void validate() const {
    if (center < 0.0 || center > 1.0)
      throw ValidationError("anchor center outside [0,1]");
    if (width <= 0.0 || width > 1.0)
      throw ValidationError("anchor width outside (0,1]");
  }
};

inline double inverse_sigmoid(double x, double eps = 1e-6) {
  const double c = std::clamp(x, eps, 1.0 - eps);
  return std::log(c / (1.0 - c));
}

struct MomentPredictions {
  ad::Tensor moments;  // [N_q x 2] normalized (center, width), sigmoid-bounded
  ad::Tensor logits;   // [N_q x 1] foreground scores
  std::vector<ad::Tensor> aux_moments;  // per decoder layer, final included last
  std::vector<ad::Tensor> aux_logits;
};

inline std::vector<std::pair<double, double>> moments_to_seconds(
    const Eigen::MatrixXd& moments, double duration) {
  std::vector<std::pair<double, double>> out;
  out.reserve(moments.rows());
  for (Eigen::Index i = 0; i < moments.rows(); ++i) {
    const double c = moments(i, 0), w = moments(i, 1);
    double s = std::clamp((c - w / 2.0) * duration, 0.0, duration);
    double e = std::clamp((c + w / 2.0) * duration, 0.0, duration);
    if (s > e) std::swap(s, e);
    out.emplace_back(s, e);
  }
  return out;
}

// DETR-style decoder with dynamic anchor moment queries. Each layer
// cross-attends the queries to the clip features using anchor-conditioned
// positional encodings and predicts a (dc, dw) residual applied in
// inverse-sigmoid space. Refinement and classification heads are shared
// across layers; every layer's outputs are retained for deep supervision.
class MrDecoder {
 public:
  MrDecoder() = default;
  MrDecoder(nn::ParamRegistry& reg, const std::string& prefix, Rng& rng,
            Eigen::Index d, int num_queries = 10, int layers = 2,
            int heads = 8, double dropout = 0.1)
      : d_(d), num_queries_(num_queries) {
    Mat anchors(num_queries, 2);
    for (int i = 0; i < num_queries; ++i) {
      anchors(i, 0) = inverse_sigmoid((i + 0.5) / num_queries);
      anchors(i, 1) = inverse_sigmoid(0.1);
    }
    anchor_logits_ = reg.add(prefix + ".anchor_logits", std::move(anchors));
    query_embed_ = reg.add(prefix + ".query_embed",
                           nn::xavier(rng, num_queries, d));
    anchor_pos_proj_ = nn::Linear(reg, prefix + ".anchor_pos_proj", rng, d, d);
    // normalizes the memory so content and positional encodings live on
    // comparable scales inside the cross-attention dot products
    input_norm_ = nn::LayerNorm(reg, prefix + ".input_norm", d);
    for (int l = 0; l < layers; ++l) {
      self_layers_.emplace_back(reg, prefix + ".self" + std::to_string(l), rng,
                                d, heads, dropout);
      cross_layers_.emplace_back(reg, prefix + ".cross" + std::to_string(l),
                                 rng, d, heads, dropout);
    }
    refine_hidden_ = nn::Linear(reg, prefix + ".refine_hidden", rng, d, d);
    refine_out_ = nn::Linear(reg, prefix + ".refine_out", rng, d, 2);
    class_head_ = nn::Linear(reg, prefix + ".class_head", rng, d, 1);
  }

  int num_queries() const { return num_queries_; }
  const std::vector<nn::TransformerLayer>& self_layers() const {
    return self_layers_;
  }
  const std::vector<nn::TransformerLayer>& cross_layers() const {
    return cross_layers_;
  }

  // decoder input must already carry any feedback mask (see feedback.hpp)
  MomentPredictions decode(const ad::Tensor& x_mr, const nn::Context& ctx,
                           std::optional<Mat> anchor_override = {}) const {
    // each clip is embedded like a minimal anchor (center (i+0.5)/n, width
    // 1/n) so key and anchor-query positions share one structure
    const Eigen::Index n = x_mr.rows();
    Mat clip_cw(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      clip_cw(i, 0) = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
      clip_cw(i, 1) = 1.0 / static_cast<double>(n);
    }
    ad::Tensor clips = ad::Tensor::constant(std::move(clip_cw));
    ad::Tensor mem_pos = ad::concat_cols(
        nn::sinusoidal_embed(ad::slice_cols(clips, 0, 1), d_ / 2),
        nn::sinusoidal_embed(ad::slice_cols(clips, 1, 1), d_ / 2));
    ad::Tensor a = anchor_logits_;
    if (anchor_override) {
      Mat logits(anchor_override->rows(), 2);
      for (Eigen::Index i = 0; i < anchor_override->rows(); ++i) {
        AnchorQuery q{(*anchor_override)(i, 0), (*anchor_override)(i, 1)};
        q.validate();
        logits(i, 0) = inverse_sigmoid(q.center);
        logits(i, 1) = inverse_sigmoid(q.width);
      }
      a = ad::Tensor::constant(std::move(logits));
    }
    ad::Tensor mem = input_norm_.forward(x_mr);
    ad::Tensor tgt = query_embed_;
    MomentPredictions pred;
    for (size_t l = 0; l < cross_layers_.size(); ++l) {
      ad::Tensor anchors = ad::sigmoid(a);
      ad::Tensor qpos = anchor_pos(anchors);
      tgt = self_layers_[l].self_forward(tgt, qpos, ctx);
      // anchor-modulated attention: each query gets a Gaussian logit bias
      // centered on its current anchor, widening with the anchor width, so
      // location-aware attention exists from the first step
      tgt = cross_layers_[l].forward(
          tgt, qpos, mem, mem_pos, ctx,
          ad::Tensor::constant(anchor_bias(anchors.value(), n)));
      ad::Tensor delta =
          refine_out_.forward(ad::relu(refine_hidden_.forward(tgt)));
      a = ad::add(a, delta);
      pred.aux_moments.push_back(ad::sigmoid(a));
      pred.aux_logits.push_back(class_head_.forward(tgt));
    }
    pred.moments = pred.aux_moments.back();
    pred.logits = pred.aux_logits.back();
    return pred;
  }

 private:
  // [N_q x N] logit bias -0.5 ((p_i - c_q) / (w_q / 2))^2 built on the
  // detached anchors; p_i is the normalized clip center
  static Mat anchor_bias(const Mat& anchors, Eigen::Index n) {
    Mat bias(anchors.rows(), n);
    for (Eigen::Index q = 0; q < anchors.rows(); ++q) {
      const double c = anchors(q, 0);
      const double half_w = std::max(anchors(q, 1) / 2.0, 1.0 / double(n));
      for (Eigen::Index i = 0; i < n; ++i) {
        const double p = (double(i) + 0.5) / double(n);
        const double z = (p - c) / half_w;
        bias(q, i) = -0.5 * z * z;
      }
    }
    return bias;
  }

  ad::Tensor anchor_pos(const ad::Tensor& anchors) const {
    ad::Tensor c = ad::slice_cols(anchors, 0, 1);
    ad::Tensor w = ad::slice_cols(anchors, 1, 1);
    ad::Tensor emb = ad::concat_cols(nn::sinusoidal_embed(c, d_ / 2),
                                     nn::sinusoidal_embed(w, d_ / 2));
    return anchor_pos_proj_.forward(emb);
  }

  Eigen::Index d_ = 0;
  int num_queries_ = 0;
  ad::Tensor anchor_logits_;
  ad::Tensor query_embed_;
  nn::Linear anchor_pos_proj_;
  nn::LayerNorm input_norm_;
  std::vector<nn::TransformerLayer> self_layers_;
  std::vector<nn::TransformerLayer> cross_layers_;
  nn::Linear refine_hidden_, refine_out_, class_head_;
};

}  // namespace taskweave
