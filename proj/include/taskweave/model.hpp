#pragma once

#include <string>

#include "taskweave/feedback.hpp"
#include "taskweave/fusion_encoder.hpp"
#include "taskweave/hd_decoder.hpp"
#include "taskweave/mr_decoder.hpp"
#include "taskweave/task_decoupled_unit.hpp"

namespace taskweave {

struct ModelConfig {
  int dim_video = 64;
  int dim_text = 64;
  int dim = 64;  // shared hidden dimension D
  int fusion_layers = 2;
  int heads = 8;
  double dropout = 0.1;
  ExpertKind mr_expert = ExpertKind::kCnn;
  ExpertKind hd_expert = ExpertKind::kIdentity;
  int shared_layers = 2;
  int num_queries = 10;
  int mr_layers = 2;
  int hd_hidden_ratio = 2;
  double clip_length = kDefaultClipLength;
};

struct ModelOutput {
  MomentPredictions mr;
  ad::Tensor saliency;  // [N x 1]
};

// The full pipeline: fusion -> task-decoupled unit -> two decoders with the
// inter-task feedback routing applied between the heads.
class TaskWeaveModel {
 public:
  TaskWeaveModel(const ModelConfig& cfg, std::uint64_t init_seed)
      : cfg_(cfg) {
    Rng rng(init_seed);
    fusion_ = FusionEncoder(reg_, "fusion", rng, cfg.dim_video, cfg.dim_text,
                            cfg.dim, cfg.fusion_layers, cfg.heads, cfg.dropout);
    unit_ = TaskDecoupledUnit(reg_, "unit", rng, cfg.dim, cfg.mr_expert,
                              cfg.hd_expert, cfg.shared_layers, cfg.heads,
                              cfg.dropout);
    mr_ = MrDecoder(reg_, "mr", rng, cfg.dim, cfg.num_queries, cfg.mr_layers,
                    cfg.heads, cfg.dropout);
    hd_ = HdDecoder(reg_, "hd", rng, cfg.dim, cfg.hd_hidden_ratio);
  }

  nn::ParamRegistry& params() { return reg_; }
  const nn::ParamRegistry& params() const { return reg_; }
  const ModelConfig& config() const { return cfg_; }
  const FusionEncoder& fusion() const { return fusion_; }
  const TaskDecoupledUnit& unit() const { return unit_; }
  const MrDecoder& mr_decoder() const { return mr_; }
  const HdDecoder& hd_decoder() const { return hd_; }

  ModelOutput forward(const Eigen::MatrixXd& video_feats,
                      const Eigen::MatrixXd& text_feats, double duration,
                      const FeedbackRouting& routing,
                      const nn::Context& ctx) const {
    ad::Tensor z = fusion_.forward(ad::Tensor::constant(video_feats),
                                   ad::Tensor::constant(text_feats), ctx);
    TaskFeatures f = unit_.decouple(z, ctx);
    ModelOutput out;
    const int n = static_cast<int>(video_feats.rows());

    if (routing.two_pass) {
      // preliminary unmasked pass produces both masks, second pass is scored
      MomentPredictions mr0 = mr_.decode(f.x_mr, ctx);
      ad::Tensor hd0 = hd_.decode(f.x_hd);
      GuidingMask m2m = m2m_convert(
          moments_to_seconds(mr0.moments.value(), duration), duration, n,
          cfg_.clip_length);
      GuidingMask h2m = h2m_convert(hd0.value().col(0));
      out.mr = mr_.decode(apply_mask(f.x_mr, h2m), ctx);
      out.saliency = hd_.decode(apply_mask(f.x_hd, m2m));
      return out;
    }
    if (routing.mask_hd) {
      // moment-guided feedback: MR runs unmasked, its moments gate HD
      out.mr = mr_.decode(f.x_mr, ctx);
      GuidingMask m2m = m2m_convert(
          moments_to_seconds(out.mr.moments.value(), duration), duration, n,
          cfg_.clip_length);
      out.saliency = hd_.decode(apply_mask(f.x_hd, m2m));
      return out;
    }
    if (routing.mask_mr) {
      // highlightness-guided feedback: HD runs unmasked, its scores gate MR
      out.saliency = hd_.decode(f.x_hd);
      GuidingMask h2m = h2m_convert(out.saliency.value().col(0));
      out.mr = mr_.decode(apply_mask(f.x_mr, h2m), ctx);
      return out;
    }
    out.mr = mr_.decode(f.x_mr, ctx);
    out.saliency = hd_.decode(f.x_hd);
    return out;
  }

  // saliency head only, used for the negative video-query pair loss
  ad::Tensor saliency_only(const Eigen::MatrixXd& video_feats,
                           const Eigen::MatrixXd& text_feats,
                           const nn::Context& ctx) const {
    ad::Tensor z = fusion_.forward(ad::Tensor::constant(video_feats),
                                   ad::Tensor::constant(text_feats), ctx);
    return hd_.decode(unit_.decouple(z, ctx).x_hd);
  }

 private:
  ModelConfig cfg_;
  nn::ParamRegistry reg_;
  FusionEncoder fusion_;
  TaskDecoupledUnit unit_;
  MrDecoder mr_;
  HdDecoder hd_;
};

}  // namespace taskweave
