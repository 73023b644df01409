#pragma once

#include <string>
#include <vector>

#include "taskweave/nn.hpp"

namespace taskweave {

// Projects both modalities to the shared hidden dimension, cross-attends
// video clips (queries) to the joint text+video memory (keys/values) and
// smooths the fused representation with a sliding max over time.
class FusionEncoder {
 public:
  static constexpr int kMaxPoolKernel = 5;

  FusionEncoder() = default;
  FusionEncoder(nn::ParamRegistry& reg, const std::string& prefix, Rng& rng,
                Eigen::Index dim_video, Eigen::Index dim_text, Eigen::Index d,
                int layers = 2, int heads = 8, double dropout = 0.1)
      : d_(d),
        video_proj_(reg, prefix + ".video_proj", rng, dim_video, d),
        text_proj_(reg, prefix + ".text_proj", rng, dim_text, d),
        video_norm_(reg, prefix + ".video_norm", d),
        text_norm_(reg, prefix + ".text_norm", d),
        drop_(dropout) {
    for (int l = 0; l < layers; ++l)
      layers_.emplace_back(reg, prefix + ".layer" + std::to_string(l), rng, d,
                           heads, dropout);
  }

  std::pair<ad::Tensor, ad::Tensor> project(const ad::Tensor& video,
                                            const ad::Tensor& text,
                                            const nn::Context& ctx) const {
    ad::Tensor v = drop_.forward(video_norm_.forward(video_proj_.forward(video)), ctx);
    ad::Tensor t = drop_.forward(text_norm_.forward(text_proj_.forward(text)), ctx);
    return {v, t};
  }

  ad::Tensor cross_attend(const ad::Tensor& video, const ad::Tensor& text,
                          const nn::Context& ctx) const {
    ad::Tensor v_pos = ad::Tensor::constant(nn::sinusoidal_table(video.rows(), d_));
    ad::Tensor t_pos = ad::Tensor::constant(nn::sinusoidal_table(text.rows(), d_));
    // clip positions enter the content stream so downstream decoders can read
    // locations out of attended values, not just out of attention logits
    ad::Tensor x = ad::add(video, v_pos);
    for (const auto& layer : layers_) {
      // the clips attend over the joint text+video memory: softmax weight on
      // the text keys then reflects how strongly a clip matches the query
      // relative to the rest of the video, which a text-only memory cannot
      // express (softmax is invariant to the absolute query-text alignment
      // when every key is a near-identical text token)
      ad::Tensor mem = ad::concat_rows(text, x);
      ad::Tensor mem_pos = ad::concat_rows(t_pos, v_pos);
      x = layer.forward(x, v_pos, mem, mem_pos, ctx);
    }
    return x;
  }

  static ad::Tensor smooth_maxpool(const ad::Tensor& x) {
    return ad::maxpool_rows(x, kMaxPoolKernel);
  }

  // full fusion path: project -> cross-attend -> max-pool smoothing
  ad::Tensor forward(const ad::Tensor& video_raw, const ad::Tensor& text_raw,
                     const nn::Context& ctx) const {
    auto [v, t] = project(video_raw, text_raw, ctx);
    return smooth_maxpool(cross_attend(v, t, ctx));
  }

  const std::vector<nn::TransformerLayer>& layers() const { return layers_; }

 private:
  Eigen::Index d_ = 0;
  nn::Linear video_proj_, text_proj_;
  nn::LayerNorm video_norm_, text_norm_;
  nn::Dropout drop_;
  std::vector<nn::TransformerLayer> layers_;
};

}  // namespace taskweave
