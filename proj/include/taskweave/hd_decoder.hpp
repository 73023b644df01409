#pragma once

#include <string>

#include "taskweave/feature_store.hpp"
#include "taskweave/nn.hpp"

namespace taskweave {

// Lightweight saliency decoder alternating Linear and Conv1d layers:
//   affine(d -> d) -> ReLU -> conv1d(k=3, d -> d/ratio) -> ReLU -> affine(-> 1)
// plus the scaled feature-sum residual: Y[i] = D_HD(J)[i] + sum_k J[i,k]/sqrt(d).
class HdDecoder {
 public:
  HdDecoder() = default;
  HdDecoder(nn::ParamRegistry& reg, const std::string& prefix, Rng& rng,
            Eigen::Index d, int hidden_ratio = 2)
      : d_(d),
        fc1_(reg, prefix + ".fc1", rng, d, d),
        conv_(reg, prefix + ".conv", rng, d, d / hidden_ratio, 3),
        fc2_(reg, prefix + ".fc2", rng, d / hidden_ratio, 1) {}

  // decoder input J must already carry any feedback mask
  ad::Tensor decode(const ad::Tensor& j) const {
    if (j.rows() == 0) throw ValidationError("hd decoder: empty input");
    ad::Tensor h = ad::relu(fc1_.forward(j));
    h = ad::relu(conv_.forward(h));
    ad::Tensor stack = fc2_.forward(h);  // [N x 1]
    ad::Tensor residual =
        ad::scale(ad::row_sum(j), 1.0 / std::sqrt(static_cast<double>(d_)));
    return ad::add(stack, residual);
  }

 private:
  Eigen::Index d_ = 0;
  nn::Linear fc1_;
  nn::Conv1d conv_;
  nn::Linear fc2_;
};

}  // namespace taskweave
