#pragma once

#include <memory>
#include <string>
#include <vector>

#include "taskweave/nn.hpp"

namespace taskweave {

enum class ExpertKind { kIdentity, kLinear, kCnn, kTransformer };

inline ExpertKind expert_kind_from_string(const std::string& s) {
  if (s == "identity") return ExpertKind::kIdentity;
  if (s == "linear") return ExpertKind::kLinear;
  if (s == "cnn") return ExpertKind::kCnn;
  if (s == "transformer") return ExpertKind::kTransformer;
  throw std::invalid_argument("unknown expert kind: " + s);
}

inline std::string to_string(ExpertKind k) {
  switch (k) {
    case ExpertKind::kIdentity: return "identity";
    case ExpertKind::kLinear: return "linear";
    case ExpertKind::kCnn: return "cnn";
    case ExpertKind::kTransformer: return "transformer";
  }
  return "?";
}

// Shape-preserving [N x D] -> [N x D] expert network.
class Expert {
 public:
  Expert() = default;
  Expert(nn::ParamRegistry& reg, const std::string& prefix, Rng& rng,
         Eigen::Index d, ExpertKind kind, int transformer_layers = 1,
         int heads = 8, double dropout = 0.1)
      : kind_(kind) {
    switch (kind) {
      case ExpertKind::kIdentity:
        break;
      case ExpertKind::kLinear:
        linear_ = nn::Linear(reg, prefix + ".linear", rng, d, d);
        break;
      case ExpertKind::kCnn:
        // depthwise 5/1/2 conv followed by a pointwise 1D conv
        depthwise_ = nn::DepthwiseConv1d(reg, prefix + ".dw", rng, d, 5);
        pointwise_ = nn::Conv1d(reg, prefix + ".pw", rng, d, d, 1);
        break;
      case ExpertKind::kTransformer:
        pos_dim_ = d;
        for (int l = 0; l < transformer_layers; ++l)
          tf_layers_.emplace_back(reg, prefix + ".tf" + std::to_string(l), rng,
                                  d, heads, dropout);
        break;
    }
  }

  ad::Tensor forward(const ad::Tensor& x, const nn::Context& ctx) const {
    switch (kind_) {
      case ExpertKind::kIdentity:
        return x;
      case ExpertKind::kLinear:
        return ad::relu(linear_.forward(x));
      case ExpertKind::kCnn:
        return pointwise_.forward(depthwise_.forward(x));
      case ExpertKind::kTransformer: {
        ad::Tensor pos =
            ad::Tensor::constant(nn::sinusoidal_table(x.rows(), pos_dim_));
        ad::Tensor h = x;
        for (const auto& layer : tf_layers_) h = layer.self_forward(h, pos, ctx);
        return h;
      }
    }
    return x;
  }

  ExpertKind kind() const { return kind_; }

 private:
  ExpertKind kind_ = ExpertKind::kIdentity;
  nn::Linear linear_;
  nn::DepthwiseConv1d depthwise_;
  nn::Conv1d pointwise_;
  std::vector<nn::TransformerLayer> tf_layers_;
  Eigen::Index pos_dim_ = 0;
};

struct TaskFeatures {
  ad::Tensor x_mr;
  ad::Tensor x_hd;
};

// Splits the fused representation into task features:
//   X_t = P_t(M_t(Z)) (.) S(M_t(Z))
// with per-task mappers M_t, per-task experts P_t and one shared expert S.
class TaskDecoupledUnit {
 public:
  TaskDecoupledUnit() = default;
  TaskDecoupledUnit(nn::ParamRegistry& reg, const std::string& prefix, Rng& rng,
                    Eigen::Index d, ExpertKind mr_kind, ExpertKind hd_kind,
                    int shared_layers = 2, int heads = 8, double dropout = 0.1)
      : mr_mapper_(reg, prefix + ".mr_mapper", rng, d, d),
        hd_mapper_(reg, prefix + ".hd_mapper", rng, d, d),
        mr_expert_(reg, prefix + ".mr_expert", rng, d, mr_kind, 1, heads, dropout),
        hd_expert_(reg, prefix + ".hd_expert", rng, d, hd_kind, 1, heads, dropout),
        shared_(reg, prefix + ".shared", rng, d, ExpertKind::kTransformer,
                shared_layers, heads, dropout) {}

  ad::Tensor map_task(const ad::Tensor& z, bool mr) const {
    return (mr ? mr_mapper_ : hd_mapper_).forward(z);
  }

  TaskFeatures decouple(const ad::Tensor& z, const nn::Context& ctx) const {
    ad::Tensor m_mr = mr_mapper_.forward(z);
    ad::Tensor m_hd = hd_mapper_.forward(z);
    TaskFeatures f;
    f.x_mr = ad::mul(mr_expert_.forward(m_mr, ctx), shared_.forward(m_mr, ctx));
    f.x_hd = ad::mul(hd_expert_.forward(m_hd, ctx), shared_.forward(m_hd, ctx));
    return f;
  }

  const nn::Linear& mr_mapper() const { return mr_mapper_; }
  const nn::Linear& hd_mapper() const { return hd_mapper_; }
  const Expert& mr_expert() const { return mr_expert_; }
  const Expert& hd_expert() const { return hd_expert_; }
  const Expert& shared_expert() const { return shared_; }

 private:
  nn::Linear mr_mapper_, hd_mapper_;
  Expert mr_expert_, hd_expert_;
  Expert shared_;
};

}  // namespace taskweave
