#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "taskweave/autodiff.hpp"
#include "taskweave/rng.hpp"

namespace taskweave::nn {

using ad::Mat;
using ad::Tensor;

// Flat registry of named parameters. The optimizer, EMA, checkpointing and
// finite-difference tests all walk this list; order is construction order.
class ParamRegistry {
 public:
  Tensor add(const std::string& name, Mat init) {
    Tensor t = Tensor::param(std::move(init));
    items_.emplace_back(name, t);
    return t;
  }

  const std::vector<std::pair<std::string, Tensor>>& items() const {
    return items_;
  }
  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }

  Tensor find(const std::string& name) const {
    for (const auto& [n, t] : items_)
      if (n == name) return t;
    throw std::out_of_range("no such parameter: " + name);
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

// Per-forward context: training flag and the RNG that feeds dropout masks.
struct Context {
  bool train = false;
  Rng* rng = nullptr;
};

// Haar-ish random orthogonal matrix: QR of a Gaussian matrix with the sign
// of each diagonal entry of R folded into the corresponding column of Q.
inline Mat random_rotation(Rng& rng, Eigen::Index d) {
  Mat g(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ();
  const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < d; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  return q;
}

inline Mat xavier(Rng& rng, Eigen::Index in, Eigen::Index out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Mat w(in, out);
  for (Eigen::Index i = 0; i < in; ++i)
    for (Eigen::Index j = 0; j < out; ++j) w(i, j) = rng.uniform(-limit, limit);
  return w;
}

class Linear {
 public:
  Linear() = default;
  Linear(ParamRegistry& reg, const std::string& prefix, Rng& rng,
         Eigen::Index in, Eigen::Index out)
      : w_(reg.add(prefix + ".weight", xavier(rng, in, out))),
        b_(reg.add(prefix + ".bias", Mat::Zero(1, out))) {}

  Tensor forward(const Tensor& x) const {
    return ad::add(ad::matmul(x, w_), b_);
  }

  Tensor weight() const { return w_; }
  Tensor bias() const { return b_; }

 private:
  Tensor w_, b_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamRegistry& reg, const std::string& prefix, Eigen::Index d)
      : gamma_(reg.add(prefix + ".gamma", Mat::Ones(1, d))),
        beta_(reg.add(prefix + ".beta", Mat::Zero(1, d))) {}

  Tensor forward(const Tensor& x) const {
    return ad::add(ad::mul(ad::layer_norm_rows(x), gamma_), beta_);
  }

 private:
  Tensor gamma_, beta_;
};

class Dropout {
 public:
  explicit Dropout(double p = 0.0) : p_(p) {}

  Tensor forward(const Tensor& x, const Context& ctx) const {
    if (!ctx.train || p_ <= 0.0) return x;
    Mat mask(x.rows(), x.cols());
    const double keep = 1.0 - p_;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j)
        mask(i, j) = ctx.rng->uniform() < keep ? 1.0 / keep : 0.0;
    return ad::mul(x, Tensor::constant(std::move(mask)));
  }

 private:
  double p_;
};

// Differentiable sinusoidal embedding of a column of normalized coordinates.
// Output dimension d must be even; coordinates are scaled by 2*pi.
inline Tensor sinusoidal_embed(const Tensor& coord, Eigen::Index d) {
  const Eigen::Index half = d / 2;
  Mat freqs(1, half);
  for (Eigen::Index i = 0; i < half; ++i)
    freqs(0, i) = 2.0 * M_PI *
                  std::pow(10000.0, -2.0 * static_cast<double>(i) /
                                        static_cast<double>(d));
  Tensor phase = ad::matmul(coord, Tensor::constant(freqs));  // [n x half]
  return ad::concat_cols(ad::sin(phase), ad::cos(phase));
}

// Fixed sinusoidal table for clip/token positions. Row i embeds the
// normalized sequence coordinate (i + 0.5) / n so that positions share one
// coordinate system with the decoder's normalized anchor embeddings.
inline Mat sinusoidal_table(Eigen::Index n, Eigen::Index d) {
  Mat coord(n, 1);
  for (Eigen::Index i = 0; i < n; ++i)
    coord(i, 0) = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
  return sinusoidal_embed(Tensor::constant(coord), d).value();
}

class MultiheadAttention {
 public:
  MultiheadAttention() = default;
  MultiheadAttention(ParamRegistry& reg, const std::string& prefix, Rng& rng,
                     Eigen::Index d, int heads, double dropout)
      : d_(d),
        heads_(heads),
        wq_(reg, prefix + ".wq", rng, d, d),
        wk_(reg, prefix + ".wk", rng, d, d),
        wv_(reg, prefix + ".wv", rng, d, d),
        wo_(reg, prefix + ".wo", rng, d, d),
        drop_(dropout) {}

  // q/k carry positional content; v is the raw value stream. An optional
  // additive logit bias (shared across heads) shapes the attention pattern.
  Tensor forward(const Tensor& q, const Tensor& k, const Tensor& v,
                 const Context& ctx, const Tensor& logit_bias = {}) const {
    const Eigen::Index dh = d_ / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor qp = wq_.forward(q), kp = wk_.forward(k), vp = wv_.forward(v);
    last_weights_.clear();
    Tensor out;
    for (int h = 0; h < heads_; ++h) {
      Tensor qh = ad::slice_cols(qp, h * dh, dh);
      Tensor kh = ad::slice_cols(kp, h * dh, dh);
      Tensor vh = ad::slice_cols(vp, h * dh, dh);
      Tensor logits = ad::scale(ad::matmul(qh, ad::transpose(kh)), scale);
      if (logit_bias.defined()) logits = ad::add(logits, logit_bias);
      Tensor att = ad::softmax_rows(logits);
      last_weights_.push_back(att.value());
      att = drop_.forward(att, ctx);
      Tensor oh = ad::matmul(att, vh);
      out = h == 0 ? oh : ad::concat_cols(out, oh);
    }
    return wo_.forward(out);
  }

  // attention maps of the most recent forward, one [Nq x Nk] matrix per head
  const std::vector<Mat>& last_weights() const { return last_weights_; }

 private:
  Eigen::Index d_ = 0;
  int heads_ = 0;
  Linear wq_, wk_, wv_, wo_;
  Dropout drop_;
  mutable std::vector<Mat> last_weights_;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParamRegistry& reg, const std::string& prefix, Rng& rng,
              Eigen::Index d, Eigen::Index hidden, double dropout)
      : fc1_(reg, prefix + ".fc1", rng, d, hidden),
        fc2_(reg, prefix + ".fc2", rng, hidden, d),
        drop_(dropout) {}

  Tensor forward(const Tensor& x, const Context& ctx) const {
    return fc2_.forward(drop_.forward(ad::relu(fc1_.forward(x)), ctx));
  }

 private:
  Linear fc1_, fc2_;
  Dropout drop_;
};

// Post-norm transformer layer; self- or cross-attention depending on inputs.
class TransformerLayer {
 public:
  TransformerLayer() = default;
  TransformerLayer(ParamRegistry& reg, const std::string& prefix, Rng& rng,
                   Eigen::Index d, int heads, double dropout)
      : attn_(reg, prefix + ".attn", rng, d, heads, dropout),
        norm1_(reg, prefix + ".norm1", d),
        norm2_(reg, prefix + ".norm2", d),
        ffn_(reg, prefix + ".ffn", rng, d, 4 * d, dropout),
        drop_(dropout) {}

  Tensor forward(const Tensor& x, const Tensor& x_pos, const Tensor& mem,
                 const Tensor& mem_pos, const Context& ctx,
                 const Tensor& logit_bias = {}) const {
    Tensor q = x_pos.defined() ? ad::add(x, x_pos) : x;
    Tensor k = mem_pos.defined() ? ad::add(mem, mem_pos) : mem;
    Tensor a = attn_.forward(q, k, mem, ctx, logit_bias);
    Tensor h = norm1_.forward(ad::add(x, drop_.forward(a, ctx)));
    Tensor f = ffn_.forward(h, ctx);
    return norm2_.forward(ad::add(h, drop_.forward(f, ctx)));
  }

  Tensor self_forward(const Tensor& x, const Tensor& pos,
                      const Context& ctx) const {
    return forward(x, pos, x, pos, ctx);
  }

  const MultiheadAttention& attention() const { return attn_; }

 private:
  MultiheadAttention attn_;
  LayerNorm norm1_, norm2_;
  FeedForward ffn_;
  Dropout drop_;
};

// 1D convolution over the row (time) axis; zero boundary padding.
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(ParamRegistry& reg, const std::string& prefix, Rng& rng,
         Eigen::Index in, Eigen::Index out, int kernel)
      : kernel_(kernel), b_(reg.add(prefix + ".bias", Mat::Zero(1, out))) {
    for (int t = 0; t < kernel; ++t)
      taps_.push_back(
          reg.add(prefix + ".w" + std::to_string(t), xavier(rng, in, out)));
  }

  Tensor forward(const Tensor& x) const {
    const int pad = (kernel_ - 1) / 2;
    Tensor out;
    for (int t = 0; t < kernel_; ++t) {
      Tensor term = ad::matmul(ad::shift_rows(x, pad - t), taps_[t]);
      out = t == 0 ? term : ad::add(out, term);
    }
    return ad::add(out, b_);
  }

 private:
  int kernel_ = 1;
  std::vector<Tensor> taps_;
  Tensor b_;
};

// Depthwise 1D convolution: one scalar tap per channel per offset.
class DepthwiseConv1d {
 public:
  DepthwiseConv1d() = default;
  DepthwiseConv1d(ParamRegistry& reg, const std::string& prefix, Rng& rng,
                  Eigen::Index channels, int kernel)
      : kernel_(kernel),
        b_(reg.add(prefix + ".bias", Mat::Zero(1, channels))) {
    const double limit = std::sqrt(6.0 / static_cast<double>(2 * kernel));
    for (int t = 0; t < kernel; ++t) {
      Mat w(1, channels);
      for (Eigen::Index c = 0; c < channels; ++c) w(0, c) = rng.uniform(-limit, limit);
      taps_.push_back(reg.add(prefix + ".w" + std::to_string(t), std::move(w)));
    }
  }

  Tensor forward(const Tensor& x) const {
    const int pad = (kernel_ - 1) / 2;
    Tensor out;
    for (int t = 0; t < kernel_; ++t) {
      Tensor term = ad::mul(ad::shift_rows(x, pad - t), taps_[t]);
      out = t == 0 ? term : ad::add(out, term);
    }
    return ad::add(out, b_);
  }

 private:
  int kernel_ = 1;
  std::vector<Tensor> taps_;
  Tensor b_;
};

}  // namespace taskweave::nn
