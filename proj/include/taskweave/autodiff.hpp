#pragma once

#include <Eigen/Dense>
#include <cassert>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

namespace taskweave::ad {

using Mat = Eigen::MatrixXd;

struct Node {
  Mat value;
  Mat grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
};

// Reverse-mode autodiff tensor over a dense double matrix. Graphs are built
// define-by-run; backward() on a 1x1 tensor propagates to every reachable
// parameter. Scalars are represented as 1x1 matrices.
class Tensor {
 public:
  Tensor() = default;

  static Tensor param(Mat v) { return Tensor(std::move(v), true); }
  static Tensor constant(Mat v) { return Tensor(std::move(v), false); }
  static Tensor scalar(double v) {
    Mat m(1, 1);
    m(0, 0) = v;
    return Tensor(std::move(m), false);
  }

  bool defined() const { return node_ != nullptr; }
  const Mat& value() const { return node_->value; }
  Mat& mutable_value() { return node_->value; }
  const Mat& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const {
    assert(rows() == 1 && cols() == 1);
    return node_->value(0, 0);
  }

  std::shared_ptr<Node> node() const { return node_; }

  // Runs reverse accumulation from this (1x1) tensor.
  void backward() const {
    if (rows() != 1 || cols() != 1)
      throw std::logic_error("backward() requires a scalar tensor");
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    topo(node_.get(), visited, order);
    for (Node* n : order) n->grad = Mat::Zero(n->value.rows(), n->value.cols());
    node_->grad(0, 0) = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward_fn) n->backward_fn(*n);
    }
  }

  static Tensor make(Mat value, std::vector<Tensor> parents,
                     std::function<void(Node&)> backward_fn) {
    bool req = false;
    std::vector<std::shared_ptr<Node>> pn;
    pn.reserve(parents.size());
    for (const auto& p : parents) {
      req = req || p.node_->requires_grad;
      pn.push_back(p.node_);
    }
    Tensor out(std::move(value), req);
    if (req) {
      out.node_->parents = std::move(pn);
      out.node_->backward_fn = std::move(backward_fn);
    }
    return out;
  }

 private:
  Tensor(Mat v, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(v);
    node_->grad = Mat::Zero(node_->value.rows(), node_->value.cols());
    node_->requires_grad = requires_grad;
  }

  static void topo(Node* n, std::unordered_set<Node*>& visited,
                   std::vector<Node*>& order) {
    // iterative DFS; graphs can be deep (per-batch tapes)
    struct Frame {
      Node* node;
      size_t next_child;
    };
    if (visited.count(n)) return;
    std::vector<Frame> stack{{n, 0}};
    visited.insert(n);
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_child < f.node->parents.size()) {
        Node* c = f.node->parents[f.next_child++].get();
        if (!visited.count(c)) {
          visited.insert(c);
          stack.push_back({c, 0});
        }
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node> node_;
};

namespace detail {

enum class Broadcast { kNone, kScalar, kRow, kCol };

inline Broadcast broadcast_kind(const Tensor& a, const Tensor& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::kNone;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::kCol;
  throw std::invalid_argument("incompatible shapes for broadcast op");
}

inline Mat expand(const Mat& b, Broadcast k, Eigen::Index rows,
                  Eigen::Index cols) {
  switch (k) {
    case Broadcast::kNone:
      return b;
    case Broadcast::kScalar:
      return Mat::Constant(rows, cols, b(0, 0));
    case Broadcast::kRow:
      return b.replicate(rows, 1);
    case Broadcast::kCol:
      return b.replicate(1, cols);
  }
  return b;
}

inline Mat reduce(const Mat& g, Broadcast k) {
  switch (k) {
    case Broadcast::kNone:
      return g;
    case Broadcast::kScalar: {
      Mat m(1, 1);
      m(0, 0) = g.sum();
      return m;
    }
    case Broadcast::kRow:
      return g.colwise().sum();
    case Broadcast::kCol:
      return g.rowwise().sum();
  }
  return g;
}

}  // namespace detail

// ---- arithmetic ----

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (b.rows() * b.cols() > a.rows() * a.cols()) return add(b, a);
  const auto k = detail::broadcast_kind(a, b);
  Mat v = a.value() + detail::expand(b.value(), k, a.rows(), a.cols());
  return Tensor::make(std::move(v), {a, b}, [a, b, k](Node& n) {
    if (a.node()->requires_grad) a.node()->grad += n.grad;
    if (b.node()->requires_grad) b.node()->grad += detail::reduce(n.grad, k);
  });
}

inline Tensor neg(const Tensor& a) {
  return Tensor::make(-a.value(), {a}, [a](Node& n) {
    if (a.node()->requires_grad) a.node()->grad -= n.grad;
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (b.rows() * b.cols() > a.rows() * a.cols()) return mul(b, a);
  const auto k = detail::broadcast_kind(a, b);
  Mat bb = detail::expand(b.value(), k, a.rows(), a.cols());
  Mat v = a.value().cwiseProduct(bb);
  return Tensor::make(std::move(v), {a, b}, [a, b, k, bb](Node& n) {
    if (a.node()->requires_grad) a.node()->grad += n.grad.cwiseProduct(bb);
    if (b.node()->requires_grad)
      b.node()->grad += detail::reduce(n.grad.cwiseProduct(a.value()).eval(), k);
  });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  const auto k = detail::broadcast_kind(a, b);
  Mat bb = detail::expand(b.value(), k, a.rows(), a.cols());
  Mat v = a.value().cwiseQuotient(bb);
  return Tensor::make(std::move(v), {a, b}, [a, b, k, bb, v](Node& n) {
    if (a.node()->requires_grad) a.node()->grad += n.grad.cwiseQuotient(bb);
    if (b.node()->requires_grad)
      b.node()->grad -= detail::reduce(
          Mat(n.grad.cwiseProduct(v).cwiseQuotient(bb)), k);
  });
}

inline Tensor scale(const Tensor& a, double s) {
  return Tensor::make(a.value() * s, {a}, [a, s](Node& n) {
    if (a.node()->requires_grad) a.node()->grad += n.grad * s;
  });
}

inline Tensor add_const(const Tensor& a, double c) {
  return Tensor::make((a.value().array() + c).matrix(), {a}, [a](Node& n) {
    if (a.node()->requires_grad) a.node()->grad += n.grad;
  });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul shape mismatch");
  Mat v = a.value() * b.value();
  return Tensor::make(std::move(v), {a, b}, [a, b](Node& n) {
    if (a.node()->requires_grad) a.node()->grad += n.grad * b.value().transpose();
    if (b.node()->requires_grad) b.node()->grad += a.value().transpose() * n.grad;
  });
}

inline Tensor transpose(const Tensor& a) {
  return Tensor::make(a.value().transpose(), {a}, [a](Node& n) {
    if (a.node()->requires_grad) a.node()->grad += n.grad.transpose();
  });
}

// ---- elementwise nonlinearities ----

inline Tensor relu(const Tensor& a) {
  Mat v = a.value().cwiseMax(0.0);
  return Tensor::make(std::move(v), {a}, [a](Node& n) {
    if (!a.node()->requires_grad) return;
    a.node()->grad +=
        n.grad.cwiseProduct((a.value().array() > 0.0).cast<double>().matrix());
  });
}

inline Tensor sigmoid(const Tensor& a) {
  Mat v = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return Tensor::make(std::move(v), {a}, [a, v](Node& n) {
    if (!a.node()->requires_grad) return;
    a.node()->grad +=
        n.grad.cwiseProduct((v.array() * (1.0 - v.array())).matrix());
  });
}

inline Tensor exp(const Tensor& a) {
  Mat v = a.value().array().exp().matrix();
  return Tensor::make(std::move(v), {a}, [a, v](Node& n) {
    if (a.node()->requires_grad) a.node()->grad += n.grad.cwiseProduct(v);
  });
}

inline Tensor log(const Tensor& a) {
  Mat v = a.value().array().log().matrix();
  return Tensor::make(std::move(v), {a}, [a](Node& n) {
    if (a.node()->requires_grad)
      a.node()->grad += n.grad.cwiseQuotient(a.value());
  });
}

inline Tensor abs(const Tensor& a) {
  Mat v = a.value().cwiseAbs();
  return Tensor::make(std::move(v), {a}, [a](Node& n) {
    if (!a.node()->requires_grad) return;
    a.node()->grad += n.grad.cwiseProduct(
        a.value().unaryExpr([](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }));
  });
}

inline Tensor sin(const Tensor& a) {
  Mat v = a.value().array().sin().matrix();
  return Tensor::make(std::move(v), {a}, [a](Node& n) {
    if (a.node()->requires_grad)
      a.node()->grad += n.grad.cwiseProduct(a.value().array().cos().matrix());
  });
}

inline Tensor cos(const Tensor& a) {
  Mat v = a.value().array().cos().matrix();
  return Tensor::make(std::move(v), {a}, [a](Node& n) {
    if (a.node()->requires_grad)
      a.node()->grad -= n.grad.cwiseProduct(a.value().array().sin().matrix());
  });
}

inline Tensor minimum(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("minimum shape mismatch");
  Mat v = a.value().cwiseMin(b.value());
  // ties route to a
  return Tensor::make(std::move(v), {a, b}, [a, b](Node& n) {
    Mat sel = (a.value().array() <= b.value().array()).cast<double>().matrix();
    if (a.node()->requires_grad) a.node()->grad += n.grad.cwiseProduct(sel);
    if (b.node()->requires_grad)
      b.node()->grad += n.grad.cwiseProduct((1.0 - sel.array()).matrix());
  });
}

inline Tensor maximum(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("maximum shape mismatch");
  Mat v = a.value().cwiseMax(b.value());
  return Tensor::make(std::move(v), {a, b}, [a, b](Node& n) {
    Mat sel = (a.value().array() >= b.value().array()).cast<double>().matrix();
    if (a.node()->requires_grad) a.node()->grad += n.grad.cwiseProduct(sel);
    if (b.node()->requires_grad)
      b.node()->grad += n.grad.cwiseProduct((1.0 - sel.array()).matrix());
  });
}

// ---- reductions ----

inline Tensor sum(const Tensor& a) {
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  return Tensor::make(std::move(v), {a}, [a](Node& n) {
    if (a.node()->requires_grad)
      a.node()->grad.array() += n.grad(0, 0);
  });
}

inline Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.rows() * a.cols());
  Mat v(1, 1);
  v(0, 0) = a.value().sum() * inv;
  return Tensor::make(std::move(v), {a}, [a, inv](Node& n) {
    if (a.node()->requires_grad)
      a.node()->grad.array() += n.grad(0, 0) * inv;
  });
}

inline Tensor row_sum(const Tensor& a) {
  Mat v = a.value().rowwise().sum();
  return Tensor::make(std::move(v), {a}, [a](Node& n) {
    if (a.node()->requires_grad)
      a.node()->grad += n.grad.replicate(1, a.cols());
  });
}

// ---- structural ----

inline Tensor slice_rows(const Tensor& a, Eigen::Index start, Eigen::Index n) {
  Mat v = a.value().middleRows(start, n);
  return Tensor::make(std::move(v), {a}, [a, start, n](Node& nd) {
    if (a.node()->requires_grad)
      a.node()->grad.middleRows(start, n) += nd.grad;
  });
}

inline Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index n) {
  Mat v = a.value().middleCols(start, n);
  return Tensor::make(std::move(v), {a}, [a, start, n](Node& nd) {
    if (a.node()->requires_grad)
      a.node()->grad.middleCols(start, n) += nd.grad;
  });
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("concat_cols rows mismatch");
  Mat v(a.rows(), a.cols() + b.cols());
  v << a.value(), b.value();
  return Tensor::make(std::move(v), {a, b}, [a, b](Node& n) {
    if (a.node()->requires_grad)
      a.node()->grad += n.grad.leftCols(a.cols());
    if (b.node()->requires_grad)
      b.node()->grad += n.grad.rightCols(b.cols());
  });
}

inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("concat_rows cols mismatch");
  Mat v(a.rows() + b.rows(), a.cols());
  v << a.value(), b.value();
  return Tensor::make(std::move(v), {a, b}, [a, b](Node& n) {
    if (a.node()->requires_grad) a.node()->grad += n.grad.topRows(a.rows());
    if (b.node()->requires_grad) b.node()->grad += n.grad.bottomRows(b.rows());
  });
}

inline Tensor stop_gradient(const Tensor& a) { return Tensor::constant(a.value()); }

// Shifts rows by `offset` (positive shifts content down), zero-filling.
inline Tensor shift_rows(const Tensor& a, Eigen::Index offset) {
  const Eigen::Index n = a.rows();
  Mat v = Mat::Zero(n, a.cols());
  if (offset >= 0) {
    if (offset < n) v.bottomRows(n - offset) = a.value().topRows(n - offset);
  } else {
    if (-offset < n) v.topRows(n + offset) = a.value().bottomRows(n + offset);
  }
  return Tensor::make(std::move(v), {a}, [a, offset, n](Node& nd) {
    if (!a.node()->requires_grad) return;
    if (offset >= 0) {
      if (offset < n)
        a.node()->grad.topRows(n - offset) += nd.grad.bottomRows(n - offset);
    } else {
      if (-offset < n)
        a.node()->grad.bottomRows(n + offset) += nd.grad.topRows(n + offset);
    }
  });
}

// ---- row-wise normalizations ----

inline Tensor softmax_rows(const Tensor& a) {
  Mat v(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double m = a.value().row(i).maxCoeff();
    Eigen::ArrayXd e = (a.value().row(i).array() - m).exp();
    v.row(i) = (e / e.sum()).matrix();
  }
  return Tensor::make(std::move(v), {a}, [a, v](Node& n) {
    if (!a.node()->requires_grad) return;
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      const double dot = n.grad.row(i).dot(v.row(i));
      a.node()->grad.row(i) +=
          ((n.grad.row(i).array() - dot) * v.row(i).array()).matrix();
    }
  });
}

inline Tensor layer_norm_rows(const Tensor& a, double eps = 1e-5) {
  const Eigen::Index d = a.cols();
  Mat y(a.rows(), d);
  Eigen::VectorXd inv_sigma(a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double mu = a.value().row(i).mean();
    const double var = (a.value().row(i).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma(i) = is;
    y.row(i) = ((a.value().row(i).array() - mu) * is).matrix();
  }
  return Tensor::make(y, {a}, [a, y, inv_sigma, d](Node& n) {
    if (!a.node()->requires_grad) return;
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const double m_dy = n.grad.row(i).mean();
      const double m_dyy = n.grad.row(i).cwiseProduct(y.row(i)).mean();
      a.node()->grad.row(i) +=
          (inv_sigma(i) *
           (n.grad.row(i).array() - m_dy - y.row(i).array() * m_dyy))
              .matrix();
    }
  });
}

// Per-column sliding max over rows; window k, stride 1, pad (k-1)/2 with -inf.
inline Tensor maxpool_rows(const Tensor& a, int k) {
  const Eigen::Index n = a.rows(), d = a.cols();
  const int pad = (k - 1) / 2;
  Mat v(n, d);
  Eigen::MatrixXi arg(n, d);
  for (Eigen::Index c = 0; c < d; ++c) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = -std::numeric_limits<double>::infinity();
      Eigen::Index bi = i;
      for (int t = 0; t < k; ++t) {
        const Eigen::Index j = i - pad + t;
        if (j < 0 || j >= n) continue;
        if (a.value()(j, c) > best) {
          best = a.value()(j, c);
          bi = j;
        }
      }
      v(i, c) = best;
      arg(i, c) = static_cast<int>(bi);
    }
  }
  return Tensor::make(std::move(v), {a}, [a, arg](Node& nd) {
    if (!a.node()->requires_grad) return;
    for (Eigen::Index c = 0; c < arg.cols(); ++c)
      for (Eigen::Index i = 0; i < arg.rows(); ++i)
        a.node()->grad(arg(i, c), c) += nd.grad(i, c);
  });
}

}  // namespace taskweave::ad
