#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "amtl/error.hpp"
#include "amtl/rng.hpp"

namespace amtl {

// Dense 64-bit float tensor with reverse-mode autodiff. A Tensor is a
// value-semantic handle onto a graph node; copies alias the same node.
// Row-major semantics throughout. Graphs are built by the free functions
// below and differentiated with backward().

class Tensor;

namespace detail {

struct TensorNode {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily, same extent as data
  bool requires_grad = false;
  std::string name;  // nonempty for parameters
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;  // reads self.grad, accumulates into parents

  std::size_t numel() const { return data.size(); }
  bool is_leaf() const { return parents.empty(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

inline std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int e : shape) {
    require(e >= 0, ErrorKind::contract, "negative extent in shape");
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

}  // namespace detail

// Thread-local switch for graph recording. Inside a NoGradGuard scope,
// ops compute values but record no backward closures.
inline bool& grad_mode_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  NoGradGuard() : prev_(grad_mode_enabled()) { grad_mode_enabled() = false; }
  ~NoGradGuard() { grad_mode_enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(std::vector<int> shape, std::vector<double> data,
                     bool requires_grad = false, std::string name = "") {
    require(detail::shape_numel(shape) == data.size(), ErrorKind::contract,
            "shape does not match data length");
    auto n = std::make_shared<detail::TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    n->name = std::move(name);
    return Tensor(std::move(n));
  }

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false,
                      std::string name = "") {
    std::vector<double> d(detail::shape_numel(shape), 0.0);
    return from(std::move(shape), std::move(d), requires_grad, std::move(name));
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  static Tensor gaussian(std::vector<int> shape, double stddev, Rng& rng,
                         bool requires_grad = false, std::string name = "") {
    std::vector<double> d(detail::shape_numel(shape));
    for (double& x : d) x = stddev * rng.gauss();
    return from(std::move(shape), std::move(d), requires_grad, std::move(name));
  }

  bool valid() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }
  std::vector<double>& grad() { node_->ensure_grad(); return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& name() const { return node_->name; }
  std::size_t numel() const { return node_->data.size(); }

  int rank() const { return static_cast<int>(node_->shape.size()); }
  int extent(int d) const { return node_->shape[static_cast<std::size_t>(d)]; }
  // Row/col view of a 1-D or 2-D tensor; 1-D is treated as a single row.
  int rows() const { return rank() == 1 ? 1 : extent(0); }
  int cols() const { return rank() == 1 ? extent(0) : extent(1); }

  double value() const {
    require(numel() == 1, ErrorKind::contract, "value() on non-scalar tensor");
    return node_->data[0];
  }

  void zero_grad() { node_->grad.clear(); }

  // Identity of the underlying node; used by graph traversal.
  detail::TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<detail::TensorNode>& node_ptr() const { return node_; }

  bool all_finite() const {
    for (double v : node_->data)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::TensorNode> node_;

  friend Tensor make_op(std::vector<int> shape, std::vector<double> data,
                        std::vector<Tensor> parents,
                        std::function<void(detail::TensorNode&)> backprop);
};

inline Tensor make_op(std::vector<int> shape, std::vector<double> data,
                      std::vector<Tensor> parents,
                      std::function<void(detail::TensorNode&)> backprop) {
  auto n = std::make_shared<detail::TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  bool rg = false;
  if (grad_mode_enabled())
    for (const Tensor& p : parents) rg = rg || p.requires_grad();
  n->requires_grad = rg;
  if (rg) {
    n->backprop = std::move(backprop);
    n->parents.reserve(parents.size());
    for (const Tensor& p : parents) n->parents.push_back(p.node_ptr());
  }
  return Tensor(std::move(n));
}

// ---------------------------------------------------------------------------
// elementwise and scalar ops

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), ErrorKind::contract,
          std::string(op) + ": shape mismatch");
}

// y = alpha*x + beta
inline Tensor affine(const Tensor& x, double alpha, double beta) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * x.data()[i] + beta;
  auto xb = x;
  return make_op(x.shape(), std::move(out), {x},
                 [xb, alpha](detail::TensorNode& self) {
                   auto* p = xb.node();
                   if (!p->requires_grad) return;
                   p->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     p->grad[i] += alpha * self.grad[i];
                 });
}

inline Tensor scale(const Tensor& x, double c) { return affine(x, c, 0.0); }
inline Tensor add_const(const Tensor& x, double c) { return affine(x, 1.0, c); }

// add with optional row-vector broadcast: b may be [n] or [1,n] against a [m,n].
inline Tensor add(const Tensor& a, const Tensor& b) {
  const bool broadcast = a.shape() != b.shape();
  if (broadcast) {
    require(a.rank() == 2 && b.cols() == a.cols() && b.rows() == 1,
            ErrorKind::contract, "add: incompatible shapes");
  }
  std::vector<double> out(a.numel());
  const int m = a.rows(), n = a.cols();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * n + j] =
          a.data()[static_cast<std::size_t>(i) * n + j] +
          (broadcast ? b.data()[j] : b.data()[static_cast<std::size_t>(i) * n + j]);
  auto pa = a, pb = b;
  return make_op(a.shape(), std::move(out), {a, b},
                 [pa, pb, broadcast, m, n](detail::TensorNode& self) {
                   if (pa.node()->requires_grad) {
                     pa.node()->ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       pa.node()->grad[i] += self.grad[i];
                   }
                   if (pb.node()->requires_grad) {
                     pb.node()->ensure_grad();
                     if (broadcast) {
                       for (int i = 0; i < m; ++i)
                         for (int j = 0; j < n; ++j)
                           pb.node()->grad[j] += self.grad[static_cast<std::size_t>(i) * n + j];
                     } else {
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         pb.node()->grad[i] += self.grad[i];
                     }
                   }
                 });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto pa = a, pb = b;
  return make_op(a.shape(), std::move(out), {a, b},
                 [pa, pb](detail::TensorNode& self) {
                   if (pa.node()->requires_grad) {
                     pa.node()->ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       pa.node()->grad[i] += self.grad[i];
                   }
                   if (pb.node()->requires_grad) {
                     pb.node()->ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       pb.node()->grad[i] -= self.grad[i];
                   }
                 });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto pa = a, pb = b;
  return make_op(a.shape(), std::move(out), {a, b},
                 [pa, pb](detail::TensorNode& self) {
                   if (pa.node()->requires_grad) {
                     pa.node()->ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       pa.node()->grad[i] += self.grad[i] * pb.node()->data[i];
                   }
                   if (pb.node()->requires_grad) {
                     pb.node()->ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       pb.node()->grad[i] += self.grad[i] * pa.node()->data[i];
                   }
                 });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
  auto pa = a, pb = b;
  return make_op(a.shape(), std::move(out), {a, b},
                 [pa, pb](detail::TensorNode& self) {
                   if (pa.node()->requires_grad) {
                     pa.node()->ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                       pa.node()->grad[i] += self.grad[i] / pb.node()->data[i];
                   }
                   if (pb.node()->requires_grad) {
                     pb.node()->ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i) {
                       const double bi = pb.node()->data[i];
                       pb.node()->grad[i] -= self.grad[i] * pa.node()->data[i] / (bi * bi);
                     }
                   }
                 });
}

inline Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                      : std::exp(v) / (1.0 + std::exp(v));
  }
  auto px = x;
  return make_op(x.shape(), std::move(out), {x},
                 [px](detail::TensorNode& self) {
                   auto* p = px.node();
                   if (!p->requires_grad) return;
                   p->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     const double y = self.data[i];
                     p->grad[i] += self.grad[i] * y * (1.0 - y);
                   }
                 });
}

inline Tensor tanh_op(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.data()[i]);
  auto px = x;
  return make_op(x.shape(), std::move(out), {x},
                 [px](detail::TensorNode& self) {
                   auto* p = px.node();
                   if (!p->requires_grad) return;
                   p->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     const double y = self.data[i];
                     p->grad[i] += self.grad[i] * (1.0 - y * y);
                   }
                 });
}

inline Tensor exp_op(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.data()[i]);
  auto px = x;
  return make_op(x.shape(), std::move(out), {x},
                 [px](detail::TensorNode& self) {
                   auto* p = px.node();
                   if (!p->requires_grad) return;
                   p->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     p->grad[i] += self.grad[i] * self.data[i];
                 });
}

inline Tensor log_op(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x.data()[i]);
  auto px = x;
  return make_op(x.shape(), std::move(out), {x},
                 [px](detail::TensorNode& self) {
                   auto* p = px.node();
                   if (!p->requires_grad) return;
                   p->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     p->grad[i] += self.grad[i] / p->data[i];
                 });
}

// ---------------------------------------------------------------------------
// reductions

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  auto px = x;
  return make_op({1}, {s}, {x},
                 [px](detail::TensorNode& self) {
                   auto* p = px.node();
                   if (!p->requires_grad) return;
                   p->ensure_grad();
                   const double g = self.grad[0];
                   for (double& gi : p->grad) gi += g;
                 });
}

inline Tensor mean(const Tensor& x) {
  require(x.numel() > 0, ErrorKind::contract, "mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// ---------------------------------------------------------------------------
// matrix products (Eigen-backed kernels)

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.rows(),
          ErrorKind::contract, "matmul: incompatible shapes");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  {
    detail::ECMap A(a.data().data(), m, k), B(b.data().data(), k, n);
    detail::EMap C(out.data(), m, n);
    C.noalias() = A * B;
  }
  auto pa = a, pb = b;
  return make_op({m, n}, std::move(out), {a, b},
                 [pa, pb, m, k, n](detail::TensorNode& self) {
                   detail::ECMap G(self.grad.data(), m, n);
                   if (pa.node()->requires_grad) {
                     pa.node()->ensure_grad();
                     detail::ECMap B(pb.node()->data.data(), k, n);
                     detail::EMap GA(pa.node()->grad.data(), m, k);
                     GA.noalias() += G * B.transpose();
                   }
                   if (pb.node()->requires_grad) {
                     pb.node()->ensure_grad();
                     detail::ECMap A(pa.node()->data.data(), m, k);
                     detail::EMap GB(pb.node()->grad.data(), k, n);
                     GB.noalias() += A.transpose() * G;
                   }
                 });
}

// a [m,k] times b^T where b is [n,k]; result [m,n].
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.cols(),
          ErrorKind::contract, "matmul_nt: incompatible shapes");
  const int m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  {
    detail::ECMap A(a.data().data(), m, k), B(b.data().data(), n, k);
    detail::EMap C(out.data(), m, n);
    C.noalias() = A * B.transpose();
  }
  auto pa = a, pb = b;
  return make_op({m, n}, std::move(out), {a, b},
                 [pa, pb, m, k, n](detail::TensorNode& self) {
                   detail::ECMap G(self.grad.data(), m, n);
                   if (pa.node()->requires_grad) {
                     pa.node()->ensure_grad();
                     detail::ECMap B(pb.node()->data.data(), n, k);
                     detail::EMap GA(pa.node()->grad.data(), m, k);
                     GA.noalias() += G * B;
                   }
                   if (pb.node()->requires_grad) {
                     pb.node()->ensure_grad();
                     detail::ECMap A(pa.node()->data.data(), m, k);
                     detail::EMap GB(pb.node()->grad.data(), n, k);
                     GB.noalias() += G.transpose() * A;
                   }
                 });
}

// ---------------------------------------------------------------------------
// softmax family (last dimension; numerically stabilized by max subtraction)

inline Tensor softmax(const Tensor& x) {
  require(x.rank() == 1 || x.rank() == 2, ErrorKind::contract,
          "softmax: expects 1-D or 2-D input");
  require(x.numel() > 0, ErrorKind::invalid_input, "softmax: empty input");
  require(x.all_finite(), ErrorKind::invalid_input, "softmax: non-finite input");
  const int m = x.rows(), n = x.cols();
  std::vector<double> out(x.numel());
  for (int i = 0; i < m; ++i) {
    const double* row = x.data().data() + static_cast<std::size_t>(i) * n;
    double* orow = out.data() + static_cast<std::size_t>(i) * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      s += orow[j];
    }
    for (int j = 0; j < n; ++j) orow[j] /= s;
  }
  auto px = x;
  return make_op(x.shape(), std::move(out), {x},
                 [px, m, n](detail::TensorNode& self) {
                   auto* p = px.node();
                   if (!p->requires_grad) return;
                   p->ensure_grad();
                   for (int i = 0; i < m; ++i) {
                     const double* y = self.data.data() + static_cast<std::size_t>(i) * n;
                     const double* gy = self.grad.data() + static_cast<std::size_t>(i) * n;
                     double* gx = p->grad.data() + static_cast<std::size_t>(i) * n;
                     double dot = 0.0;
                     for (int j = 0; j < n; ++j) dot += gy[j] * y[j];
                     for (int j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - dot);
                   }
                 });
}

// Per-row log(sum(exp(x))); shape [m] for 2-D input, [1] for 1-D.
inline Tensor logsumexp(const Tensor& x) {
  require(x.rank() == 1 || x.rank() == 2, ErrorKind::contract,
          "logsumexp: expects 1-D or 2-D input");
  require(x.all_finite(), ErrorKind::invalid_input, "logsumexp: non-finite input");
  const int m = x.rows(), n = x.cols();
  std::vector<double> out(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const double* row = x.data().data() + static_cast<std::size_t>(i) * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    out[static_cast<std::size_t>(i)] = mx + std::log(s);
  }
  auto px = x;
  return make_op({m}, std::move(out), {x},
                 [px, m, n](detail::TensorNode& self) {
                   auto* p = px.node();
                   if (!p->requires_grad) return;
                   p->ensure_grad();
                   for (int i = 0; i < m; ++i) {
                     const double* row = p->data.data() + static_cast<std::size_t>(i) * n;
                     double* gx = p->grad.data() + static_cast<std::size_t>(i) * n;
                     const double lse = self.data[static_cast<std::size_t>(i)];
                     const double g = self.grad[static_cast<std::size_t>(i)];
                     for (int j = 0; j < n; ++j) gx[j] += g * std::exp(row[j] - lse);
                   }
                 });
}

// Differentiable expectation of the index under softmax(v); scalar output.
inline Tensor soft_argmax(const Tensor& v) {
  require(v.rank() == 1, ErrorKind::contract, "soft_argmax: expects 1-D input");
  require(v.numel() >= 1, ErrorKind::invalid_input, "soft_argmax: empty input");
  require(v.all_finite(), ErrorKind::invalid_input, "soft_argmax: non-finite input");
  const int n = v.cols();
  std::vector<double> p(static_cast<std::size_t>(n));
  double mx = v.data()[0];
  for (int j = 1; j < n; ++j) mx = std::max(mx, v.data()[j]);
  double s = 0.0;
  for (int j = 0; j < n; ++j) {
    p[static_cast<std::size_t>(j)] = std::exp(v.data()[j] - mx);
    s += p[static_cast<std::size_t>(j)];
  }
  double e = 0.0;
  for (int j = 0; j < n; ++j) {
    p[static_cast<std::size_t>(j)] /= s;
    e += j * p[static_cast<std::size_t>(j)];
  }
  auto pv = v;
  return make_op({1}, {e}, {v},
                 [pv, p, n](detail::TensorNode& self) {
                   auto* q = pv.node();
                   if (!q->requires_grad) return;
                   q->ensure_grad();
                   const double g = self.grad[0];
                   const double e = self.data[0];
                   for (int j = 0; j < n; ++j)
                     q->grad[j] += g * p[static_cast<std::size_t>(j)] * (j - e);
                 });
}

// ---------------------------------------------------------------------------
// layer norm (per row): y = (x - mean)/sqrt(var + eps) * gain + bias

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
  require(x.rank() == 2, ErrorKind::contract, "layer_norm: expects 2-D input");
  const int m = x.rows(), n = x.cols();
  require(gain.numel() == static_cast<std::size_t>(n) &&
              bias.numel() == static_cast<std::size_t>(n),
          ErrorKind::contract, "layer_norm: gain/bias length mismatch");
  std::vector<double> out(x.numel());
  std::vector<double> inv_sd(static_cast<std::size_t>(m));
  std::vector<double> xhat(x.numel());
  for (int i = 0; i < m; ++i) {
    const double* row = x.data().data() + static_cast<std::size_t>(i) * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += row[j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= n;
    const double isd = 1.0 / std::sqrt(var + eps);
    inv_sd[static_cast<std::size_t>(i)] = isd;
    for (int j = 0; j < n; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * n + j;
      xhat[idx] = (row[j] - mu) * isd;
      out[idx] = xhat[idx] * gain.data()[j] + bias.data()[j];
    }
  }
  auto px = x, pg = gain, pb = bias;
  return make_op(
      x.shape(), std::move(out), {x, gain, bias},
      [px, pg, pb, m, n, inv_sd, xhat](detail::TensorNode& self) {
        if (pg.node()->requires_grad) {
          pg.node()->ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
              pg.node()->grad[j] += self.grad[static_cast<std::size_t>(i) * n + j] *
                                    xhat[static_cast<std::size_t>(i) * n + j];
        }
        if (pb.node()->requires_grad) {
          pb.node()->ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
              pb.node()->grad[j] += self.grad[static_cast<std::size_t>(i) * n + j];
        }
        if (px.node()->requires_grad) {
          px.node()->ensure_grad();
          for (int i = 0; i < m; ++i) {
            const double* gy = self.grad.data() + static_cast<std::size_t>(i) * n;
            const double* xh = xhat.data() + static_cast<std::size_t>(i) * n;
            double* gx = px.node()->grad.data() + static_cast<std::size_t>(i) * n;
            double mh = 0.0, mhx = 0.0;
            for (int j = 0; j < n; ++j) {
              const double h = gy[j] * pg.node()->data[j];
              mh += h;
              mhx += h * xh[j];
            }
            mh /= n;
            mhx /= n;
            const double isd = inv_sd[static_cast<std::size_t>(i)];
            for (int j = 0; j < n; ++j) {
              const double h = gy[j] * pg.node()->data[j];
              gx[j] += isd * (h - mh - xh[j] * mhx);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// gather / slice / concat

// Rows of `table` selected by token ids; result [len(ids), hidden].
inline Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  require(table.rank() == 2, ErrorKind::contract, "embedding: table must be 2-D");
  const int v = table.rows(), h = table.cols();
  std::vector<double> out(ids.size() * static_cast<std::size_t>(h));
  for (std::size_t r = 0; r < ids.size(); ++r) {
    require(ids[r] >= 0 && ids[r] < v, ErrorKind::contract, "embedding: id out of range");
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[r]) * h, h,
                out.data() + r * static_cast<std::size_t>(h));
  }
  auto pt = table;
  return make_op({static_cast<int>(ids.size()), h}, std::move(out), {table},
                 [pt, ids, h](detail::TensorNode& self) {
                   auto* p = pt.node();
                   if (!p->requires_grad) return;
                   p->ensure_grad();
                   for (std::size_t r = 0; r < ids.size(); ++r) {
                     const double* g = self.grad.data() + r * static_cast<std::size_t>(h);
                     double* dst = p->grad.data() + static_cast<std::size_t>(ids[r]) * h;
                     for (int j = 0; j < h; ++j) dst[j] += g[j];
                   }
                 });
}

inline Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
  require(x.rank() == 2, ErrorKind::contract, "gather_rows: expects 2-D input");
  const int n = x.cols(), m = x.rows();
  std::vector<double> out(rows.size() * static_cast<std::size_t>(n));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] >= 0 && rows[r] < m, ErrorKind::contract, "gather_rows: out of range");
    std::copy_n(x.data().data() + static_cast<std::size_t>(rows[r]) * n, n,
                out.data() + r * static_cast<std::size_t>(n));
  }
  auto px = x;
  return make_op({static_cast<int>(rows.size()), n}, std::move(out), {x},
                 [px, rows, n](detail::TensorNode& self) {
                   auto* p = px.node();
                   if (!p->requires_grad) return;
                   p->ensure_grad();
                   for (std::size_t r = 0; r < rows.size(); ++r) {
                     const double* g = self.grad.data() + r * static_cast<std::size_t>(n);
                     double* dst = p->grad.data() + static_cast<std::size_t>(rows[r]) * n;
                     for (int j = 0; j < n; ++j) dst[j] += g[j];
                   }
                 });
}

inline Tensor slice_cols(const Tensor& x, int c0, int c1) {
  require(x.rank() == 2 && 0 <= c0 && c0 < c1 && c1 <= x.cols(),
          ErrorKind::contract, "slice_cols: bad range");
  const int m = x.rows(), n = x.cols(), w = c1 - c0;
  std::vector<double> out(static_cast<std::size_t>(m) * w);
  for (int i = 0; i < m; ++i)
    std::copy_n(x.data().data() + static_cast<std::size_t>(i) * n + c0, w,
                out.data() + static_cast<std::size_t>(i) * w);
  auto px = x;
  return make_op({m, w}, std::move(out), {x},
                 [px, c0, m, n, w](detail::TensorNode& self) {
                   auto* p = px.node();
                   if (!p->requires_grad) return;
                   p->ensure_grad();
                   for (int i = 0; i < m; ++i) {
                     const double* g = self.grad.data() + static_cast<std::size_t>(i) * w;
                     double* dst = p->grad.data() + static_cast<std::size_t>(i) * n + c0;
                     for (int j = 0; j < w; ++j) dst[j] += g[j];
                   }
                 });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), ErrorKind::contract, "concat_cols: no parts");
  const int m = parts[0].rows();
  int n = 0;
  for (const Tensor& p : parts) {
    require(p.rank() == 2 && p.rows() == m, ErrorKind::contract,
            "concat_cols: row mismatch");
    n += p.cols();
  }
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  int off = 0;
  for (const Tensor& p : parts) {
    const int w = p.cols();
    for (int i = 0; i < m; ++i)
      std::copy_n(p.data().data() + static_cast<std::size_t>(i) * w, w,
                  out.data() + static_cast<std::size_t>(i) * n + off);
    off += w;
  }
  std::vector<int> offs;
  offs.reserve(parts.size());
  off = 0;
  for (const Tensor& p : parts) {
    offs.push_back(off);
    off += p.cols();
  }
  auto parts_copy = parts;
  return make_op({m, n}, std::move(out), parts,
                 [parts_copy, offs, m, n](detail::TensorNode& self) {
                   for (std::size_t k = 0; k < parts_copy.size(); ++k) {
                     auto* p = parts_copy[k].node();
                     if (!p->requires_grad) continue;
                     p->ensure_grad();
                     const int w = parts_copy[k].cols();
                     for (int i = 0; i < m; ++i) {
                       const double* g =
                           self.grad.data() + static_cast<std::size_t>(i) * n + offs[k];
                       double* dst = p->grad.data() + static_cast<std::size_t>(i) * w;
                       for (int j = 0; j < w; ++j) dst[j] += g[j];
                     }
                   }
                 });
}

// Picks x(i, cols[i]) for each row; result [m].
inline Tensor rows_pick(const Tensor& x, const std::vector<int>& cols) {
  require(x.rank() == 2 && cols.size() == static_cast<std::size_t>(x.rows()),
          ErrorKind::contract, "rows_pick: needs one column index per row");
  const int m = x.rows(), n = x.cols();
  std::vector<double> out(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    require(cols[static_cast<std::size_t>(i)] >= 0 &&
                cols[static_cast<std::size_t>(i)] < n,
            ErrorKind::contract, "rows_pick: column out of range");
    out[static_cast<std::size_t>(i)] =
        x.data()[static_cast<std::size_t>(i) * n + cols[static_cast<std::size_t>(i)]];
  }
  auto px = x;
  return make_op({m}, std::move(out), {x},
                 [px, cols, n](detail::TensorNode& self) {
                   auto* p = px.node();
                   if (!p->requires_grad) return;
                   p->ensure_grad();
                   for (std::size_t i = 0; i < cols.size(); ++i)
                     p->grad[i * n + static_cast<std::size_t>(cols[i])] += self.grad[i];
                 });
}

// Flattens a [m,1] or [1,n] tensor to 1-D.
inline Tensor flatten(const Tensor& x) {
  std::vector<double> out = x.data();
  const int n = static_cast<int>(x.numel());
  auto px = x;
  return make_op({n}, std::move(out), {x},
                 [px](detail::TensorNode& self) {
                   auto* p = px.node();
                   if (!p->requires_grad) return;
                   p->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     p->grad[i] += self.grad[i];
                 });
}

// Inverted dropout; active only when a training-mode rng is supplied.
inline Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  require(rate >= 0.0 && rate < 1.0, ErrorKind::contract, "dropout: bad rate");
  if (rate == 0.0) return x;
  const double keep = 1.0 - rate;
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * mask[i];
  auto px = x;
  return make_op(x.shape(), std::move(out), {x},
                 [px, mask](detail::TensorNode& self) {
                   auto* p = px.node();
                   if (!p->requires_grad) return;
                   p->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     p->grad[i] += self.grad[i] * mask[i];
                 });
}

// Cuts the graph: value copy that does not propagate gradients.
inline Tensor detach(const Tensor& x) {
  return Tensor::from(x.shape(), x.data());
}

// ---------------------------------------------------------------------------
// backward

// Reverse-mode sweep from a scalar loss. Gradients of leaf tensors
// (parameters, inputs) accumulate across calls; interior gradients are
// reset per call so repeated backward() on the same graph adds exactly
// one more contribution to every leaf.
inline void backward(const Tensor& loss) {
  require(loss.valid(), ErrorKind::contract, "backward: empty tensor");
  require(loss.numel() == 1, ErrorKind::contract, "backward: loss must be scalar");
  if (!loss.requires_grad()) return;

  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> seen;
  std::vector<std::pair<detail::TensorNode*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::TensorNode* p = node->parents[next].get();
      ++next;
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // order is topological (parents before children); walk it backwards.
  for (detail::TensorNode* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
    else n->ensure_grad();
  }
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorNode* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

inline void zero_grad(std::vector<Tensor>& params) {
  for (Tensor& p : params) p.zero_grad();
}

}  // namespace amtl
