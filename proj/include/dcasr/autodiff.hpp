#pragma once

// Define-by-run reverse-mode differentiation over dense Tensors.
//
// Every op builds a Node holding its value and a closure that pushes the
// node's gradient into its parents. Nodes that do not depend on any
// parameter carry no closure. backward() walks the graph once in reverse
// topological order and then drops the closures so the graph is freed as
// soon as the caller releases the root.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dcasr/tensor.hpp"

namespace dcasr::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  // Long recurrent chains would otherwise recurse once per node on release.
  ~Node() {
    std::vector<NodePtr> pending = std::move(parents);
    while (!pending.empty()) {
      NodePtr p = std::move(pending.back());
      pending.pop_back();
      if (p && p.use_count() == 1) {
        for (auto& q : p->parents) pending.push_back(std::move(q));
        p->parents.clear();
      }
    }
  }

  Tensor& grad_buffer() {
    if (!has_grad) {
      grad = Tensor(value.shape());
      has_grad = true;
    }
    return grad;
  }
};

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

// Disables graph construction in the current thread (inference).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_enabled_flag()) { grad_enabled_flag() = false; }
  ~NoGradGuard() { grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  bool valid() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  // Parameters only: optimizers and checkpoint loading write through this.
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t numel() const { return node_->value.numel(); }
  double item() const { return node_->value.item(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->has_grad; }

  // Gradient accumulated by the last backward pass; zeros if none reached.
  Tensor grad() const {
    return node_->has_grad ? node_->grad : Tensor(node_->value.shape());
  }
  void zero_grad() {
    node_->grad = Tensor();
    node_->has_grad = false;
  }

  Node* node() const { return node_.get(); }
  const NodePtr& ptr() const { return node_; }

 private:
  NodePtr node_;
};

inline Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

inline Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

namespace detail {

inline Var make_node(Tensor value, std::vector<Var> inputs,
                     std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (grad_enabled_flag()) {
    bool any = false;
    for (const auto& v : inputs) any = any || v.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(inputs.size());
      for (auto& v : inputs) n->parents.push_back(v.ptr());
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Var(std::move(n));
}

// Gradient sink for parent i, or nullptr when it does not need one.
inline Tensor* sink(Node& self, std::size_t i) {
  Node* p = self.parents[i].get();
  return p->requires_grad ? &p->grad_buffer() : nullptr;
}

inline bool scalar_like(const Tensor& t) { return t.numel() == 1 && t.rank() <= 1; }

[[noreturn]] inline void shape_error(const std::string& op, const Shape& a,
                                     const Shape& b) {
  throw std::invalid_argument(op + ": shape mismatch " + shape_string(a) +
                              " vs " + shape_string(b));
}

// Elementwise binary op with scalar-only broadcasting.
template <typename Fwd, typename DA, typename DB>
Var binary(const std::string& name, const Var& a, const Var& b, Fwd fwd, DA da,
           DB db) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool same = av.shape() == bv.shape();
  const bool a_scalar = !same && scalar_like(av);
  const bool b_scalar = !same && scalar_like(bv);
  if (!same && !a_scalar && !b_scalar) shape_error(name, av.shape(), bv.shape());
  const Shape out_shape = a_scalar ? bv.shape() : av.shape();
  const std::size_t n = shape_numel(out_shape);
  Tensor out(out_shape);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = fwd(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
  }
  return make_node(std::move(out), {a, b},
                   [a_scalar, b_scalar, n, da, db](Node& self) {
                     const Tensor& x = self.parents[0]->value;
                     const Tensor& y = self.parents[1]->value;
                     const Tensor& g = self.grad;
                     if (Tensor* ga = sink(self, 0)) {
                       for (std::size_t i = 0; i < n; ++i) {
                         (*ga)[a_scalar ? 0 : i] +=
                             g[i] * da(x[a_scalar ? 0 : i], y[b_scalar ? 0 : i]);
                       }
                     }
                     if (Tensor* gb = sink(self, 1)) {
                       for (std::size_t i = 0; i < n; ++i) {
                         (*gb)[b_scalar ? 0 : i] +=
                             g[i] * db(x[a_scalar ? 0 : i], y[b_scalar ? 0 : i]);
                       }
                     }
                   });
}

// Elementwise unary op whose derivative is expressed via input and output.
template <typename Fwd, typename Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = fwd(av[i]);
  return make_node(std::move(out), {a}, [deriv](Node& self) {
    Tensor* ga = sink(self, 0);
    if (!ga) return;
    const Tensor& x = self.parents[0]->value;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      (*ga)[i] += self.grad[i] * deriv(x[i], self.value[i]);
    }
  });
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  return detail::binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Var sub(const Var& a, const Var& b) {
  return detail::binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Var mul(const Var& a, const Var& b) {
  return detail::binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

inline Var scale(const Var& a, double k) {
  return detail::unary(
      a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}

inline Var tanh(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var exp(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

// (m,k)x(k,n) -> (m,n); (m,k)x(k) -> (m); (k)x(k,n) -> (n).
inline Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() < 1 || av.rank() > 2 || bv.rank() < 1 || bv.rank() > 2 ||
      (av.rank() == 1 && bv.rank() == 1)) {
    detail::shape_error("matmul", av.shape(), bv.shape());
  }
  const std::size_t m = av.rank() == 2 ? av.dim(0) : 1;
  const std::size_t k = av.shape().back();
  const std::size_t kb = bv.dim(0);
  const std::size_t n = bv.rank() == 2 ? bv.dim(1) : 1;
  if (k != kb) detail::shape_error("matmul", av.shape(), bv.shape());
  Shape out_shape;
  if (av.rank() == 2) out_shape.push_back(m);
  if (bv.rank() == 2) out_shape.push_back(n);
  Tensor out(out_shape);
  const double* A = av.data();
  const double* B = bv.data();
  double* C = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) C[i * n + j] += aip * B[p * n + j];
    }
  }
  return detail::make_node(std::move(out), {a, b}, [m, k, n](Node& self) {
    const double* A = self.parents[0]->value.data();
    const double* B = self.parents[1]->value.data();
    const double* G = self.grad.data();
    if (Tensor* ga = detail::sink(self, 0)) {
      double* GA = ga->data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * B[p * n + j];
          GA[i * k + p] += s;
        }
    }
    if (Tensor* gb = detail::sink(self, 1)) {
      double* GB = gb->data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) GB[p * n + j] += aip * G[i * n + j];
        }
    }
  });
}

// x W^T + b for x of shape [in] or [rows, in], W [out, in], b [out] (optional).
inline Var linear(const Var& x, const Var& w, const Var& b = Var()) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (wv.rank() != 2 || xv.rank() < 1 || xv.rank() > 2 ||
      xv.shape().back() != wv.dim(1)) {
    detail::shape_error("linear", xv.shape(), wv.shape());
  }
  const std::size_t rows = xv.rank() == 2 ? xv.dim(0) : 1;
  const std::size_t in = wv.dim(1);
  const std::size_t out_dim = wv.dim(0);
  const bool has_bias = b.valid();
  if (has_bias && b.shape() != Shape{out_dim}) {
    detail::shape_error("linear(bias)", b.shape(), Shape{out_dim});
  }
  Shape out_shape = xv.rank() == 2 ? Shape{rows, out_dim} : Shape{out_dim};
  Tensor out(out_shape);
  const double* X = xv.data();
  const double* W = wv.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < out_dim; ++o) {
      double s = has_bias ? b.value()[o] : 0.0;
      const double* wr = W + o * in;
      const double* xr = X + r * in;
      for (std::size_t i = 0; i < in; ++i) s += wr[i] * xr[i];
      out[r * out_dim + o] = s;
    }
  }
  std::vector<Var> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return detail::make_node(
      std::move(out), std::move(inputs), [rows, in, out_dim, has_bias](Node& self) {
        const double* X = self.parents[0]->value.data();
        const double* W = self.parents[1]->value.data();
        const double* G = self.grad.data();
        if (Tensor* gx = detail::sink(self, 0)) {
          double* GX = gx->data();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < out_dim; ++o) {
              const double g = G[r * out_dim + o];
              if (g == 0.0) continue;
              const double* wr = W + o * in;
              double* gxr = GX + r * in;
              for (std::size_t i = 0; i < in; ++i) gxr[i] += g * wr[i];
            }
        }
        if (Tensor* gw = detail::sink(self, 1)) {
          double* GW = gw->data();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < out_dim; ++o) {
              const double g = G[r * out_dim + o];
              if (g == 0.0) continue;
              const double* xr = X + r * in;
              double* gwr = GW + o * in;
              for (std::size_t i = 0; i < in; ++i) gwr[i] += g * xr[i];
            }
        }
        if (has_bias) {
          if (Tensor* gb = detail::sink(self, 2)) {
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t o = 0; o < out_dim; ++o) (*gb)[o] += G[r * out_dim + o];
          }
        }
      });
}

// Softmax over the last axis.
inline Var softmax(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t n = av.cols();
  const std::size_t rows = av.numel() / n;
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += (y[i] = std::exp(x[i] - mx));
    for (std::size_t i = 0; i < n; ++i) y[i] /= z;
  }
  return detail::make_node(std::move(out), {a}, [rows, n](Node& self) {
    Tensor* ga = detail::sink(self, 0);
    if (!ga) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* g = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += g[i] * y[i];
      for (std::size_t i = 0; i < n; ++i) (*ga)[r * n + i] += y[i] * (g[i] - dot);
    }
  });
}

// log(softmax(a)) over the last axis, computed stably.
inline Var log_softmax(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t n = av.cols();
  const std::size_t rows = av.numel() / n;
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(x[i] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] - lse;
  }
  return detail::make_node(std::move(out), {a}, [rows, n](Node& self) {
    Tensor* ga = detail::sink(self, 0);
    if (!ga) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* g = self.grad.data() + r * n;
      double gs = 0.0;
      for (std::size_t i = 0; i < n; ++i) gs += g[i];
      for (std::size_t i = 0; i < n; ++i) {
        (*ga)[r * n + i] += g[i] - std::exp(y[i]) * gs;
      }
    }
  });
}

// Concatenation of vectors, or of matrices with equal row counts, along the
// last axis.
inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Tensor& first = parts.front().value();
  if (first.rank() < 1 || first.rank() > 2) {
    throw std::invalid_argument("concat: unsupported shape " +
                                shape_string(first.shape()));
  }
  const std::size_t rows = first.rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Tensor& v = p.value();
    if (v.rank() != first.rank() || v.rows() != rows) {
      detail::shape_error("concat", first.shape(), v.shape());
    }
    widths.push_back(v.cols());
    total += v.cols();
  }
  Tensor out(first.rank() == 2 ? Shape{rows, total} : Shape{total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c)
        out[r * total + off + c] = v[r * widths[k] + c];
    off += widths[k];
  }
  return detail::make_node(std::move(out), parts, [rows, total, widths](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (Tensor* g = detail::sink(self, k)) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c)
            (*g)[r * widths[k] + c] += self.grad[r * total + off + c];
      }
      off += widths[k];
    }
  });
}

// Stacks equal-length vectors into a [count, n] matrix.
inline Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no inputs");
  const Shape s = rows.front().shape();
  if (s.size() != 1) throw std::invalid_argument("stack_rows: expects vectors, got " + shape_string(s));
  const std::size_t n = s[0];
  Tensor out(Shape{rows.size(), n});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].shape() != s) detail::shape_error("stack_rows", s, rows[r].shape());
    std::copy_n(rows[r].value().data(), n, out.data() + r * n);
  }
  return detail::make_node(std::move(out), rows, [n](Node& self) {
    for (std::size_t r = 0; r < self.parents.size(); ++r) {
      if (Tensor* g = detail::sink(self, r)) {
        for (std::size_t i = 0; i < n; ++i) (*g)[i] += self.grad[r * n + i];
      }
    }
  });
}

// Range [begin, end) along the first axis.
inline Var slice(const Var& a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  if (av.rank() < 1 || begin > end || end > av.dim(0)) {
    throw std::invalid_argument("slice: range [" + std::to_string(begin) + "," +
                                std::to_string(end) + ") invalid for shape " +
                                shape_string(av.shape()));
  }
  const std::size_t stride = av.numel() / av.dim(0);
  Shape s = av.shape();
  s[0] = end - begin;
  Tensor out(s, std::vector<double>(av.values().begin() + begin * stride,
                                    av.values().begin() + end * stride));
  return detail::make_node(std::move(out), {a}, [begin, stride](Node& self) {
    if (Tensor* g = detail::sink(self, 0)) {
      for (std::size_t i = 0; i < self.grad.numel(); ++i) {
        (*g)[begin * stride + i] += self.grad[i];
      }
    }
  });
}

// Range [begin, end) along the last axis of a vector or matrix.
inline Var slice_last(const Var& a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  if (av.rank() == 1) return slice(a, begin, end);
  if (av.rank() != 2 || begin > end || end > av.dim(1)) {
    throw std::invalid_argument("slice_last: range [" + std::to_string(begin) + "," +
                                std::to_string(end) + ") invalid for shape " +
                                shape_string(av.shape()));
  }
  const std::size_t rows = av.dim(0);
  const std::size_t n = av.dim(1);
  const std::size_t w = end - begin;
  Tensor out(Shape{rows, w});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) out(r, c) = av(r, begin + c);
  return detail::make_node(std::move(out), {a}, [rows, n, w, begin](Node& self) {
    if (Tensor* g = detail::sink(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < w; ++c) (*g)[r * n + begin + c] += self.grad[r * w + c];
    }
  });
}

// Row r of a matrix as a vector.
inline Var row(const Var& a, std::size_t r) {
  const Tensor& av = a.value();
  if (av.rank() != 2 || r >= av.dim(0)) {
    throw std::invalid_argument("row: index " + std::to_string(r) +
                                " invalid for shape " + shape_string(av.shape()));
  }
  const std::size_t n = av.dim(1);
  Tensor out(Shape{n}, std::vector<double>(av.values().begin() + r * n,
                                           av.values().begin() + (r + 1) * n));
  return detail::make_node(std::move(out), {a}, [r, n](Node& self) {
    if (Tensor* g = detail::sink(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) (*g)[r * n + i] += self.grad[i];
    }
  });
}

inline Var reshape(const Var& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) detail::shape_error("reshape", a.shape(), shape);
  return detail::make_node(a.value().reshaped(std::move(shape)), {a}, [](Node& self) {
    if (Tensor* g = detail::sink(self, 0)) {
      for (std::size_t i = 0; i < self.grad.numel(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return detail::make_node(Tensor::scalar(s), {a}, [](Node& self) {
    if (Tensor* g = detail::sink(self, 0)) {
      const double gv = self.grad[0];
      for (auto& v : g->values()) v += gv;
    }
  });
}

// Sum of the entries whose mask value is nonzero. Masked entries receive
// exactly zero gradient.
inline Var masked_sum(const Var& a, const Tensor& mask) {
  if (mask.shape() != a.shape()) detail::shape_error("masked_sum", a.shape(), mask.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (mask[i] != 0.0) s += a.value()[i];
  }
  return detail::make_node(Tensor::scalar(s), {a}, [mask](Node& self) {
    if (Tensor* g = detail::sink(self, 0)) {
      for (std::size_t i = 0; i < g->numel(); ++i) {
        if (mask[i] != 0.0) (*g)[i] += self.grad[0];
      }
    }
  });
}

// Flat element i as a scalar.
inline Var pick(const Var& a, std::size_t i) {
  if (i >= a.numel()) {
    throw std::invalid_argument("pick: index " + std::to_string(i) +
                                " out of range for shape " + shape_string(a.shape()));
  }
  return detail::make_node(Tensor::scalar(a.value()[i]), {a}, [i](Node& self) {
    if (Tensor* g = detail::sink(self, 0)) (*g)[i] += self.grad[0];
  });
}

// Sum of equally shaped operands, accumulated left to right.
inline Var add_n(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("add_n: no inputs");
  Tensor out(xs.front().shape());
  for (const auto& x : xs) {
    if (x.shape() != out.shape()) detail::shape_error("add_n", out.shape(), x.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += x.value()[i];
  }
  return detail::make_node(std::move(out), xs, [](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      if (Tensor* g = detail::sink(self, k)) {
        for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

// M [rows, n] plus v [n] added to every row. Explicit, not implicit
// broadcasting.
inline Var add_row(const Var& m, const Var& v) {
  const Tensor& mv = m.value();
  if (mv.rank() != 2 || v.shape() != Shape{mv.dim(1)}) {
    detail::shape_error("add_row", mv.shape(), v.shape());
  }
  const std::size_t rows = mv.dim(0);
  const std::size_t n = mv.dim(1);
  Tensor out = mv;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] += v.value()[i];
  return detail::make_node(std::move(out), {m, v}, [rows, n](Node& self) {
    if (Tensor* gm = detail::sink(self, 0)) {
      for (std::size_t i = 0; i < rows * n; ++i) (*gm)[i] += self.grad[i];
    }
    if (Tensor* gv = detail::sink(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < n; ++i) (*gv)[i] += self.grad[r * n + i];
    }
  });
}

// Centered 1-D convolution of a [T] with filters [F, K], zero padded:
// out[t, f] = sum_k filters[f, k] * a[t + k - K/2].
inline Var conv1d_centered(const Var& a, const Var& filters) {
  const Tensor& av = a.value();
  const Tensor& fv = filters.value();
  if (av.rank() != 1 || fv.rank() != 2) {
    detail::shape_error("conv1d_centered", av.shape(), fv.shape());
  }
  const std::size_t T = av.dim(0);
  const std::size_t F = fv.dim(0);
  const std::size_t K = fv.dim(1);
  const long half = static_cast<long>(K / 2);
  Tensor out(Shape{T, F});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t f = 0; f < F; ++f) {
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const long src = static_cast<long>(t) + static_cast<long>(k) - half;
        if (src >= 0 && src < static_cast<long>(T)) s += fv(f, k) * av[src];
      }
      out(t, f) = s;
    }
  return detail::make_node(std::move(out), {a, filters}, [T, F, K, half](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& fv = self.parents[1]->value;
    Tensor* ga = detail::sink(self, 0);
    Tensor* gf = detail::sink(self, 1);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t f = 0; f < F; ++f) {
        const double g = self.grad(t, f);
        for (std::size_t k = 0; k < K; ++k) {
          const long src = static_cast<long>(t) + static_cast<long>(k) - half;
          if (src < 0 || src >= static_cast<long>(T)) continue;
          if (ga) (*ga)[src] += g * fv(f, k);
          if (gf) (*gf)(f, k) += g * av[src];
        }
      }
  });
}

// Copy of the value with no gradient path.
inline Var detach(const Var& a) { return constant(a.value()); }

// Reverse pass from a scalar root. Gradients accumulate additively into
// every reachable node; intermediate closures are released afterwards.
inline void backward(const Var& root) {
  if (!root.valid() || root.numel() != 1 || root.value().rank() > 1) {
    throw std::invalid_argument("backward: root must be scalar, got " +
                                (root.valid() ? shape_string(root.shape()) : std::string("null")));
  }
  if (!root.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->has_grad) n->backward_fn(*n);
  }
  for (Node* n : order) {
    if (n->backward_fn) {
      n->backward_fn = nullptr;
      n->parents.clear();
    }
  }
}

// Maximum over coordinates of |analytic - numeric| / max(1, |analytic|,
// |numeric|), numeric by central differences with step eps.
inline double grad_check(const std::function<Var(const std::vector<Var>&)>& f,
                         const std::vector<Tensor>& point, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-3]");
  }
  std::vector<Var> leaves;
  for (const auto& t : point) {
    if (!t.all_finite()) throw std::domain_error("grad_check: non-finite input");
    leaves.push_back(parameter(t));
  }
  Var out = f(leaves);
  if (!out.value().all_finite()) throw std::domain_error("grad_check: non-finite value");
  backward(out);
  auto eval = [&](const std::vector<Tensor>& pt) {
    NoGradGuard guard;
    std::vector<Var> cs;
    for (const auto& t : pt) cs.push_back(constant(t));
    const double v = f(cs).item();
    if (!std::isfinite(v)) throw std::domain_error("grad_check: non-finite value");
    return v;
  };
  double worst = 0.0;
  std::vector<Tensor> probe = point;
  for (std::size_t k = 0; k < point.size(); ++k) {
    const Tensor analytic = leaves[k].grad();
    if (!analytic.all_finite()) throw std::domain_error("grad_check: non-finite gradient");
    for (std::size_t i = 0; i < point[k].numel(); ++i) {
      const double x0 = point[k][i];
      probe[k][i] = x0 + eps;
      const double up = eval(probe);
      probe[k][i] = x0 - eps;
      const double down = eval(probe);
      probe[k][i] = x0;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

// Same metric for a loss closed over persistent parameters: each parameter
// value is perturbed in place and restored.
inline double grad_check_params(const std::function<Var()>& loss,
                                std::vector<Var> params, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-3]");
  }
  for (auto& p : params) p.zero_grad();
  Var out = loss();
  if (!out.value().all_finite()) throw std::domain_error("grad_check: non-finite value");
  backward(out);
  out = Var();
  std::vector<Tensor> analytic;
  for (auto& p : params) analytic.push_back(p.grad());
  auto eval = [&] {
    NoGradGuard guard;
    const double v = loss().item();
    if (!std::isfinite(v)) throw std::domain_error("grad_check: non-finite value");
    return v;
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& value = params[k].mutable_value();
    for (std::size_t i = 0; i < value.numel(); ++i) {
      const double x0 = value[i];
      value[i] = x0 + eps;
      const double up = eval();
      value[i] = x0 - eps;
      const double down = eval();
      value[i] = x0;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k][i];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  for (auto& p : params) p.zero_grad();
  return worst;
}

}  // namespace dcasr::ad
