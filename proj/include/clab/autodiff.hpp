#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "clab/tensor.hpp"

namespace clab {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of primitive applications for one forward pass.
///
/// Nodes are appended in evaluation order, so inputs always precede their
/// consumers and the reverse pass is a plain backwards sweep. Leaves created
/// with leaf() are bound to an external parameter tensor; backward() adds
/// into that tensor's grad buffer and never clears it (the caller resets).
class Tape {
 public:
  struct Node {
    const char* op = "";
    Tensor value;
    std::vector<double> grad;
    std::vector<std::size_t> inputs;
    bool needs_grad = false;
    Tensor* param = nullptr;
    std::function<void(Tape&, const Node&)> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records a trainable leaf bound to `param`.
  Var leaf(Tensor& param) {
    Node n;
    n.op = "leaf";
    n.value = param;
    n.needs_grad = param.requires_grad();
    n.param = &param;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  Var constant(Tensor value) {
    Node n;
    n.op = "constant";
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  /// Appends a primitive result. Throws NumericError if any output is non-finite.
  Var record(const char* op, Tensor value, std::vector<std::size_t> inputs,
             std::function<void(Tape&, const Node&)> backward) {
    if (!value.all_finite()) throw NumericError(std::string("non-finite output in ") + op);
    Node n;
    n.op = op;
    n.value = std::move(value);
    for (auto in : inputs) n.needs_grad = n.needs_grad || nodes_[in].needs_grad;
    n.inputs = std::move(inputs);
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient accumulator of an input node during backward, or nullptr if it needs none.
  double* grad_ptr(std::size_t id) {
    auto& n = nodes_[id];
    return n.needs_grad ? n.grad.data() : nullptr;
  }

  /// Gradient of the last backward() root w.r.t. an arbitrary node.
  std::vector<double> grad_of(Var v) const {
    const auto& n = nodes_[v.id()];
    if (n.grad.empty()) return std::vector<double>(n.value.size(), 0.0);
    return n.grad;
  }

  /// Reverse sweep from a single-element root.
  void backward(Var root) {
    if (&root.tape() != this) throw std::invalid_argument("backward: root belongs to another tape");
    const auto& rn = nodes_[root.id()];
    if (rn.value.size() != 1) {
      throw ShapeError("backward: root must have exactly one element, got " + shape_str(rn.value.shape()));
    }
    for (auto& n : nodes_) {
      if (n.needs_grad) {
        n.grad.assign(n.value.size(), 0.0);
      } else {
        n.grad.clear();
      }
    }
    if (!rn.needs_grad) return;
    nodes_[root.id()].grad[0] = 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.needs_grad) continue;
      if (n.backward) n.backward(*this, n);
      if (n.param != nullptr) {
        auto g = n.param->grad();
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
      }
    }
  }

 private:
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->node(id_).value; }

namespace detail {

inline void require_same_tape(const Var& a, const Var& b, const char* op) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  require_same_tape(a, b, op);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

inline void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape()));
  }
}

/// outer x len x inner decomposition of a shape around one axis.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
  Shape reduced;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) s.reduced.push_back(shape[i]);
  }
  if (s.reduced.empty()) s.reduced.push_back(1);
  return s;
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// C(m x n) += A(m x k) * B(k x n)
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  MutMap(c, m, n).noalias() += ConstMap(a, m, k) * ConstMap(b, k, n);
}

// C(m x k) += G(m x n) * B(k x n)^T
inline void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  MutMap(c, m, k).noalias() += ConstMap(g, m, n) * ConstMap(b, k, n).transpose();
}

// C(k x n) += A(m x k)^T * G(m x n)
inline void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  MutMap(c, k, n).noalias() += ConstMap(a, m, k).transpose() * ConstMap(g, m, n);
}

template <typename Fwd, typename Deriv>
Var unary(const char* op, const Var& a, Fwd fwd, Deriv deriv) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  const std::size_t ia = a.id();
  return a.tape().record(op, std::move(out), {ia}, [ia, deriv](Tape& t, const Tape::Node& self) {
    double* ga = t.grad_ptr(ia);
    const Tensor& xv = t.node(ia).value;
    for (std::size_t i = 0; i < xv.size(); ++i) ga[i] += self.grad[i] * deriv(xv[i], self.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("add", std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tape::Node& self) {
    for (auto id : {ia, ib}) {
      if (double* g = t.grad_ptr(id)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("sub", std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tape::Node& self) {
    if (double* g = t.grad_ptr(ia)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = t.grad_ptr(ib)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("mul", std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tape::Node& self) {
    const Tensor& av = t.node(ia).value;
    const Tensor& bv = t.node(ib).value;
    if (double* g = t.grad_ptr(ia)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (double* g = t.grad_ptr(ib)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

inline Var scale(const Var& a, double c) {
  return detail::unary("scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var add_scalar(const Var& a, double c) {
  return detail::unary("add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Var relu(const Var& a) {
  return detail::unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var exp(const Var& a) {
  return detail::unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  return detail::unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var square(const Var& a) {
  return detail::unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var sqrt(const Var& a) {
  return detail::unary("sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

/// a (m x n) plus a length-n row vector broadcast over rows.
inline Var add_bias(const Var& a, const Var& bias) {
  detail::require_same_tape(a, bias, "add_bias");
  detail::require_rank(a, 2, "add_bias");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (bias.value().size() != n) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(a.shape()));
  }
  Tensor out = a.value();
  const Tensor& b = bias.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b[j];
  const std::size_t ia = a.id(), ib = bias.id();
  return a.tape().record("add_bias", std::move(out), {ia, ib}, [ia, ib, m, n](Tape& t, const Tape::Node& self) {
    if (double* g = t.grad_ptr(ia)) {
      for (std::size_t i = 0; i < m * n; ++i) g[i] += self.grad[i];
    }
    if (double* g = t.grad_ptr(ib)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

inline Var matmul(const Var& a, const Var& b) {
  detail::require_same_tape(a, b, "matmul");
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out({m, n});
  detail::gemm_nn(a.value().values().data(), b.value().values().data(), out.values().data(), m, k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("matmul", std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape& t, const Tape::Node& self) {
    if (double* g = t.grad_ptr(ia)) {
      detail::gemm_nt(self.grad.data(), t.node(ib).value.values().data(), g, m, k, n);
    }
    if (double* g = t.grad_ptr(ib)) {
      detail::gemm_tn(t.node(ia).value.values().data(), self.grad.data(), g, m, k, n);
    }
  });
}

inline Var transpose(const Var& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out({n, m});
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  const std::size_t ia = a.id();
  return a.tape().record("transpose", std::move(out), {ia}, [ia, m, n](Tape& t, const Tape::Node& self) {
    double* g = t.grad_ptr(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
  });
}

inline Var reshape(const Var& a, Shape shape) {
  if (shape_size(shape) != a.value().size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape().record("reshape", std::move(out), {ia}, [ia](Tape& t, const Tape::Node& self) {
    double* g = t.grad_ptr(ia);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

/// Concatenation along `axis`; all other dimensions must agree.
inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape shape = parts[0].shape();
  if (axis >= shape.size()) throw ShapeError("concat: axis out of range for " + shape_str(shape));
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_same_tape(parts[0], p, "concat");
    Shape s = p.shape();
    if (s.size() != shape.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != shape[i]) {
        throw ShapeError("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(shape));
      }
    }
    total += s[axis];
  }
  shape[axis] = total;
  auto split = detail::split_axis(shape, axis, "concat");
  Tensor out(shape);
  std::vector<std::size_t> ids, offsets, lens;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.shape()[axis];
    const Tensor& x = p.value();
    for (std::size_t o = 0; o < split.outer; ++o)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t in = 0; in < split.inner; ++in)
          out[(o * total + off + l) * split.inner + in] = x[(o * len + l) * split.inner + in];
    ids.push_back(p.id());
    offsets.push_back(off);
    lens.push_back(len);
    off += len;
  }
  return parts[0].tape().record(
      "concat", std::move(out), ids, [ids, offsets, lens, split, total](Tape& t, const Tape::Node& self) {
        for (std::size_t p = 0; p < ids.size(); ++p) {
          double* g = t.grad_ptr(ids[p]);
          if (!g) continue;
          for (std::size_t o = 0; o < split.outer; ++o)
            for (std::size_t l = 0; l < lens[p]; ++l)
              for (std::size_t in = 0; in < split.inner; ++in)
                g[(o * lens[p] + l) * split.inner + in] += self.grad[(o * total + offsets[p] + l) * split.inner + in];
        }
      });
}

/// Half-open range [begin, end) along `axis`.
inline Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
  auto split = detail::split_axis(a.shape(), axis, "slice");
  if (begin >= end || end > split.len) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                     shape_str(a.shape()));
  }
  Shape shape = a.shape();
  shape[axis] = end - begin;
  const std::size_t len = end - begin;
  Tensor out(shape);
  const Tensor& x = a.value();
  for (std::size_t o = 0; o < split.outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t in = 0; in < split.inner; ++in)
        out[(o * len + l) * split.inner + in] = x[(o * split.len + begin + l) * split.inner + in];
  const std::size_t ia = a.id();
  return a.tape().record("slice", std::move(out), {ia}, [ia, split, begin, len](Tape& t, const Tape::Node& self) {
    double* g = t.grad_ptr(ia);
    for (std::size_t o = 0; o < split.outer; ++o)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t in = 0; in < split.inner; ++in)
          g[(o * split.len + begin + l) * split.inner + in] += self.grad[(o * len + l) * split.inner + in];
  });
}

/// Row i of the result is row index[i] of `a` (2-D).
inline Var gather_rows(const Var& a, std::vector<std::size_t> index) {
  detail::require_rank(a, 2, "gather_rows");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out({index.size(), n});
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= m) throw ShapeError("gather_rows: index out of range");
    std::copy_n(x.values().begin() + index[i] * n, n, out.values().begin() + i * n);
  }
  const std::size_t ia = a.id();
  return a.tape().record("gather_rows", std::move(out), {ia},
                         [ia, n, index = std::move(index)](Tape& t, const Tape::Node& self) {
                           double* g = t.grad_ptr(ia);
                           for (std::size_t i = 0; i < index.size(); ++i)
                             for (std::size_t j = 0; j < n; ++j) g[index[i] * n + j] += self.grad[i * n + j];
                         });
}

/// Drops the diagonal of a square matrix: m x m -> m x (m-1), row order kept.
inline Var remove_diagonal(const Var& a) {
  detail::require_rank(a, 2, "remove_diagonal");
  const std::size_t m = a.shape()[0];
  if (a.shape()[1] != m || m < 2) throw ShapeError("remove_diagonal: need square matrix with m >= 2");
  Tensor out({m, m - 1});
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t c = 0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j != i) out[i * (m - 1) + c++] = x[i * m + j];
    }
  }
  const std::size_t ia = a.id();
  return a.tape().record("remove_diagonal", std::move(out), {ia}, [ia, m](Tape& t, const Tape::Node& self) {
    double* g = t.grad_ptr(ia);
    for (std::size_t i = 0; i < m; ++i) {
      std::size_t c = 0;
      for (std::size_t j = 0; j < m; ++j) {
        if (j != i) g[i * m + j] += self.grad[i * (m - 1) + c++];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions. Reducing removes the axis; a fully reduced result has shape {1}.

inline Var sum(const Var& a) {
  double acc = 0.0;
  for (double v : a.value().values()) acc += v;
  const std::size_t ia = a.id();
  return a.tape().record("sum", Tensor::scalar(acc), {ia}, [ia](Tape& t, const Tape::Node& self) {
    double* g = t.grad_ptr(ia);
    const std::size_t n = t.node(ia).value.size();
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

inline Var sum(const Var& a, std::size_t axis) {
  auto s = detail::split_axis(a.shape(), axis, "sum");
  Tensor out(s.reduced);
  const Tensor& x = a.value();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t in = 0; in < s.inner; ++in) out[o * s.inner + in] += x[(o * s.len + l) * s.inner + in];
  const std::size_t ia = a.id();
  return a.tape().record("sum_axis", std::move(out), {ia}, [ia, s](Tape& t, const Tape::Node& self) {
    double* g = t.grad_ptr(ia);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t l = 0; l < s.len; ++l)
        for (std::size_t in = 0; in < s.inner; ++in) g[(o * s.len + l) * s.inner + in] += self.grad[o * s.inner + in];
  });
}

inline Var mean(const Var& a, std::size_t axis) {
  const auto len = detail::split_axis(a.shape(), axis, "mean").len;
  return scale(sum(a, axis), 1.0 / static_cast<double>(len));
}

/// Maximum along an axis; gradient flows to the first maximal entry.
inline Var max(const Var& a, std::size_t axis) {
  auto s = detail::split_axis(a.shape(), axis, "max");
  Tensor out(s.reduced);
  std::vector<std::size_t> arg(out.size());
  const Tensor& x = a.value();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      std::size_t best = 0;
      for (std::size_t l = 1; l < s.len; ++l) {
        if (x[(o * s.len + l) * s.inner + in] > x[(o * s.len + best) * s.inner + in]) best = l;
      }
      arg[o * s.inner + in] = (o * s.len + best) * s.inner + in;
      out[o * s.inner + in] = x[arg[o * s.inner + in]];
    }
  const std::size_t ia = a.id();
  return a.tape().record("max", std::move(out), {ia}, [ia, arg = std::move(arg)](Tape& t, const Tape::Node& self) {
    double* g = t.grad_ptr(ia);
    for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
  });
}

/// log(sum(exp(x))) along an axis, shifted by the per-slice maximum.
inline Var logsumexp(const Var& a, std::size_t axis) {
  auto s = detail::split_axis(a.shape(), axis, "logsumexp");
  Tensor out(s.reduced);
  const Tensor& x = a.value();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, x[(o * s.len + l) * s.inner + in]);
      double acc = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) acc += std::exp(x[(o * s.len + l) * s.inner + in] - mx);
      out[o * s.inner + in] = mx + std::log(acc);
    }
  const std::size_t ia = a.id();
  return a.tape().record("logsumexp", std::move(out), {ia}, [ia, s](Tape& t, const Tape::Node& self) {
    double* g = t.grad_ptr(ia);
    const Tensor& xv = t.node(ia).value;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t in = 0; in < s.inner; ++in) {
        const double y = self.value[o * s.inner + in];
        const double gy = self.grad[o * s.inner + in];
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t idx = (o * s.len + l) * s.inner + in;
          g[idx] += gy * std::exp(xv[idx] - y);
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Row normalization, sorting, convolution support

/// Divides each row of a 2-D tensor by its L2 norm. Zero rows are a NumericError.
inline Var l2_normalize_rows(const Var& a) {
  detail::require_rank(a, 2, "l2_normalize_rows");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out = a.value();
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += out[i * n + j] * out[i * n + j];
    norms[i] = std::sqrt(ss);
    if (!(norms[i] > 0.0)) throw NumericError("l2_normalize_rows: zero-norm row " + std::to_string(i));
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= norms[i];
  }
  const std::size_t ia = a.id();
  return a.tape().record("l2_normalize_rows", std::move(out), {ia},
                         [ia, m, n, norms = std::move(norms)](Tape& t, const Tape::Node& self) {
                           double* g = t.grad_ptr(ia);
                           for (std::size_t i = 0; i < m; ++i) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < n; ++j) dot += self.value[i * n + j] * self.grad[i * n + j];
                             for (std::size_t j = 0; j < n; ++j) {
                               g[i * n + j] += (self.grad[i * n + j] - self.value[i * n + j] * dot) / norms[i];
                             }
                           }
                         });
}

struct SortedColumns {
  Var sorted;
  /// perms[i * d + j] is the source row of sorted(i, j).
  std::vector<std::size_t> perms;
};

/// Sorts every column ascending, ties broken by original row index. The
/// backward pass scatters through the permutation (sort treated as locally linear).
inline SortedColumns sort_columns(const Var& a) {
  detail::require_rank(a, 2, "sort_columns");
  const std::size_t b = a.shape()[0], d = a.shape()[1];
  const Tensor& x = a.value();
  Tensor out({b, d});
  std::vector<std::size_t> perms(b * d);
  std::vector<std::size_t> idx(b);
  for (std::size_t j = 0; j < d; ++j) {
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t p, std::size_t q) { return x[p * d + j] < x[q * d + j]; });
    for (std::size_t i = 0; i < b; ++i) {
      perms[i * d + j] = idx[i];
      out[i * d + j] = x[idx[i] * d + j];
    }
  }
  const std::size_t ia = a.id();
  Var sorted = a.tape().record("sort_columns", std::move(out), {ia}, [ia, perms, b, d](Tape& t, const Tape::Node& self) {
    double* g = t.grad_ptr(ia);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < d; ++j) g[perms[i * d + j] * d + j] += self.grad[i * d + j];
  });
  return {sorted, std::move(perms)};
}

/// Geometry of a square-kernel 2-D convolution over NHWC input.
struct ConvGeometry {
  std::size_t height = 0, width = 0, channels = 0;
  std::size_t kernel = 3, stride = 1, pad = 1;

  std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  std::size_t patch_size() const { return kernel * kernel * channels; }
};

/// Unfolds NHWC input (B x H x W x C) into patches ((B*Ho*Wo) x (k*k*C)), zero padded.
inline Var im2col(const Var& a, const ConvGeometry& geo) {
  const Shape& s = a.shape();
  if (s.size() != 4 || s[1] != geo.height || s[2] != geo.width || s[3] != geo.channels) {
    throw ShapeError("im2col: input " + shape_str(s) + " does not match geometry");
  }
  if (geo.height + 2 * geo.pad < geo.kernel || geo.width + 2 * geo.pad < geo.kernel || geo.stride == 0) {
    throw ShapeError("im2col: kernel larger than padded input");
  }
  const std::size_t batch = s[0], ho = geo.out_height(), wo = geo.out_width(), patch = geo.patch_size();
  // map[r * patch + c] = flat input index, or npos for padding
  constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> map(batch * ho * wo * patch, npos);
  Tensor out({batch * ho * wo, patch});
  const Tensor& x = a.value();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const std::size_t row = (n * ho + oy) * wo + ox;
        for (std::size_t ky = 0; ky < geo.kernel; ++ky)
          for (std::size_t kx = 0; kx < geo.kernel; ++kx) {
            const long iy = static_cast<long>(oy * geo.stride + ky) - static_cast<long>(geo.pad);
            const long ix = static_cast<long>(ox * geo.stride + kx) - static_cast<long>(geo.pad);
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(geo.height) || ix >= static_cast<long>(geo.width)) continue;
            for (std::size_t c = 0; c < geo.channels; ++c) {
              const std::size_t src = ((n * geo.height + iy) * geo.width + ix) * geo.channels + c;
              const std::size_t col = (ky * geo.kernel + kx) * geo.channels + c;
              map[row * patch + col] = src;
              out[row * patch + col] = x[src];
            }
          }
      }
  const std::size_t ia = a.id();
  return a.tape().record("im2col", std::move(out), {ia}, [ia, map = std::move(map)](Tape& t, const Tape::Node& self) {
    double* g = t.grad_ptr(ia);
    for (std::size_t i = 0; i < map.size(); ++i) {
      if (map[i] != npos) g[map[i]] += self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Gradient checking

using ScalarFn = std::function<Var(Tape&, const Var&)>;

/// Largest relative error between reverse-mode and central-difference
/// gradients of `fn` at `point`. Relative error per coordinate uses the
/// denominator max(|analytic|, |numeric|, 1e-8).
inline double check_gradient(const ScalarFn& fn, const Tensor& point, double epsilon) {
  Tensor p = point;
  p.set_requires_grad(true);
  std::vector<double> analytic;
  {
    Tape tape;
    Var x = tape.leaf(p);
    Var y = fn(tape, x);
    tape.backward(y);
    analytic.assign(p.grad().begin(), p.grad().end());
  }
  auto eval = [&](const Tensor& at) {
    Tape tape;
    Var y = fn(tape, tape.constant(at));
    const double v = y.item();
    if (!std::isfinite(v)) throw NumericError("check_gradient: non-finite evaluation");
    return v;
  };
  double worst = 0.0;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double x0 = point[i];
    probe[i] = x0 + epsilon;
    const double fp = eval(probe);
    probe[i] = x0 - epsilon;
    const double fm = eval(probe);
    probe[i] = x0;
    const double numeric = (fp - fm) / (2.0 * epsilon);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace clab
