#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "treelm/syntax.hpp"  // kNegInf

namespace treelm {

// ---------------------------------------------------------------------------
// Dense n-d value. Scalars are represented as shape {1}.
// ---------------------------------------------------------------------------

inline int64_t numel_of(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

template <typename T>
struct Array {
  std::vector<int> shape;
  std::vector<T> data;

  Array() = default;
  explicit Array(std::vector<int> s) : shape(std::move(s)), data(static_cast<size_t>(numel_of(shape)), T(0)) {}
  Array(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != numel_of(shape))
      throw std::invalid_argument("Array: data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }
  bool empty() const { return data.empty(); }

  static Array full(std::vector<int> s, T v) {
    Array a(std::move(s));
    std::fill(a.data.begin(), a.data.end(), v);
    return a;
  }
  static Array scalar(T v) { return Array({1}, {v}); }
};

[[noreturn]] inline void shape_error(const std::string& op, const std::vector<int>& a,
                                     const std::vector<int>& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// ---------------------------------------------------------------------------
// Reverse-mode tape. Nodes are appended in execution order, which is a
// topological order, so the backward sweep is a single reverse pass that
// visits each node exactly once. Per-call adjoints are kept separate from
// the persistent .grad buffers so that repeated backward() calls
// accumulate into .grad without re-propagating earlier seeds.
// ---------------------------------------------------------------------------

template <typename T>
class Tape;

template <typename T>
struct Tensor {
  Tape<T>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const std::vector<int>& shape() const;
  const Array<T>& value() const;
  const Array<T>& grad() const;
};

template <typename T>
class Tape {
 public:
  struct Node {
    Array<T> value;
    Array<T> grad;  // persistent accumulator, lazily allocated
    bool requires_grad = false;
    std::function<void(Tape&, int)> back;  // nullptr for leaves/constants
  };

  Tensor<T> leaf(Array<T> v, bool requires_grad) {
    nodes_.push_back(Node{std::move(v), {}, requires_grad, nullptr});
    return {this, static_cast<int>(nodes_.size()) - 1};
  }
  Tensor<T> constant(Array<T> v) { return leaf(std::move(v), false); }

  Tensor<T> make(Array<T> v, bool requires_grad, std::function<void(Tape&, int)> back) {
    nodes_.push_back(Node{std::move(v), {}, requires_grad, requires_grad ? std::move(back) : nullptr});
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  const Array<T>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  Array<T>& mutable_value(int id) { return nodes_[static_cast<size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

  // Persistent gradient of a node (empty Array until backward has run).
  const Array<T>& grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }

  // Per-call adjoint accessors; only valid during backward().
  Array<T>& adj(int id) {
    Array<T>& a = (*adjoints_)[static_cast<size_t>(id)];
    if (a.empty() && numel_of(nodes_[static_cast<size_t>(id)].value.shape) > 0)
      a = Array<T>(nodes_[static_cast<size_t>(id)].value.shape);
    return a;
  }
  bool has_adj(int id) const { return !(*adjoints_)[static_cast<size_t>(id)].empty(); }

  void backward(Tensor<T> loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: tensor belongs to another tape");
    const Node& ln = nodes_[static_cast<size_t>(loss.id)];
    if (ln.value.numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(ln.value.shape));

    std::vector<Array<T>> adjoints(nodes_.size());
    adjoints_ = &adjoints;
    adj(loss.id)[0] = T(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (!has_adj(id)) continue;
      if (n.back) n.back(*this, id);
    }
    for (size_t i = 0; i < nodes_.size(); ++i) {
      if (adjoints[i].empty()) continue;
      Node& n = nodes_[i];
      if (!n.requires_grad) continue;
      if (n.grad.empty()) n.grad = Array<T>(n.value.shape);
      for (int64_t k = 0; k < n.grad.numel(); ++k) n.grad[k] += adjoints[i][k];
    }
    adjoints_ = nullptr;
  }

  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
  std::vector<Array<T>>* adjoints_ = nullptr;
};

template <typename T>
const std::vector<int>& Tensor<T>::shape() const { return tape->value(id).shape; }
template <typename T>
const Array<T>& Tensor<T>::value() const { return tape->value(id); }
template <typename T>
const Array<T>& Tensor<T>::grad() const { return tape->grad(id); }

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<EMat<T>>;
template <typename T>
using MapC = Eigen::Map<const EMat<T>>;

inline void require_same_tape(const void* a, const void* b, const std::string& op) {
  if (a != b) throw std::invalid_argument(op + ": operands live on different tapes");
}

}  // namespace detail

template <typename T>
Tensor<T> add(Tensor<T> a, Tensor<T> b) {
  detail::require_same_tape(a.tape, b.tape, "add");
  Tape<T>& tp = *a.tape;
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  Array<T> out = tp.value(a.id);
  const Array<T>& bv = tp.value(b.id);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  const int pa = a.id, pb = b.id;
  return tp.make(std::move(out), tp.needs_grad(pa) || tp.needs_grad(pb), [pa, pb](Tape<T>& t, int self) {
    const Array<T>& g = t.adj(self);
    Array<T>& ga = t.adj(pa);
    Array<T>& gb = t.adj(pb);
    for (int64_t i = 0; i < g.numel(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  });
}

template <typename T>
Tensor<T> sub(Tensor<T> a, Tensor<T> b) {
  detail::require_same_tape(a.tape, b.tape, "sub");
  Tape<T>& tp = *a.tape;
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  Array<T> out = tp.value(a.id);
  const Array<T>& bv = tp.value(b.id);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  const int pa = a.id, pb = b.id;
  return tp.make(std::move(out), tp.needs_grad(pa) || tp.needs_grad(pb), [pa, pb](Tape<T>& t, int self) {
    const Array<T>& g = t.adj(self);
    Array<T>& ga = t.adj(pa);
    Array<T>& gb = t.adj(pb);
    for (int64_t i = 0; i < g.numel(); ++i) {
      ga[i] += g[i];
      gb[i] -= g[i];
    }
  });
}

template <typename T>
Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
  detail::require_same_tape(a.tape, b.tape, "mul");
  Tape<T>& tp = *a.tape;
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  Array<T> out = tp.value(a.id);
  const Array<T>& bv = tp.value(b.id);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  const int pa = a.id, pb = b.id;
  return tp.make(std::move(out), tp.needs_grad(pa) || tp.needs_grad(pb), [pa, pb](Tape<T>& t, int self) {
    const Array<T>& g = t.adj(self);
    const Array<T>& av = t.value(pa);
    const Array<T>& bv2 = t.value(pb);
    Array<T>& ga = t.adj(pa);
    Array<T>& gb = t.adj(pb);
    for (int64_t i = 0; i < g.numel(); ++i) {
      ga[i] += g[i] * bv2[i];
      gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Tensor<T> scale(Tensor<T> a, double c) {
  Tape<T>& tp = *a.tape;
  Array<T> out = tp.value(a.id);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = static_cast<T>(out[i] * c);
  const int pa = a.id;
  return tp.make(std::move(out), tp.needs_grad(pa), [pa, c](Tape<T>& t, int self) {
    const Array<T>& g = t.adj(self);
    Array<T>& ga = t.adj(pa);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += static_cast<T>(g[i] * c);
  });
}

// x (..., H) + b (H), the one broadcast pattern in the model.
template <typename T>
Tensor<T> add_bias(Tensor<T> x, Tensor<T> b) {
  detail::require_same_tape(x.tape, b.tape, "add_bias");
  Tape<T>& tp = *x.tape;
  const auto& xs = x.shape();
  const auto& bs = b.shape();
  if (bs.size() != 1 || xs.empty() || xs.back() != bs[0]) shape_error("add_bias", xs, bs);
  Array<T> out = tp.value(x.id);
  const Array<T>& bv = tp.value(b.id);
  const int64_t h = bs[0];
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i % h];
  const int px = x.id, pb = b.id;
  return tp.make(std::move(out), tp.needs_grad(px) || tp.needs_grad(pb), [px, pb, h](Tape<T>& t, int self) {
    const Array<T>& g = t.adj(self);
    Array<T>& gx = t.adj(px);
    Array<T>& gb = t.adj(pb);
    for (int64_t i = 0; i < g.numel(); ++i) {
      gx[i] += g[i];
      gb[i % h] += g[i];
    }
  });
}

namespace detail {

struct MatmulDims {
  int64_t batch = 1;
  int64_t m = 0, k = 0, n = 0;
  bool b_shared = false;
};

inline MatmulDims matmul_dims(const std::vector<int>& as, const std::vector<int>& bs) {
  if (as.size() < 2 || bs.size() < 2) shape_error("matmul", as, bs);
  MatmulDims d;
  d.m = as[as.size() - 2];
  d.k = as[as.size() - 1];
  if (bs[bs.size() - 2] != d.k) shape_error("matmul", as, bs);
  d.n = bs[bs.size() - 1];
  for (size_t i = 0; i + 2 < as.size(); ++i) d.batch *= as[i];
  if (bs.size() == 2) {
    d.b_shared = true;
  } else {
    if (std::vector<int>(as.begin(), as.end() - 2) != std::vector<int>(bs.begin(), bs.end() - 2))
      shape_error("matmul", as, bs);
  }
  return d;
}

}  // namespace detail

// (..., m, k) x (..., k, n) -> (..., m, n). The right operand may be a
// plain (k, n) matrix shared across the batch.
template <typename T>
Tensor<T> matmul(Tensor<T> a, Tensor<T> b) {
  detail::require_same_tape(a.tape, b.tape, "matmul");
  Tape<T>& tp = *a.tape;
  const auto& as = a.shape();
  const auto& bs = b.shape();
  const detail::MatmulDims dd = detail::matmul_dims(as, bs);

  std::vector<int> out_shape(as.begin(), as.end() - 2);
  out_shape.push_back(static_cast<int>(dd.m));
  out_shape.push_back(static_cast<int>(dd.n));
  Array<T> out(out_shape);

  const Array<T>& av = tp.value(a.id);
  const Array<T>& bv = tp.value(b.id);
  for (int64_t s = 0; s < dd.batch; ++s) {
    detail::MapC<T> A(av.data.data() + s * dd.m * dd.k, dd.m, dd.k);
    detail::MapC<T> B(bv.data.data() + (dd.b_shared ? 0 : s * dd.k * dd.n), dd.k, dd.n);
    detail::MapM<T> C(out.data.data() + s * dd.m * dd.n, dd.m, dd.n);
    C.noalias() = A * B;
  }

  const int pa = a.id, pb = b.id;
  return tp.make(std::move(out), tp.needs_grad(pa) || tp.needs_grad(pb), [pa, pb, dd](Tape<T>& t, int self) {
    const Array<T>& g = t.adj(self);
    const Array<T>& av2 = t.value(pa);
    const Array<T>& bv2 = t.value(pb);
    Array<T>& ga = t.adj(pa);
    Array<T>& gb = t.adj(pb);
    for (int64_t s = 0; s < dd.batch; ++s) {
      detail::MapC<T> G(g.data.data() + s * dd.m * dd.n, dd.m, dd.n);
      detail::MapC<T> A(av2.data.data() + s * dd.m * dd.k, dd.m, dd.k);
      detail::MapC<T> B(bv2.data.data() + (dd.b_shared ? 0 : s * dd.k * dd.n), dd.k, dd.n);
      detail::MapM<T> GA(ga.data.data() + s * dd.m * dd.k, dd.m, dd.k);
      detail::MapM<T> GB(gb.data.data() + (dd.b_shared ? 0 : s * dd.k * dd.n), dd.k, dd.n);
      GA.noalias() += G * B.transpose();
      GB.noalias() += A.transpose() * G;
    }
  });
}

template <typename T>
Tensor<T> transpose_last2(Tensor<T> a) {
  Tape<T>& tp = *a.tape;
  const auto& as = a.shape();
  if (as.size() < 2) throw std::invalid_argument("transpose_last2: need >= 2 dims, got " + shape_str(as));
  const int64_t m = as[as.size() - 2], n = as[as.size() - 1];
  int64_t batch = 1;
  for (size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];
  std::vector<int> out_shape = as;
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  Array<T> out(out_shape);
  const Array<T>& av = tp.value(a.id);
  for (int64_t s = 0; s < batch; ++s)
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j)
        out[s * m * n + j * m + i] = av[s * m * n + i * n + j];
  const int pa = a.id;
  return tp.make(std::move(out), tp.needs_grad(pa), [pa, batch, m, n](Tape<T>& t, int self) {
    const Array<T>& g = t.adj(self);
    Array<T>& ga = t.adj(pa);
    for (int64_t s = 0; s < batch; ++s)
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
          ga[s * m * n + i * n + j] += g[s * m * n + j * m + i];
  });
}

template <typename T>
Tensor<T> reshape(Tensor<T> a, std::vector<int> new_shape) {
  Tape<T>& tp = *a.tape;
  if (numel_of(new_shape) != numel_of(a.shape())) shape_error("reshape", a.shape(), new_shape);
  Array<T> out(new_shape, tp.value(a.id).data);
  const int pa = a.id;
  return tp.make(std::move(out), tp.needs_grad(pa), [pa](Tape<T>& t, int self) {
    const Array<T>& g = t.adj(self);
    Array<T>& ga = t.adj(pa);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
  });
}

namespace detail {

struct AxisLanes {
  int64_t outer = 1, dim = 0, inner = 1;
};

inline AxisLanes axis_lanes(const std::vector<int>& shape, int axis) {
  const int nd = static_cast<int>(shape.size());
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd)
    throw std::invalid_argument("softmax: axis out of range for shape " + shape_str(shape));
  AxisLanes l;
  for (int i = 0; i < axis; ++i) l.outer *= shape[static_cast<size_t>(i)];
  l.dim = shape[static_cast<size_t>(axis)];
  for (int i = axis + 1; i < nd; ++i) l.inner *= shape[static_cast<size_t>(i)];
  return l;
}

}  // namespace detail

// Numerically stable softmax along `axis` (default: last).
template <typename T>
Tensor<T> softmax(Tensor<T> a, int axis = -1) {
  Tape<T>& tp = *a.tape;
  const detail::AxisLanes l = detail::axis_lanes(a.shape(), axis);
  Array<T> out(a.shape());
  const Array<T>& av = tp.value(a.id);
  for (int64_t o = 0; o < l.outer; ++o) {
    for (int64_t in = 0; in < l.inner; ++in) {
      const int64_t base = o * l.dim * l.inner + in;
      T mx = av[base];
      for (int64_t d = 1; d < l.dim; ++d) mx = std::max(mx, av[base + d * l.inner]);
      T sum = T(0);
      for (int64_t d = 0; d < l.dim; ++d) {
        const T e = std::exp(av[base + d * l.inner] - mx);
        out[base + d * l.inner] = e;
        sum += e;
      }
      for (int64_t d = 0; d < l.dim; ++d) out[base + d * l.inner] /= sum;
    }
  }
  const int pa = a.id;
  return tp.make(std::move(out), tp.needs_grad(pa), [pa, l](Tape<T>& t, int self) {
    const Array<T>& g = t.adj(self);
    const Array<T>& y = t.value(self);
    Array<T>& ga = t.adj(pa);
    for (int64_t o = 0; o < l.outer; ++o) {
      for (int64_t in = 0; in < l.inner; ++in) {
        const int64_t base = o * l.dim * l.inner + in;
        T dot = T(0);
        for (int64_t d = 0; d < l.dim; ++d) dot += g[base + d * l.inner] * y[base + d * l.inner];
        for (int64_t d = 0; d < l.dim; ++d) {
          const int64_t idx = base + d * l.inner;
          ga[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

// Adds a constant {0, kNegInf} mask. The mask either matches the input
// shape or, for (B, heads, L, L) scores, has shape (B, L, L) and is
// broadcast over the head axis. Masks are data, not differentiated.
template <typename T>
Tensor<T> masked_add(Tensor<T> a, const Array<T>& mask) {
  Tape<T>& tp = *a.tape;
  const auto& as = a.shape();
  Array<T> out = tp.value(a.id);
  if (mask.shape == as) {
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += mask[i];
  } else if (as.size() == 4 && mask.shape.size() == 3 && as[0] == mask.shape[0] &&
             as[2] == mask.shape[1] && as[3] == mask.shape[2]) {
    const int64_t B = as[0], H = as[1], inner = static_cast<int64_t>(as[2]) * as[3];
    for (int64_t b = 0; b < B; ++b)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t i = 0; i < inner; ++i)
          out[(b * H + h) * inner + i] += mask[b * inner + i];
  } else {
    shape_error("masked_add", as, mask.shape);
  }
  const int pa = a.id;
  return tp.make(std::move(out), tp.needs_grad(pa), [pa](Tape<T>& t, int self) {
    const Array<T>& g = t.adj(self);
    Array<T>& ga = t.adj(pa);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
  });
}

// Layer normalization over the last axis with learned gain and bias.
template <typename T>
Tensor<T> layer_norm(Tensor<T> x, Tensor<T> gamma, Tensor<T> beta, double eps = 1e-5) {
  detail::require_same_tape(x.tape, gamma.tape, "layer_norm");
  detail::require_same_tape(x.tape, beta.tape, "layer_norm");
  Tape<T>& tp = *x.tape;
  const auto& xs = x.shape();
  const int64_t h = xs.back();
  if (gamma.shape() != std::vector<int>{static_cast<int>(h)}) shape_error("layer_norm", xs, gamma.shape());
  if (beta.shape() != std::vector<int>{static_cast<int>(h)}) shape_error("layer_norm", xs, beta.shape());
  const int64_t rows = numel_of(xs) / h;

  const Array<T>& xv = tp.value(x.id);
  const Array<T>& gv = tp.value(gamma.id);
  const Array<T>& bv = tp.value(beta.id);
  Array<T> out(xs);
  for (int64_t r = 0; r < rows; ++r) {
    const int64_t base = r * h;
    T mean = T(0);
    for (int64_t i = 0; i < h; ++i) mean += xv[base + i];
    mean /= static_cast<T>(h);
    T var = T(0);
    for (int64_t i = 0; i < h; ++i) {
      const T d = xv[base + i] - mean;
      var += d * d;
    }
    var /= static_cast<T>(h);
    const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
    for (int64_t i = 0; i < h; ++i)
      out[base + i] = (xv[base + i] - mean) * inv * gv[i] + bv[i];
  }

  const int px = x.id, pg = gamma.id, pb = beta.id;
  return tp.make(std::move(out), tp.needs_grad(px) || tp.needs_grad(pg) || tp.needs_grad(pb),
                 [px, pg, pb, h, rows, eps](Tape<T>& t, int self) {
    const Array<T>& g = t.adj(self);
    const Array<T>& xv2 = t.value(px);
    const Array<T>& gv2 = t.value(pg);
    Array<T>& gx = t.adj(px);
    Array<T>& gg = t.adj(pg);
    Array<T>& gb = t.adj(pb);
    for (int64_t r = 0; r < rows; ++r) {
      const int64_t base = r * h;
      T mean = T(0);
      for (int64_t i = 0; i < h; ++i) mean += xv2[base + i];
      mean /= static_cast<T>(h);
      T var = T(0);
      for (int64_t i = 0; i < h; ++i) {
        const T d = xv2[base + i] - mean;
        var += d * d;
      }
      var /= static_cast<T>(h);
      const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
      // dxhat accumulated per row; two reductions give the mean terms.
      T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
      for (int64_t i = 0; i < h; ++i) {
        const T xhat = (xv2[base + i] - mean) * inv;
        const T dxhat = g[base + i] * gv2[i];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
        gg[i] += g[base + i] * xhat;
        gb[i] += g[base + i];
      }
      for (int64_t i = 0; i < h; ++i) {
        const T xhat = (xv2[base + i] - mean) * inv;
        const T dxhat = g[base + i] * gv2[i];
        gx[base + i] += inv * (dxhat - sum_dxhat / static_cast<T>(h) -
                               xhat * sum_dxhat_xhat / static_cast<T>(h));
      }
    }
  });
}

// Exact GELU: 0.5 x (1 + erf(x / sqrt(2))).
template <typename T>
Tensor<T> gelu(Tensor<T> x) {
  Tape<T>& tp = *x.tape;
  Array<T> out = tp.value(x.id);
  for (int64_t i = 0; i < out.numel(); ++i) {
    const T v = out[i];
    out[i] = T(0.5) * v * (T(1) + std::erf(v / std::sqrt(T(2))));
  }
  const int px = x.id;
  return tp.make(std::move(out), tp.needs_grad(px), [px](Tape<T>& t, int self) {
    const Array<T>& g = t.adj(self);
    const Array<T>& xv = t.value(px);
    Array<T>& gx = t.adj(px);
    const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * static_cast<T>(M_PI));
    for (int64_t i = 0; i < g.numel(); ++i) {
      const T v = xv[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v / std::sqrt(T(2))));
      const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
      gx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Tensor<T> sigmoid(Tensor<T> x) {
  Tape<T>& tp = *x.tape;
  Array<T> out = tp.value(x.id);
  for (int64_t i = 0; i < out.numel(); ++i) {
    const T v = out[i];
    out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }
  const int px = x.id;
  return tp.make(std::move(out), tp.needs_grad(px), [px](Tape<T>& t, int self) {
    const Array<T>& g = t.adj(self);
    const Array<T>& y = t.value(self);
    Array<T>& gx = t.adj(px);
    for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
Tensor<T> log_elem(Tensor<T> x) {
  Tape<T>& tp = *x.tape;
  Array<T> out = tp.value(x.id);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(out[i]);
  const int px = x.id;
  return tp.make(std::move(out), tp.needs_grad(px), [px](Tape<T>& t, int self) {
    const Array<T>& g = t.adj(self);
    const Array<T>& xv = t.value(px);
    Array<T>& gx = t.adj(px);
    for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i] / xv[i];
  });
}

template <typename T>
Tensor<T> exp_elem(Tensor<T> x) {
  Tape<T>& tp = *x.tape;
  Array<T> out = tp.value(x.id);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
  const int px = x.id;
  return tp.make(std::move(out), tp.needs_grad(px), [px](Tape<T>& t, int self) {
    const Array<T>& g = t.adj(self);
    const Array<T>& y = t.value(self);
    Array<T>& gx = t.adj(px);
    for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * y[i];
  });
}

// Row gather from a (N, H) matrix; also serves as embedding lookup.
template <typename T>
Tensor<T> take_rows(Tensor<T> x, std::vector<int> idx) {
  Tape<T>& tp = *x.tape;
  const auto& xs = x.shape();
  if (xs.size() != 2) throw std::invalid_argument("take_rows: need 2-d input, got " + shape_str(xs));
  const int64_t n = xs[0], h = xs[1];
  for (int i : idx)
    if (i < 0 || i >= n)
      throw std::invalid_argument("take_rows: index " + std::to_string(i) + " out of range [0," +
                                  std::to_string(n) + ")");
  Array<T> out({static_cast<int>(idx.size()), static_cast<int>(h)});
  const Array<T>& xv = tp.value(x.id);
  for (size_t r = 0; r < idx.size(); ++r)
    for (int64_t c = 0; c < h; ++c)
      out[static_cast<int64_t>(r) * h + c] = xv[static_cast<int64_t>(idx[r]) * h + c];
  const int px = x.id;
  return tp.make(std::move(out), tp.needs_grad(px), [px, idx, h](Tape<T>& t, int self) {
    const Array<T>& g = t.adj(self);
    Array<T>& gx = t.adj(px);
    for (size_t r = 0; r < idx.size(); ++r)
      for (int64_t c = 0; c < h; ++c)
        gx[static_cast<int64_t>(idx[r]) * h + c] += g[static_cast<int64_t>(r) * h + c];
  });
}

template <typename T>
Tensor<T> embedding_lookup(Tensor<T> table, const std::vector<int>& ids) {
  return take_rows(table, ids);
}

// Mean cross-entropy over rows whose target is not ignore_id; rows are
// log-softmaxed with the usual max shift. Zero counted rows yield a zero
// loss (the caller can see the count from its own targets).
template <typename T>
Tensor<T> cross_entropy_mean(Tensor<T> logits, std::vector<int> targets, int ignore_id) {
  Tape<T>& tp = *logits.tape;
  const auto& ls = logits.shape();
  if (ls.size() != 2) throw std::invalid_argument("cross_entropy: need 2-d logits, got " + shape_str(ls));
  const int64_t n = ls[0], c = ls[1];
  if (static_cast<int64_t>(targets.size()) != n)
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                std::to_string(n) + " rows");
  const Array<T>& lv = tp.value(logits.id);
  int64_t count = 0;
  T loss = T(0);
  for (int64_t r = 0; r < n; ++r) {
    const int tgt = targets[static_cast<size_t>(r)];
    if (tgt == ignore_id) continue;
    if (tgt < 0 || tgt >= c)
      throw std::invalid_argument("cross_entropy: target " + std::to_string(tgt) + " out of range");
    ++count;
    const int64_t base = r * c;
    T mx = lv[base];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, lv[base + j]);
    T sum = T(0);
    for (int64_t j = 0; j < c; ++j) sum += std::exp(lv[base + j] - mx);
    loss += (mx + std::log(sum)) - lv[base + tgt];
  }
  if (count > 0) loss /= static_cast<T>(count);
  const int pl = logits.id;
  return tp.make(Array<T>::scalar(loss), tp.needs_grad(pl),
                 [pl, targets, ignore_id, n, c, count](Tape<T>& t, int self) {
    if (count == 0) return;
    const T gscale = t.adj(self)[0] / static_cast<T>(count);
    const Array<T>& lv2 = t.value(pl);
    Array<T>& gl = t.adj(pl);
    for (int64_t r = 0; r < n; ++r) {
      const int tgt = targets[static_cast<size_t>(r)];
      if (tgt == ignore_id) continue;
      const int64_t base = r * c;
      T mx = lv2[base];
      for (int64_t j = 1; j < c; ++j) mx = std::max(mx, lv2[base + j]);
      T sum = T(0);
      for (int64_t j = 0; j < c; ++j) sum += std::exp(lv2[base + j] - mx);
      for (int64_t j = 0; j < c; ++j) {
        const T p = std::exp(lv2[base + j] - mx) / sum;
        gl[base + j] += gscale * (p - (j == tgt ? T(1) : T(0)));
      }
    }
  });
}

// Cosine similarity of two vectors; 1e-12 is added to each norm so
// degenerate zero vectors stay finite.
template <typename T>
Tensor<T> cosine_similarity(Tensor<T> u, Tensor<T> v) {
  detail::require_same_tape(u.tape, v.tape, "cosine_similarity");
  Tape<T>& tp = *u.tape;
  const auto& us = u.shape();
  if (us.size() != 1 || v.shape() != us) shape_error("cosine_similarity", us, v.shape());
  const int64_t h = us[0];
  const Array<T>& uv = tp.value(u.id);
  const Array<T>& vv = tp.value(v.id);
  T dot = T(0), nu2 = T(0), nv2 = T(0);
  for (int64_t i = 0; i < h; ++i) {
    dot += uv[i] * vv[i];
    nu2 += uv[i] * uv[i];
    nv2 += vv[i] * vv[i];
  }
  const T eps = static_cast<T>(1e-12);
  const T nu = std::sqrt(nu2) + eps;
  const T nv = std::sqrt(nv2) + eps;
  const T sim = dot / (nu * nv);
  const int pu = u.id, pv = v.id;
  return tp.make(Array<T>::scalar(sim), tp.needs_grad(pu) || tp.needs_grad(pv),
                 [pu, pv, h, eps](Tape<T>& t, int self) {
    const T g = t.adj(self)[0];
    const Array<T>& uv2 = t.value(pu);
    const Array<T>& vv2 = t.value(pv);
    Array<T>& gu = t.adj(pu);
    Array<T>& gv = t.adj(pv);
    T dot = T(0), nu2 = T(0), nv2 = T(0);
    for (int64_t i = 0; i < h; ++i) {
      dot += uv2[i] * vv2[i];
      nu2 += uv2[i] * uv2[i];
      nv2 += vv2[i] * vv2[i];
    }
    const T rnu = std::sqrt(nu2);
    const T rnv = std::sqrt(nv2);
    const T nu = rnu + eps;
    const T nv = rnv + eps;
    const T sim = dot / (nu * nv);
    for (int64_t i = 0; i < h; ++i) {
      const T du_norm = rnu > T(0) ? uv2[i] / rnu : T(0);
      const T dv_norm = rnv > T(0) ? vv2[i] / rnv : T(0);
      gu[i] += g * (vv2[i] / (nu * nv) - sim * du_norm / nu);
      gv[i] += g * (uv2[i] / (nu * nv) - sim * dv_norm / nv);
    }
  });
}

// Concatenates scalars / 1-d tensors into one 1-d tensor.
template <typename T>
Tensor<T> concat1d(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat1d: no inputs");
  Tape<T>& tp = *parts[0].tape;
  int64_t total = 0;
  bool req = false;
  std::vector<int> pids;
  std::vector<int64_t> sizes;
  for (const auto& p : parts) {
    detail::require_same_tape(parts[0].tape, p.tape, "concat1d");
    if (p.shape().size() != 1)
      throw std::invalid_argument("concat1d: need 1-d parts, got " + shape_str(p.shape()));
    total += p.value().numel();
    sizes.push_back(p.value().numel());
    pids.push_back(p.id);
    req = req || tp.needs_grad(p.id);
  }
  Array<T> out({static_cast<int>(total)});
  int64_t off = 0;
  for (const auto& p : parts) {
    const Array<T>& pv = tp.value(p.id);
    for (int64_t i = 0; i < pv.numel(); ++i) out[off + i] = pv[i];
    off += pv.numel();
  }
  return tp.make(std::move(out), req, [pids, sizes](Tape<T>& t, int self) {
    const Array<T>& g = t.adj(self);
    int64_t off2 = 0;
    for (size_t k = 0; k < pids.size(); ++k) {
      Array<T>& gp = t.adj(pids[k]);
      for (int64_t i = 0; i < sizes[k]; ++i) gp[i] += g[off2 + i];
      off2 += sizes[k];
    }
  });
}

// Drops the first axis: x[(i), ...]. A 1-d input yields a scalar.
template <typename T>
Tensor<T> slice_axis0(Tensor<T> x, int i) {
  Tape<T>& tp = *x.tape;
  const auto& xs = x.shape();
  if (xs.empty() || i < 0 || i >= xs[0])
    throw std::invalid_argument("slice_axis0: index " + std::to_string(i) + " out of range for " +
                                shape_str(xs));
  std::vector<int> out_shape(xs.begin() + 1, xs.end());
  if (out_shape.empty()) out_shape = {1};  // 1-d input slices to a scalar
  const int64_t stride = numel_of(xs) / xs[0];
  const int64_t len = stride;
  Array<T> out(out_shape);
  const Array<T>& xv = tp.value(x.id);
  for (int64_t k = 0; k < len; ++k) out[k] = xv[static_cast<int64_t>(i) * stride + k];
  const int px = x.id;
  return tp.make(std::move(out), tp.needs_grad(px), [px, i, stride, len](Tape<T>& t, int self) {
    const Array<T>& g = t.adj(self);
    Array<T>& gx = t.adj(px);
    for (int64_t k = 0; k < len; ++k) gx[static_cast<int64_t>(i) * stride + k] += g[k];
  });
}

template <typename T>
Tensor<T> slice1d(Tensor<T> x, int lo, int hi) {
  Tape<T>& tp = *x.tape;
  const auto& xs = x.shape();
  if (xs.size() != 1 || lo < 0 || hi > xs[0] || lo >= hi)
    throw std::invalid_argument("slice1d: bad range [" + std::to_string(lo) + "," +
                                std::to_string(hi) + ") for " + shape_str(xs));
  Array<T> out({hi - lo});
  const Array<T>& xv = tp.value(x.id);
  for (int k = lo; k < hi; ++k) out[k - lo] = xv[k];
  const int px = x.id;
  return tp.make(std::move(out), tp.needs_grad(px), [px, lo, hi](Tape<T>& t, int self) {
    const Array<T>& g = t.adj(self);
    Array<T>& gx = t.adj(px);
    for (int k = lo; k < hi; ++k) gx[k] += g[k - lo];
  });
}

// v / sum(v) for a 1-d vector with positive sum.
template <typename T>
Tensor<T> normalize1d(Tensor<T> x) {
  Tape<T>& tp = *x.tape;
  const auto& xs = x.shape();
  if (xs.size() != 1) throw std::invalid_argument("normalize1d: need 1-d input, got " + shape_str(xs));
  const Array<T>& xv = tp.value(x.id);
  T sum = T(0);
  for (int64_t i = 0; i < xv.numel(); ++i) sum += xv[i];
  Array<T> out = xv;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] /= sum;
  const int px = x.id;
  return tp.make(std::move(out), tp.needs_grad(px), [px, sum](Tape<T>& t, int self) {
    const Array<T>& g = t.adj(self);
    const Array<T>& y = t.value(self);
    Array<T>& gx = t.adj(px);
    T dot = T(0);
    for (int64_t i = 0; i < g.numel(); ++i) dot += g[i] * y[i];
    for (int64_t i = 0; i < g.numel(); ++i) gx[i] += (g[i] - dot) / sum;
  });
}

template <typename T>
Tensor<T> logsumexp1d(Tensor<T> x) {
  Tape<T>& tp = *x.tape;
  const auto& xs = x.shape();
  if (xs.size() != 1 || xs[0] < 1)
    throw std::invalid_argument("logsumexp1d: need non-empty 1-d input, got " + shape_str(xs));
  const Array<T>& xv = tp.value(x.id);
  T mx = xv[0];
  for (int64_t i = 1; i < xv.numel(); ++i) mx = std::max(mx, xv[i]);
  T sum = T(0);
  for (int64_t i = 0; i < xv.numel(); ++i) sum += std::exp(xv[i] - mx);
  const T lse = mx + std::log(sum);
  const int px = x.id;
  return tp.make(Array<T>::scalar(lse), tp.needs_grad(px), [px](Tape<T>& t, int self) {
    const T g = t.adj(self)[0];
    const T lse2 = t.value(self)[0];
    const Array<T>& xv2 = t.value(px);
    Array<T>& gx = t.adj(px);
    for (int64_t i = 0; i < xv2.numel(); ++i) gx[i] += g * std::exp(xv2[i] - lse2);
  });
}

// Jensen-Shannon divergence of two distributions (natural log), written
// as 1/2 sum p ln p + 1/2 sum q ln q - sum m ln m with m = (p+q)/2 and
// the 0 ln 0 = 0 convention.
template <typename T>
T jsd_value(const T* p, const T* q, int64_t n) {
  auto xlogx = [](T v) { return v > T(0) ? v * std::log(v) : T(0); };
  T acc = T(0);
  for (int64_t i = 0; i < n; ++i) {
    const T m = (p[i] + q[i]) / T(2);
    acc += T(0.5) * xlogx(p[i]) + T(0.5) * xlogx(q[i]) - xlogx(m);
  }
  return acc;
}

template <typename T>
Tensor<T> jsd1d(Tensor<T> p, Tensor<T> q) {
  detail::require_same_tape(p.tape, q.tape, "jsd1d");
  Tape<T>& tp = *p.tape;
  if (p.shape() != q.shape() || p.shape().size() != 1) shape_error("jsd1d", p.shape(), q.shape());
  const int64_t n = p.value().numel();
  const T v = jsd_value(tp.value(p.id).data.data(), tp.value(q.id).data.data(), n);
  const int pp = p.id, pq = q.id;
  return tp.make(Array<T>::scalar(v), tp.needs_grad(pp) || tp.needs_grad(pq),
                 [pp, pq, n](Tape<T>& t, int self) {
    const T g = t.adj(self)[0];
    const Array<T>& pv = t.value(pp);
    const Array<T>& qv = t.value(pq);
    Array<T>& gp = t.adj(pp);
    Array<T>& gq = t.adj(pq);
    const T tiny = std::numeric_limits<T>::min();
    for (int64_t i = 0; i < n; ++i) {
      const T m = (pv[i] + qv[i]) / T(2);
      if (m <= T(0)) continue;
      gp[i] += g * T(0.5) * std::log(std::max(pv[i], tiny) / m);
      gq[i] += g * T(0.5) * std::log(std::max(qv[i], tiny) / m);
    }
  });
}

template <typename T>
Tensor<T> reduce_sum(Tensor<T> x) {
  Tape<T>& tp = *x.tape;
  const Array<T>& xv = tp.value(x.id);
  T sum = T(0);
  for (int64_t i = 0; i < xv.numel(); ++i) sum += xv[i];
  const int px = x.id;
  return tp.make(Array<T>::scalar(sum), tp.needs_grad(px), [px](Tape<T>& t, int self) {
    const T g = t.adj(self)[0];
    Array<T>& gx = t.adj(px);
    for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
  });
}

template <typename T>
Tensor<T> reduce_mean(Tensor<T> x) {
  Tape<T>& tp = *x.tape;
  const int64_t n = tp.value(x.id).numel();
  return scale(reduce_sum(x), 1.0 / static_cast<double>(n));
}

// (B, L, H) -> (B, heads, L, H/heads) head split; merge_heads inverts it.
template <typename T>
Tensor<T> split_heads(Tensor<T> x, int heads) {
  Tape<T>& tp = *x.tape;
  const auto& xs = x.shape();
  if (xs.size() != 3 || xs[2] % heads != 0)
    throw std::invalid_argument("split_heads: cannot split " + shape_str(xs) + " into " +
                                std::to_string(heads) + " heads");
  const int64_t B = xs[0], L = xs[1], H = xs[2], dh = H / heads;
  Array<T> out({static_cast<int>(B), heads, static_cast<int>(L), static_cast<int>(dh)});
  const Array<T>& xv = tp.value(x.id);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t l = 0; l < L; ++l)
      for (int64_t hh = 0; hh < heads; ++hh)
        for (int64_t d = 0; d < dh; ++d)
          out[((b * heads + hh) * L + l) * dh + d] = xv[(b * L + l) * H + hh * dh + d];
  const int px = x.id;
  return tp.make(std::move(out), tp.needs_grad(px), [px, B, L, H, dh, heads](Tape<T>& t, int self) {
    const Array<T>& g = t.adj(self);
    Array<T>& gx = t.adj(px);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t l = 0; l < L; ++l)
        for (int64_t hh = 0; hh < heads; ++hh)
          for (int64_t d = 0; d < dh; ++d)
            gx[(b * L + l) * H + hh * dh + d] += g[((b * heads + hh) * L + l) * dh + d];
  });
}

template <typename T>
Tensor<T> merge_heads(Tensor<T> x) {
  Tape<T>& tp = *x.tape;
  const auto& xs = x.shape();
  if (xs.size() != 4) throw std::invalid_argument("merge_heads: need 4-d input, got " + shape_str(xs));
  const int64_t B = xs[0], heads = xs[1], L = xs[2], dh = xs[3], H = heads * dh;
  Array<T> out({static_cast<int>(B), static_cast<int>(L), static_cast<int>(H)});
  const Array<T>& xv = tp.value(x.id);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t hh = 0; hh < heads; ++hh)
      for (int64_t l = 0; l < L; ++l)
        for (int64_t d = 0; d < dh; ++d)
          out[(b * L + l) * H + hh * dh + d] = xv[((b * heads + hh) * L + l) * dh + d];
  const int px = x.id;
  return tp.make(std::move(out), tp.needs_grad(px), [px, B, L, H, dh, heads](Tape<T>& t, int self) {
    const Array<T>& g = t.adj(self);
    Array<T>& gx = t.adj(px);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t hh = 0; hh < heads; ++hh)
        for (int64_t l = 0; l < L; ++l)
          for (int64_t d = 0; d < dh; ++d)
            gx[((b * heads + hh) * L + l) * dh + d] += g[(b * L + l) * H + hh * dh + d];
  });
}

// Per-position convex blend of two attention stacks:
// out[b,h,i,j] = g[b,i] * a[b,h,i,j] + (1 - g[b,i]) * b[b,h,i,j].
template <typename T>
Tensor<T> gate_mix(Tensor<T> a_global, Tensor<T> a_local, Tensor<T> gate) {
  detail::require_same_tape(a_global.tape, a_local.tape, "gate_mix");
  detail::require_same_tape(a_global.tape, gate.tape, "gate_mix");
  Tape<T>& tp = *a_global.tape;
  const auto& as = a_global.shape();
  if (as.size() != 4 || a_local.shape() != as) shape_error("gate_mix", as, a_local.shape());
  if (gate.shape() != std::vector<int>{as[0], as[2]}) shape_error("gate_mix", as, gate.shape());
  const int64_t B = as[0], H = as[1], L = as[2], K = as[3];
  const Array<T>& ag = tp.value(a_global.id);
  const Array<T>& al = tp.value(a_local.id);
  const Array<T>& gv = tp.value(gate.id);
  Array<T> out(as);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t i = 0; i < L; ++i) {
        const T g = gv[b * L + i];
        const int64_t base = ((b * H + h) * L + i) * K;
        for (int64_t j = 0; j < K; ++j)
          out[base + j] = g * ag[base + j] + (T(1) - g) * al[base + j];
      }
  const int pg = a_global.id, pl = a_local.id, pgate = gate.id;
  return tp.make(std::move(out),
                 tp.needs_grad(pg) || tp.needs_grad(pl) || tp.needs_grad(pgate),
                 [pg, pl, pgate, B, H, L, K](Tape<T>& t, int self) {
    const Array<T>& gout = t.adj(self);
    const Array<T>& ag2 = t.value(pg);
    const Array<T>& al2 = t.value(pl);
    const Array<T>& gv2 = t.value(pgate);
    Array<T>& gag = t.adj(pg);
    Array<T>& gal = t.adj(pl);
    Array<T>& ggate = t.adj(pgate);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t i = 0; i < L; ++i) {
          const T g = gv2[b * L + i];
          const int64_t base = ((b * H + h) * L + i) * K;
          T acc = T(0);
          for (int64_t j = 0; j < K; ++j) {
            gag[base + j] += gout[base + j] * g;
            gal[base + j] += gout[base + j] * (T(1) - g);
            acc += gout[base + j] * (ag2[base + j] - al2[base + j]);
          }
          ggate[b * L + i] += acc;
        }
  });
}

// Elementwise multiply by a constant mask (inverted-dropout style masks
// hold 0 or 1/keep_prob).
template <typename T>
Tensor<T> mask_mul(Tensor<T> x, const Array<T>& mask) {
  Tape<T>& tp = *x.tape;
  if (mask.shape != x.shape()) shape_error("mask_mul", x.shape(), mask.shape);
  Array<T> out = tp.value(x.id);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
  const int px = x.id;
  auto mask_copy = std::make_shared<Array<T>>(mask);
  return tp.make(std::move(out), tp.needs_grad(px), [px, mask_copy](Tape<T>& t, int self) {
    const Array<T>& g = t.adj(self);
    Array<T>& gx = t.adj(px);
    for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * (*mask_copy)[i];
  });
}

}  // namespace treelm
