#pragma once

// Reverse-mode automatic differentiation over dense row-major f64 tensors.
//
// Graphs are define-by-run: every op takes the Tape it records onto, and a
// fresh Tape is built per training step. A Tensor carries a node id only
// when gradients flow into it; ops whose inputs are all untracked produce
// untracked results and record nothing.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fewrel/rng.hpp"

namespace fewrel {

using Shape = std::vector<std::size_t>;
using NodeId = std::size_t;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

struct Tensor {
  Shape shape;
  std::vector<double> data;
  std::optional<NodeId> node;

  Tensor() : shape{}, data(1, 0.0) {}
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_size(shape) != data.size())
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
  }

  static Tensor zeros(Shape s) {
    const std::size_t n = shape_size(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }
  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(Shape{n}, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor(Shape{rows, cols}, std::move(v));
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  bool tracked() const { return node.has_value(); }

  double item() const {
    if (data.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape));
    return data[0];
  }
  double at(std::size_t i) const { return data.at(i); }
  double at(std::size_t r, std::size_t c) const { return data.at(r * shape.at(1) + c); }

  /// Data-only copy with no tape node; safe to share across threads.
  Tensor detached() const { return Tensor(shape, data); }
};

class Tape {
 public:
  using Backward = std::function<void(std::span<const double> grad_out, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `t` as a leaf and returns the tracked copy.
  Tensor watch(Tensor t) {
    t.node = push(t.size(), {}, nullptr, "leaf");
    return t;
  }

  NodeId record(std::size_t size, std::vector<NodeId> inputs, Backward fn, std::string_view op) {
    for (NodeId in : inputs)
      if (in >= nodes_.size()) throw std::logic_error("tape input precedes its own node");
    return push(size, std::move(inputs), std::move(fn), op);
  }

  std::size_t size() const { return nodes_.size(); }
  std::string_view op_name(NodeId id) const { return nodes_.at(id).op; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }

  void backward(const Tensor& loss) {
    if (loss.size() != 1) throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape));
    if (!loss.node) throw std::invalid_argument("backward: loss is not on the tape");
    reset_grads();
    grads_[*loss.node].assign(1, 1.0);
    for (NodeId id = *loss.node + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (grads_[id].empty() || !n.backward) continue;
      n.backward(grads_[id], *this);
    }
  }

  void reset_grads() {
    grads_.assign(nodes_.size(), {});
  }

  /// Gradient of a node; zeros if unreachable from the loss.
  std::vector<double> grad(NodeId id) const {
    if (id < grads_.size() && !grads_[id].empty()) return grads_[id];
    return std::vector<double>(nodes_.at(id).size, 0.0);
  }
  std::vector<double> grad(const Tensor& t) const {
    if (!t.node) return std::vector<double>(t.size(), 0.0);
    return grad(*t.node);
  }
  bool has_grad(NodeId id) const { return id < grads_.size() && !grads_[id].empty(); }

  void accumulate(NodeId id, std::span<const double> g) {
    auto& buf = buffer(id);
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
  }
  void accumulate_at(NodeId id, std::size_t i, double v) { buffer(id)[i] += v; }

  /// Branch decisions (argmin/argmax picks, relu masks) hashed in call order.
  /// Two evaluations with equal signatures took the same smooth piece.
  void note_branch(std::uint64_t v) {
    branch_signature_ = detail::splitmix64(branch_signature_ ^ v);
  }
  std::uint64_t branch_signature() const { return branch_signature_; }

 private:
  struct Node {
    std::string_view op;
    std::vector<NodeId> inputs;
    std::size_t size;
    Backward backward;
  };

  NodeId push(std::size_t size, std::vector<NodeId> inputs, Backward fn, std::string_view op) {
    nodes_.push_back(Node{op, std::move(inputs), size, std::move(fn)});
    return nodes_.size() - 1;
  }

  std::vector<double>& buffer(NodeId id) {
    if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
    auto& buf = grads_[id];
    if (buf.empty()) buf.assign(nodes_[id].size, 0.0);
    return buf;
  }

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::uint64_t branch_signature_ = 0;
};

namespace ad {

namespace detail {

inline void check_finite(const std::vector<double>& v, std::string_view op) {
  for (double x : v)
    if (!std::isfinite(x)) throw NonFiniteError(std::string(op) + ": produced a non-finite value");
}

inline std::vector<NodeId> tracked_inputs(std::initializer_list<const Tensor*> ts) {
  std::vector<NodeId> ids;
  for (const Tensor* t : ts)
    if (t->node) ids.push_back(*t->node);
  return ids;
}

// Builds the op result and records `fn` only when some input is tracked.
inline Tensor finish(Tape& tape, Shape shape, std::vector<double> data,
                     std::initializer_list<const Tensor*> inputs, Tape::Backward fn,
                     std::string_view op) {
  check_finite(data, op);
  Tensor out(std::move(shape), std::move(data));
  auto ids = tracked_inputs(inputs);
  if (!ids.empty()) out.node = tape.record(out.size(), std::move(ids), std::move(fn), op);
  return out;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape != b.shape)
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  std::size_t outer, extent, inner;
  Shape reduced;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis, std::string_view op) {
  if (axis >= s.size())
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  AxisSplit out{1, s[axis], 1, {}};
  for (std::size_t i = 0; i < axis; ++i) out.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) out.inner *= s[i];
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out.reduced.push_back(s[i]);
  return out;
}

}  // namespace detail

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: cannot multiply " + shape_str(a.shape) + " by " + shape_str(b.shape));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a.data[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b.data[p * n + j];
    }
  auto an = a.node, bn = b.node;
  std::vector<double> ad = bn ? a.data : std::vector<double>{};
  std::vector<double> bd = an ? b.data : std::vector<double>{};
  return detail::finish(
      tape, {m, n}, std::move(out), {&a, &b},
      [an, bn, ad = std::move(ad), bd = std::move(bd), m, k, n](std::span<const double> g, Tape& t) {
        if (an) {
          std::vector<double> ga(m * k, 0.0);  // g * b^T
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0.0;
              for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bd[p * n + j];
              ga[i * k + p] = s;
            }
          t.accumulate(*an, ga);
        }
        if (bn) {
          std::vector<double> gb(k * n, 0.0);  // a^T * g
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double av = ad[i * k + p];
              for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
            }
          t.accumulate(*bn, gb);
        }
      },
      "matmul");
}

/// Same-padded 1-D convolution over rows of x (L x d). kernels is
/// F x (window*d) with the window flattened row-major: kernel[f][o*d + c]
/// multiplies x[t + o - (window-1)/2][c].
inline Tensor conv1d(Tape& tape, const Tensor& x, const Tensor& kernels, const Tensor& bias,
                     std::size_t window) {
  if (x.rank() != 2) throw ShapeError("conv1d: input must be L x d, got " + shape_str(x.shape));
  const std::size_t len = x.dim(0), d = x.dim(1);
  if (window % 2 == 0) throw ShapeError("conv1d: window must be odd");
  if (window > 2 * len + 1) throw ShapeError("conv1d: window larger than 2L+1");
  if (kernels.rank() != 2 || kernels.dim(1) != window * d)
    throw ShapeError("conv1d: kernels " + shape_str(kernels.shape) + " incompatible with window " +
                     std::to_string(window) + " and width " + std::to_string(d));
  const std::size_t filters = kernels.dim(0);
  if (bias.shape != Shape{filters}) throw ShapeError("conv1d: bias must have shape [F]");
  const auto half = static_cast<std::ptrdiff_t>((window - 1) / 2);
  const auto slen = static_cast<std::ptrdiff_t>(len);

  std::vector<double> out(len * filters);
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t f = 0; f < filters; ++f) {
      double s = bias.data[f];
      const double* kf = &kernels.data[f * window * d];
      for (std::size_t o = 0; o < window; ++o) {
        const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(t + o) - half;
        if (row < 0 || row >= slen) continue;
        const double* xr = &x.data[static_cast<std::size_t>(row) * d];
        for (std::size_t c = 0; c < d; ++c) s += kf[o * d + c] * xr[c];
      }
      out[t * filters + f] = s;
    }

  auto xn = x.node, kn = kernels.node, bn = bias.node;
  std::vector<double> xd = kn ? x.data : std::vector<double>{};
  std::vector<double> kd = xn ? kernels.data : std::vector<double>{};
  return detail::finish(
      tape, {len, filters}, std::move(out), {&x, &kernels, &bias},
      [=, xd = std::move(xd), kd = std::move(kd)](std::span<const double> g, Tape& tp) {
        std::vector<double> gx(xn ? len * d : 0, 0.0);
        std::vector<double> gk(kn ? filters * window * d : 0, 0.0);
        std::vector<double> gb(bn ? filters : 0, 0.0);
        for (std::size_t t = 0; t < len; ++t)
          for (std::size_t f = 0; f < filters; ++f) {
            const double gv = g[t * filters + f];
            if (bn) gb[f] += gv;
            if (gv == 0.0) continue;
            for (std::size_t o = 0; o < window; ++o) {
              const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(t + o) - half;
              if (row < 0 || row >= slen) continue;
              const auto r = static_cast<std::size_t>(row);
              for (std::size_t c = 0; c < d; ++c) {
                if (xn) gx[r * d + c] += gv * kd[f * window * d + o * d + c];
                if (kn) gk[f * window * d + o * d + c] += gv * xd[r * d + c];
              }
            }
          }
        if (xn) tp.accumulate(*xn, gx);
        if (kn) tp.accumulate(*kn, gk);
        if (bn) tp.accumulate(*bn, gb);
      },
      "conv1d");
}

/// Columnwise maximum of an L x F matrix; gradient goes to the lowest row
/// achieving each column's max.
inline Tensor max_over_time(Tape& tape, const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("max_over_time: expected L x F, got " + shape_str(x.shape));
  const std::size_t len = x.dim(0), filters = x.dim(1);
  if (len == 0) throw ShapeError("max_over_time: empty input");
  std::vector<double> out(filters);
  std::vector<std::size_t> arg(filters, 0);
  std::uint64_t sig = 0;
  for (std::size_t f = 0; f < filters; ++f) {
    double best = x.data[f];
    for (std::size_t t = 1; t < len; ++t)
      if (x.data[t * filters + f] > best) {
        best = x.data[t * filters + f];
        arg[f] = t;
      }
    out[f] = best;
    sig = fewrel::detail::splitmix64(sig ^ arg[f]);
  }
  tape.note_branch(sig);
  auto xn = x.node;
  return detail::finish(
      tape, {filters}, std::move(out), {&x},
      [xn, arg, filters](std::span<const double> g, Tape& t) {
        for (std::size_t f = 0; f < filters; ++f) t.accumulate_at(*xn, arg[f] * filters + f, g[f]);
      },
      "max_over_time");
}

inline Tensor embedding_lookup(Tape& tape, const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be V x d");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw std::out_of_range("embedding_lookup: id " + std::to_string(ids[i]) +
                              " outside [0, " + std::to_string(vocab) + ")");
    std::copy_n(&table.data[static_cast<std::size_t>(ids[i]) * d], d, &out[i * d]);
  }
  auto tn = table.node;
  std::vector<int> idv(ids.begin(), ids.end());
  return detail::finish(
      tape, {ids.size(), d}, std::move(out), {&table},
      [tn, idv = std::move(idv), d](std::span<const double> g, Tape& t) {
        for (std::size_t i = 0; i < idv.size(); ++i)
          for (std::size_t c = 0; c < d; ++c)
            t.accumulate_at(*tn, static_cast<std::size_t>(idv[i]) * d + c, g[i * d + c]);
      },
      "embedding_lookup");
}

inline Tensor relu(Tape& tape, const Tensor& x) {
  std::vector<double> out(x.size());
  std::vector<bool> mask(x.size());
  std::uint64_t sig = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = x.data[i] > 0.0;
    out[i] = mask[i] ? x.data[i] : 0.0;
    sig = fewrel::detail::splitmix64(sig ^ (mask[i] ? i + 1 : 0));
  }
  tape.note_branch(sig);
  auto xn = x.node;
  return detail::finish(
      tape, x.shape, std::move(out), {&x},
      [xn, mask = std::move(mask)](std::span<const double> g, Tape& t) {
        std::vector<double> gx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = mask[i] ? g[i] : 0.0;
        t.accumulate(*xn, gx);
      },
      "relu");
}

inline Tensor tanh(Tape& tape, const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x.data[i]);
  auto xn = x.node;
  std::vector<double> y = x.node ? out : std::vector<double>{};
  return detail::finish(
      tape, x.shape, std::move(out), {&x},
      [xn, y = std::move(y)](std::span<const double> g, Tape& t) {
        std::vector<double> gx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * (1.0 - y[i] * y[i]);
        t.accumulate(*xn, gx);
      },
      "tanh");
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a.data[i] + b.data[i];
  auto an = a.node, bn = b.node;
  return detail::finish(
      tape, a.shape, std::move(out), {&a, &b},
      [an, bn](std::span<const double> g, Tape& t) {
        if (an) t.accumulate(*an, g);
        if (bn) t.accumulate(*bn, g);
      },
      "add");
}

inline Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a.data[i] - b.data[i];
  auto an = a.node, bn = b.node;
  return detail::finish(
      tape, a.shape, std::move(out), {&a, &b},
      [an, bn](std::span<const double> g, Tape& t) {
        if (an) t.accumulate(*an, g);
        if (bn) {
          std::vector<double> neg(g.begin(), g.end());
          for (double& v : neg) v = -v;
          t.accumulate(*bn, neg);
        }
      },
      "sub");
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a.data[i] * b.data[i];
  auto an = a.node, bn = b.node;
  std::vector<double> ad = bn ? a.data : std::vector<double>{};
  std::vector<double> bd = an ? b.data : std::vector<double>{};
  return detail::finish(
      tape, a.shape, std::move(out), {&a, &b},
      [an, bn, ad = std::move(ad), bd = std::move(bd)](std::span<const double> g, Tape& t) {
        std::vector<double> tmp(g.size());
        if (an) {
          for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = g[i] * bd[i];
          t.accumulate(*an, tmp);
        }
        if (bn) {
          for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = g[i] * ad[i];
          t.accumulate(*bn, tmp);
        }
      },
      "mul");
}

inline Tensor scale(Tape& tape, const Tensor& x, double factor) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = factor * x.data[i];
  auto xn = x.node;
  return detail::finish(
      tape, x.shape, std::move(out), {&x},
      [xn, factor](std::span<const double> g, Tape& t) {
        std::vector<double> gx(g.begin(), g.end());
        for (double& v : gx) v *= factor;
        t.accumulate(*xn, gx);
      },
      "scale");
}

/// Sum of all elements, as a scalar.
inline Tensor sum(Tape& tape, const Tensor& x) {
  double s = 0.0;
  for (double v : x.data) s += v;
  auto xn = x.node;
  const std::size_t n = x.size();
  return detail::finish(
      tape, {}, {s}, {&x},
      [xn, n](std::span<const double> g, Tape& t) {
        t.accumulate(*xn, std::vector<double>(n, g[0]));
      },
      "sum");
}

inline Tensor mean_axis(Tape& tape, const Tensor& x, std::size_t axis) {
  const auto sp = detail::split_axis(x.shape, axis, "mean_axis");
  if (sp.extent == 0) throw ShapeError("mean_axis: empty axis");
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  const double inv = 1.0 / static_cast<double>(sp.extent);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < sp.extent; ++k) s += x.data[(o * sp.extent + k) * sp.inner + i];
      out[o * sp.inner + i] = s * inv;
    }
  auto xn = x.node;
  const std::size_t n = x.size();
  return detail::finish(
      tape, sp.reduced, std::move(out), {&x},
      [xn, sp, inv, n](std::span<const double> g, Tape& t) {
        std::vector<double> gx(n);
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t k = 0; k < sp.extent; ++k)
            for (std::size_t i = 0; i < sp.inner; ++i)
              gx[(o * sp.extent + k) * sp.inner + i] = g[o * sp.inner + i] * inv;
        t.accumulate(*xn, gx);
      },
      "mean_axis");
}

struct MinResult {
  Tensor values;
  std::vector<std::size_t> argmin;
};

/// Minimum along `axis`; ties resolve to the lowest index, which alone
/// receives the gradient.
inline MinResult min_axis(Tape& tape, const Tensor& x, std::size_t axis) {
  const auto sp = detail::split_axis(x.shape, axis, "min_axis");
  if (sp.extent == 0) throw ShapeError("min_axis: empty axis");
  std::vector<double> out(sp.outer * sp.inner);
  std::vector<std::size_t> arg(sp.outer * sp.inner, 0);
  std::uint64_t sig = 0x5EED;
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = 0;
      double bv = x.data[o * sp.extent * sp.inner + i];
      for (std::size_t k = 1; k < sp.extent; ++k) {
        const double v = x.data[(o * sp.extent + k) * sp.inner + i];
        if (v < bv) {
          bv = v;
          best = k;
        }
      }
      out[o * sp.inner + i] = bv;
      arg[o * sp.inner + i] = best;
      sig = fewrel::detail::splitmix64(sig ^ best);
    }
  tape.note_branch(sig);
  auto xn = x.node;
  Tensor values = detail::finish(
      tape, sp.reduced, std::move(out), {&x},
      [xn, sp, arg](std::span<const double> g, Tape& t) {
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t k = arg[o * sp.inner + i];
            t.accumulate_at(*xn, (o * sp.extent + k) * sp.inner + i, g[o * sp.inner + i]);
          }
      },
      "min_axis");
  return {std::move(values), std::move(arg)};
}

/// Slice [index] along `axis`, dropping that axis.
inline Tensor select(Tape& tape, const Tensor& x, std::size_t axis, std::size_t index) {
  const auto sp = detail::split_axis(x.shape, axis, "select");
  if (index >= sp.extent)
    throw ShapeError("select: index " + std::to_string(index) + " out of range for axis of extent " +
                     std::to_string(sp.extent));
  std::vector<double> out(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i)
      out[o * sp.inner + i] = x.data[(o * sp.extent + index) * sp.inner + i];
  auto xn = x.node;
  return detail::finish(
      tape, sp.reduced, std::move(out), {&x},
      [xn, sp, index](std::span<const double> g, Tape& t) {
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t i = 0; i < sp.inner; ++i)
            t.accumulate_at(*xn, (o * sp.extent + index) * sp.inner + i, g[o * sp.inner + i]);
      },
      "select");
}

/// Rows [begin, end) of a matrix.
inline Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() != 2 || begin > end || end > x.dim(0))
    throw ShapeError("slice_rows: invalid range for " + shape_str(x.shape));
  const std::size_t cols = x.dim(1);
  std::vector<double> out(x.data.begin() + static_cast<std::ptrdiff_t>(begin * cols),
                          x.data.begin() + static_cast<std::ptrdiff_t>(end * cols));
  auto xn = x.node;
  return detail::finish(
      tape, {end - begin, cols}, std::move(out), {&x},
      [xn, begin, cols](std::span<const double> g, Tape& t) {
        for (std::size_t i = 0; i < g.size(); ++i) t.accumulate_at(*xn, begin * cols + i, g[i]);
      },
      "slice_rows");
}

inline Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape) + " as " + shape_str(shape));
  auto xn = x.node;
  return detail::finish(
      tape, std::move(shape), x.data, {&x},
      [xn](std::span<const double> g, Tape& t) { t.accumulate(*xn, g); }, "reshape");
}

/// Joins rank-1 tensors (or scalars) end to end.
inline Tensor concat(Tape& tape, const std::vector<Tensor>& parts) {
  std::vector<double> out;
  std::vector<std::pair<std::optional<NodeId>, std::size_t>> layout;
  std::vector<NodeId> ids;
  for (const auto& p : parts) {
    if (p.rank() > 1) throw ShapeError("concat: parts must be rank 0 or 1");
    layout.emplace_back(p.node, p.size());
    if (p.node) ids.push_back(*p.node);
    out.insert(out.end(), p.data.begin(), p.data.end());
  }
  detail::check_finite(out, "concat");
  const std::size_t n_out = out.size();
  Tensor result(Shape{n_out}, std::move(out));
  if (!ids.empty())
    result.node = tape.record(
        result.size(), std::move(ids),
        [layout](std::span<const double> g, Tape& t) {
          std::size_t off = 0;
          for (const auto& [node, n] : layout) {
            if (node) t.accumulate(*node, g.subspan(off, n));
            off += n;
          }
        },
        "concat");
  return result;
}

/// Stacks equally shaped tensors along a new leading axis.
inline Tensor stack(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("stack: no parts");
  Shape inner = parts.front().shape;
  std::vector<double> out;
  std::vector<std::optional<NodeId>> nodes;
  std::vector<NodeId> ids;
  for (const auto& p : parts) {
    if (p.shape != inner) throw ShapeError("stack: shape mismatch");
    nodes.push_back(p.node);
    if (p.node) ids.push_back(*p.node);
    out.insert(out.end(), p.data.begin(), p.data.end());
  }
  Shape shape{parts.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  detail::check_finite(out, "stack");
  Tensor result(std::move(shape), std::move(out));
  const std::size_t n = shape_size(inner);
  if (!ids.empty())
    result.node = tape.record(
        result.size(), std::move(ids),
        [nodes, n](std::span<const double> g, Tape& t) {
          for (std::size_t i = 0; i < nodes.size(); ++i)
            if (nodes[i]) t.accumulate(*nodes[i], g.subspan(i * n, n));
        },
        "stack");
  return result;
}

/// Concatenates matrices with equal row counts along columns.
inline Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const std::size_t rows = parts.front().rank() == 2 ? parts.front().dim(0) : 0;
  std::size_t cols = 0;
  std::vector<std::size_t> widths;
  std::vector<std::optional<NodeId>> nodes;
  std::vector<NodeId> ids;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows) throw ShapeError("concat_cols: row count mismatch");
    widths.push_back(p.dim(1));
    cols += p.dim(1);
    nodes.push_back(p.node);
    if (p.node) ids.push_back(*p.node);
  }
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      std::copy_n(&parts[k].data[r * widths[k]], widths[k], &out[r * cols + off]);
      off += widths[k];
    }
  }
  detail::check_finite(out, "concat_cols");
  Tensor result(Shape{rows, cols}, std::move(out));
  if (!ids.empty())
    result.node = tape.record(
        result.size(), std::move(ids),
        [nodes, widths, rows, cols](std::span<const double> g, Tape& t) {
          std::size_t off = 0;
          for (std::size_t k = 0; k < nodes.size(); ++k) {
            if (nodes[k]) {
              std::vector<double> gk(rows * widths[k]);
              for (std::size_t r = 0; r < rows; ++r)
                std::copy_n(&g[r * cols + off], widths[k], &gk[r * widths[k]]);
              t.accumulate(*nodes[k], gk);
            }
            off += widths[k];
          }
        },
        "concat_cols");
  return result;
}

namespace detail {

/// log sum_i exp(x_i - max x), via log1p so a dominant entry keeps full precision.
inline double log_sum_exp_shifted(std::span<const double> x, double m) {
  const auto top = std::max_element(x.begin(), x.end());
  double rest = 0.0;
  for (auto it = x.begin(); it != x.end(); ++it)
    if (it != top) rest += std::exp(*it - m);
  return std::log1p(rest);
}

}  // namespace detail

/// Numerically stable softmax of a plain vector (no tape).
inline std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("softmax: empty input");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - m));
  for (double& v : p) v /= z;
  return p;
}

inline Tensor log_softmax(Tape& tape, const Tensor& logits) {
  if (logits.rank() != 1 || logits.size() == 0) throw ShapeError("log_softmax: expected non-empty vector");
  const double m = *std::max_element(logits.data.begin(), logits.data.end());
  const double lz = m + detail::log_sum_exp_shifted(logits.data, m);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = logits.data[i] - lz;
  auto ln = logits.node;
  std::vector<double> prob(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) prob[i] = std::exp(out[i]);
  return detail::finish(
      tape, logits.shape, std::move(out), {&logits},
      [ln, prob = std::move(prob)](std::span<const double> g, Tape& t) {
        double gs = 0.0;
        for (double v : g) gs += v;
        std::vector<double> gx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] - prob[i] * gs;
        t.accumulate(*ln, gx);
      },
      "log_softmax");
}

/// -log softmax(logits)[label], max-subtracted.
inline Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, std::size_t label) {
  if (logits.rank() != 1 || logits.size() == 0)
    throw ShapeError("softmax_cross_entropy: expected non-empty vector logits");
  if (label >= logits.size())
    throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) +
                            " outside [0, " + std::to_string(logits.size()) + ")");
  const double m = *std::max_element(logits.data.begin(), logits.data.end());
  const double loss = detail::log_sum_exp_shifted(logits.data, m) - (logits.data[label] - m);
  auto ln = logits.node;
  std::vector<double> prob = ln ? softmax(logits.data) : std::vector<double>{};
  return detail::finish(
      tape, {}, {loss}, {&logits},
      [ln, label, prob = std::move(prob)](std::span<const double> g, Tape& t) {
        std::vector<double> gx(prob.size());
        for (std::size_t i = 0; i < prob.size(); ++i) gx[i] = g[0] * (prob[i] - (i == label ? 1.0 : 0.0));
        t.accumulate(*ln, gx);
      },
      "softmax_cross_entropy");
}

/// Identity forward; backward multiplies the upstream gradient by -lambda.
inline Tensor grad_reverse(Tape& tape, const Tensor& x, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("grad_reverse: lambda must be >= 0");
  auto xn = x.node;
  return detail::finish(
      tape, x.shape, x.data, {&x},
      [xn, lambda](std::span<const double> g, Tape& t) {
        std::vector<double> gx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = -lambda * g[i];
        t.accumulate(*xn, gx);
      },
      "grad_reverse");
}

}  // namespace ad

// ---------------------------------------------------------------------------
// Named parameter collections and optimizers.

class ParamSet {
 public:
  void add(std::string name, Tensor t) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    index_.emplace(name, tensors_.size());
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(t));
  }

  bool contains(std::string_view name) const { return index_.find(std::string(name)) != index_.end(); }
  std::size_t size() const { return tensors_.size(); }
  bool empty() const { return tensors_.empty(); }
  const std::vector<std::string>& names() const { return names_; }

  Tensor& operator[](std::string_view name) { return tensors_[lookup(name)]; }
  const Tensor& operator[](std::string_view name) const { return tensors_[lookup(name)]; }
  Tensor& at(std::size_t i) { return tensors_.at(i); }
  const Tensor& at(std::size_t i) const { return tensors_.at(i); }
  const std::string& name(std::size_t i) const { return names_.at(i); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  /// Tracked copy registered on `tape` as leaves.
  ParamSet bind(Tape& tape) const {
    ParamSet out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], tape.watch(tensors_[i].detached()));
    return out;
  }

  /// Untracked copy.
  ParamSet snapshot() const {
    ParamSet out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], tensors_[i].detached());
    return out;
  }

  /// Gradients of a bound copy, shaped like the parameters.
  ParamSet gradients(const Tape& tape) const {
    ParamSet out;
    for (std::size_t i = 0; i < size(); ++i)
      out.add(names_[i], Tensor(tensors_[i].shape, tape.grad(tensors_[i])));
    return out;
  }

  bool operator==(const ParamSet& o) const {
    if (names_ != o.names_) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (tensors_[i].shape != o.tensors_[i].shape || tensors_[i].data != o.tensors_[i].data) return false;
    return true;
  }

 private:
  std::size_t lookup(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
    return it->second;
  }

  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

enum class OptimizerAlgorithm { sgd, sgd_momentum, adam };

inline std::string to_string(OptimizerAlgorithm a) {
  switch (a) {
    case OptimizerAlgorithm::sgd: return "sgd";
    case OptimizerAlgorithm::sgd_momentum: return "sgd-momentum";
    case OptimizerAlgorithm::adam: return "adam";
  }
  return "?";
}

inline OptimizerAlgorithm parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerAlgorithm::sgd;
  if (s == "sgd-momentum" || s == "momentum") return OptimizerAlgorithm::sgd_momentum;
  if (s == "adam") return OptimizerAlgorithm::adam;
  throw std::invalid_argument("unknown optimizer '" + std::string(s) + "'");
}

struct OptimizerConfig {
  OptimizerAlgorithm algorithm = OptimizerAlgorithm::adam;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

struct OptimizerState {
  OptimizerConfig config;
  std::size_t step = 0;
  std::map<std::string, std::vector<double>> first;   // momentum or adam m
  std::map<std::string, std::vector<double>> second;  // adam v
};

/// In-place update of every parameter that has an entry in `grads`.
inline void optimizer_step(OptimizerState& state, ParamSet& params, const ParamSet& grads) {
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const auto& name = grads.name(i);
    if (params[name].shape != grads.at(i).shape)
      throw ShapeError("optimizer_step: gradient shape mismatch for '" + name + "'");
    for (double g : grads.at(i).data)
      if (!std::isfinite(g)) throw NonFiniteError("optimizer_step: non-finite gradient for '" + name + "'");
  }
  ++state.step;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const auto& name = grads.name(i);
    auto& p = params[name].data;
    const auto& g = grads.at(i).data;
    switch (c.algorithm) {
      case OptimizerAlgorithm::sgd:
        for (std::size_t j = 0; j < p.size(); ++j)
          p[j] -= c.learning_rate * (g[j] + c.weight_decay * p[j]);
        break;
      case OptimizerAlgorithm::sgd_momentum: {
        auto& v = state.first[name];
        if (v.size() != p.size()) v.assign(p.size(), 0.0);
        for (std::size_t j = 0; j < p.size(); ++j) {
          v[j] = c.momentum * v[j] + g[j] + c.weight_decay * p[j];
          p[j] -= c.learning_rate * v[j];
        }
        break;
      }
      case OptimizerAlgorithm::adam: {
        auto& m = state.first[name];
        auto& v = state.second[name];
        if (m.size() != p.size()) m.assign(p.size(), 0.0);
        if (v.size() != p.size()) v.assign(p.size(), 0.0);
        for (std::size_t j = 0; j < p.size(); ++j) {
          const double gj = g[j] + c.weight_decay * p[j];
          m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
          v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
          p[j] -= c.learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + c.epsilon);
        }
        break;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.

struct GradCheckOptions {
  double eps = 1e-5;
  /// Tensors larger than this are checked on a random coordinate sample.
  std::size_t max_coords_per_tensor = 64;
  std::uint64_t seed = 0;
  /// Relative error is |a - n| / max(|a|, |n|, floor).
  double denominator_floor = 1e-6;
};

struct CoordCheck {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool skipped = false;  // non-smooth: a branch decision flipped under +-eps
};

struct GradCheckReport {
  std::vector<CoordCheck> coords;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;

  bool passed(double tol) const { return checked > 0 && max_rel_error < tol; }
};

using ScalarFn = std::function<Tensor(Tape&, const ParamSet&)>;

/// Central differences against reverse-mode gradients of `f` at `params`.
/// A coordinate is skipped when f's branch signature (min/max picks, relu
/// masks) differs between the base point and either perturbed point.
inline GradCheckReport finite_diff_check(const ScalarFn& f, const ParamSet& params,
                                         const GradCheckOptions& opts = {}) {
  if (opts.eps <= 0.0) throw std::invalid_argument("finite_diff_check: eps must be > 0");
  Tape tape;
  ParamSet bound = params.bind(tape);
  Tensor loss = f(tape, bound);
  const std::uint64_t base_sig = tape.branch_signature();
  tape.backward(loss);
  ParamSet grads = bound.gradients(tape);

  auto evaluate = [&](const ParamSet& p, std::uint64_t& sig) {
    Tape t;
    const double v = f(t, p).item();
    sig = t.branch_signature();
    return v;
  };

  GradCheckReport report;
  RngStream rng(opts.seed, 0xF1D1u);
  ParamSet probe = params.snapshot();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t n = params.at(i).size();
    std::vector<std::size_t> coords;
    if (n <= opts.max_coords_per_tensor) {
      coords.resize(n);
      std::iota(coords.begin(), coords.end(), std::size_t{0});
    } else {
      coords = rng.sample_without_replacement(n, opts.max_coords_per_tensor);
    }
    for (std::size_t j : coords) {
      const double orig = probe.at(i).data[j];
      std::uint64_t sig_plus = 0, sig_minus = 0;
      probe.at(i).data[j] = orig + opts.eps;
      const double f_plus = evaluate(probe, sig_plus);
      probe.at(i).data[j] = orig - opts.eps;
      const double f_minus = evaluate(probe, sig_minus);
      probe.at(i).data[j] = orig;

      CoordCheck c;
      c.param = params.name(i);
      c.index = j;
      c.analytic = grads.at(i).data[j];
      c.numeric = (f_plus - f_minus) / (2.0 * opts.eps);
      if (sig_plus != base_sig || sig_minus != base_sig) {
        c.skipped = true;
        ++report.skipped;
      } else {
        const double denom = std::max({std::abs(c.analytic), std::abs(c.numeric), opts.denominator_floor});
        c.rel_error = std::abs(c.analytic - c.numeric) / denom;
        report.max_rel_error = std::max(report.max_rel_error, c.rel_error);
        ++report.checked;
      }
      report.coords.push_back(std::move(c));
    }
  }
  return report;
}

}  // namespace fewrel
