#ifndef FASTADV_CORE_TAPE_HPP
#define FASTADV_CORE_TAPE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fastadv/core/error.hpp"
#include "fastadv/core/gemm.hpp"
#include "fastadv/core/tensor.hpp"

namespace fastadv {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

enum class OpKind {
  leaf,
  matmul,
  bias_add,
  conv2d,
  relu,
  reshape,
  mean,
  add,
  sub,
  mul,
  softmax_cross_entropy,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::bias_add: return "bias_add";
    case OpKind::conv2d: return "conv2d";
    case OpKind::relu: return "relu";
    case OpKind::reshape: return "reshape";
    case OpKind::mean: return "mean";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::softmax_cross_entropy: return "softmax_cross_entropy";
  }
  return "?";
}

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Number of backward passes executed on the calling thread. Training loops
/// read it before and after a minibatch to account gradient computations.
inline std::size_t& backward_pass_counter() {
  thread_local std::size_t count = 0;
  return count;
}

/// Eager reverse-mode tape. Every op computes its value immediately and
/// appends a record; backward() replays the records in reverse.
///
/// Records only ever reference earlier records, so the tape is topologically
/// ordered by construction. A tape is single-threaded.
template <typename T>
class Tape {
 public:
  Var leaf(Tensor<T> value, bool requires_grad = false) {
    if (value.empty()) throw ShapeError("leaf tensor is empty");
    ensure_finite(value, "leaf");
    value.set_requires_grad(requires_grad);
    value.clear_grad();
    Node n;
    n.kind = OpKind::leaf;
    n.value = std::move(value);
    return push(std::move(n));
  }

  /// a[m,k] x b[k,n] -> [m,n]
  Var matmul(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
      throw ShapeError("matmul shapes " + to_string(A.shape()) + " x " + to_string(B.shape()));
    }
    Tensor<T> out({A.dim(0), B.dim(1)});
    detail::gemm(detail::Trans::no, detail::Trans::no, A.dim(0), B.dim(1), A.dim(1), A.data().data(),
                 B.data().data(), out.data().data(), false);
    return record(OpKind::matmul, {a, b}, std::move(out));
  }

  /// Adds b[c] along dimension 1 of x (dense [n,c] or feature maps [n,c,h,w]).
  Var bias_add(Var x, Var b) {
    const auto& X = value(x);
    const auto& Bv = value(b);
    if (X.rank() < 2 || Bv.rank() != 1 || Bv.dim(0) != X.dim(1)) {
      throw ShapeError("bias_add shapes " + to_string(X.shape()) + " + " + to_string(Bv.shape()));
    }
    Tensor<T> out = X;
    out.set_requires_grad(false);
    const std::size_t channels = X.dim(1);
    const std::size_t inner = X.size() / (X.dim(0) * channels);
    auto o = out.data();
    auto bias = Bv.data();
    for (std::size_t n = 0, idx = 0; n < X.dim(0); ++n) {
      for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t k = 0; k < inner; ++k, ++idx) o[idx] += bias[c];
      }
    }
    return record(OpKind::bias_add, {x, b}, std::move(out));
  }

  /// x[n,c,h,w] (*) w[o,c,kh,kw] -> [n,o,oh,ow], via patch gather + matmul.
  Var conv2d(Var x, Var w, Conv2dOptions opt) {
    const auto& X = value(x);
    const auto& W = value(w);
    if (X.rank() != 4 || W.rank() != 4 || X.dim(1) != W.dim(1)) {
      throw ShapeError("conv2d shapes " + to_string(X.shape()) + " * " + to_string(W.shape()));
    }
    if (opt.stride == 0) throw ShapeError("conv2d stride must be positive");
    const Geometry g = geometry(X.shape(), W.shape(), opt);
    std::vector<T> cols(g.patch * g.columns());
    im2col(X.data(), g, cols);
    std::vector<T> tmp(g.out_c * g.columns());
    detail::gemm(detail::Trans::no, detail::Trans::no, g.out_c, g.columns(), g.patch, W.data().data(),
                 cols.data(), tmp.data(), false);
    Tensor<T> out({g.batch, g.out_c, g.out_h, g.out_w});
    auto o = out.data();
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t n = 0; n < g.batch; ++n) {
      for (std::size_t oc = 0; oc < g.out_c; ++oc) {
        const T* src = tmp.data() + oc * g.columns() + n * plane;
        std::copy(src, src + plane, o.begin() + (n * g.out_c + oc) * plane);
      }
    }
    Var v = record(OpKind::conv2d, {x, w}, std::move(out));
    Node& node = nodes_[v.id];
    node.conv = opt;
    node.saved = std::move(cols);
    return v;
  }

  Var relu(Var x) {
    Tensor<T> out = value(x);
    out.set_requires_grad(false);
    for (T& v : out.data()) v = v > T{0} ? v : T{0};
    return record(OpKind::relu, {x}, std::move(out));
  }

  Var reshape(Var x, Shape shape) { return record(OpKind::reshape, {x}, value(x).reshaped(std::move(shape))); }

  /// [n, ...] -> [n, prod(...)]
  Var flatten(Var x) {
    const auto& X = value(x);
    if (X.rank() < 1) throw ShapeError("flatten of rank-0 tensor");
    return reshape(x, {X.dim(0), X.size() / X.dim(0)});
  }

  Var mean(Var x) {
    const auto& X = value(x);
    T s = 0;
    for (T v : X.data()) s += v;
    return record(OpKind::mean, {x}, Tensor<T>::scalar(s / static_cast<T>(X.size())));
  }

  Var add(Var a, Var b) { return elementwise(OpKind::add, a, b); }
  Var sub(Var a, Var b) { return elementwise(OpKind::sub, a, b); }
  Var mul(Var a, Var b) { return elementwise(OpKind::mul, a, b); }

  /// Mean over rows of -log softmax(logits[i])[labels[i]].
  Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
    const auto& Z = value(logits);
    if (Z.rank() != 2 || Z.dim(0) != labels.size()) {
      throw ShapeError("softmax_cross_entropy: logits " + to_string(Z.shape()) + " vs " +
                       std::to_string(labels.size()) + " labels");
    }
    const std::size_t rows = Z.dim(0);
    const std::size_t k = Z.dim(1);
    std::vector<T> probs(Z.size());
    T total = 0;
    for (std::size_t i = 0; i < rows; ++i) {
      const int y = labels[i];
      if (y < 0 || static_cast<std::size_t>(y) >= k) {
        throw std::out_of_range("label " + std::to_string(y) + " outside [0," + std::to_string(k) + ")");
      }
      const T* z = Z.data().data() + i * k;
      T* p = probs.data() + i * k;
      const T zmax = *std::max_element(z, z + k);
      T s = 0;
      for (std::size_t j = 0; j < k; ++j) {
        p[j] = std::exp(z[j] - zmax);
        s += p[j];
      }
      for (std::size_t j = 0; j < k; ++j) p[j] /= s;
      total += std::log(s) + zmax - z[y];
    }
    Var v = record(OpKind::softmax_cross_entropy, {logits},
                   Tensor<T>::scalar(total / static_cast<T>(rows)));
    Node& node = nodes_[v.id];
    node.saved = std::move(probs);
    node.labels.assign(labels.begin(), labels.end());
    return v;
  }

  /// Fills the gradient slot of every requires_grad record reachable from
  /// `loss`. Forward values are left untouched; calling backward again
  /// recomputes gradients from scratch.
  void backward(Var loss) {
    if (nodes_.empty()) throw std::logic_error("backward on an empty tape");
    check(loss);
    if (nodes_[loss.id].value.size() != 1) {
      throw ShapeError("backward needs a scalar loss, got " + to_string(nodes_[loss.id].value.shape()));
    }
    ++backward_pass_counter();
    std::vector<std::vector<T>> grads(loss.id + 1);
    grads[loss.id].assign(1, T{1});
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (grads[i].empty() || !node.value.requires_grad() || node.kind == OpKind::leaf) continue;
      propagate(node, grads[i], grads);
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& node = nodes_[i];
      node.value.clear_grad();
      if (!node.value.requires_grad()) continue;
      if (i < grads.size() && !grads[i].empty()) {
        node.value.set_grad(std::move(grads[i]));
      } else {
        node.value.set_grad(std::vector<T>(node.value.size(), T{0}));
      }
    }
  }

  const Tensor<T>& value(Var v) const {
    check(v);
    return nodes_[v.id].value;
  }

  const std::vector<T>& grad(Var v) const { return value(v).grad(); }

  Tensor<T> grad_tensor(Var v) const {
    const auto& t = value(v);
    return Tensor<T>(t.shape(), t.grad());
  }

  OpKind kind(Var v) const {
    check(v);
    return nodes_[v.id].kind;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    OpKind kind = OpKind::leaf;
    std::size_t inputs[2] = {0, 0};
    std::size_t arity = 0;
    Tensor<T> value;
    std::vector<T> saved;
    std::vector<int> labels;
    Conv2dOptions conv;
  };

  struct Geometry {
    std::size_t batch, in_c, in_h, in_w, out_c, k_h, k_w, out_h, out_w, stride, pad, patch;
    std::size_t columns() const { return batch * out_h * out_w; }
  };

  static Geometry geometry(const Shape& x, const Shape& w, Conv2dOptions opt) {
    Geometry g{};
    g.batch = x[0];
    g.in_c = x[1];
    g.in_h = x[2];
    g.in_w = x[3];
    g.out_c = w[0];
    g.k_h = w[2];
    g.k_w = w[3];
    g.stride = opt.stride;
    g.pad = opt.padding;
    if (g.in_h + 2 * g.pad < g.k_h || g.in_w + 2 * g.pad < g.k_w) {
      throw ShapeError("conv2d input " + to_string(x) + " smaller than kernel " + to_string(w));
    }
    g.out_h = (g.in_h + 2 * g.pad - g.k_h) / g.stride + 1;
    g.out_w = (g.in_w + 2 * g.pad - g.k_w) / g.stride + 1;
    g.patch = g.in_c * g.k_h * g.k_w;
    return g;
  }

  // cols[(c*kh + i)*kw + j][n*oh*ow + y*ow + x]
  static void im2col(std::span<const T> in, const Geometry& g, std::vector<T>& cols) {
    const std::size_t plane = g.out_h * g.out_w;
    const std::size_t ncols = g.columns();
    for (std::size_t c = 0; c < g.in_c; ++c) {
      for (std::size_t i = 0; i < g.k_h; ++i) {
        for (std::size_t j = 0; j < g.k_w; ++j) {
          T* row = cols.data() + ((c * g.k_h + i) * g.k_w + j) * ncols;
          for (std::size_t n = 0; n < g.batch; ++n) {
            const T* src = in.data() + (n * g.in_c + c) * g.in_h * g.in_w;
            T* dst = row + n * plane;
            for (std::size_t oy = 0; oy < g.out_h; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                          static_cast<std::ptrdiff_t>(g.pad);
                const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.in_h) &&
                                    ix < static_cast<std::ptrdiff_t>(g.in_w);
                dst[oy * g.out_w + ox] = inside ? src[iy * g.in_w + ix] : T{0};
              }
            }
          }
        }
      }
    }
  }

  static void col2im(const std::vector<T>& cols, const Geometry& g, std::vector<T>& out) {
    const std::size_t plane = g.out_h * g.out_w;
    const std::size_t ncols = g.columns();
    for (std::size_t c = 0; c < g.in_c; ++c) {
      for (std::size_t i = 0; i < g.k_h; ++i) {
        for (std::size_t j = 0; j < g.k_w; ++j) {
          const T* row = cols.data() + ((c * g.k_h + i) * g.k_w + j) * ncols;
          for (std::size_t n = 0; n < g.batch; ++n) {
            T* dst = out.data() + (n * g.in_c + c) * g.in_h * g.in_w;
            const T* src = row + n * plane;
            for (std::size_t oy = 0; oy < g.out_h; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
              for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                          static_cast<std::ptrdiff_t>(g.pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
                dst[iy * g.in_w + ix] += src[oy * g.out_w + ox];
              }
            }
          }
        }
      }
    }
  }

  void check(Var v) const {
    if (v.id >= nodes_.size()) throw std::out_of_range("variable does not belong to this tape");
  }

  static void ensure_finite(const Tensor<T>& t, const char* what) {
    if (!t.all_finite()) throw NonFiniteError(std::string("non-finite value in ") + what);
  }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var record(OpKind kind, std::initializer_list<Var> inputs, Tensor<T> out) {
    ensure_finite(out, op_name(kind));
    Node n;
    n.kind = kind;
    bool needs_grad = false;
    for (Var in : inputs) {
      check(in);
      n.inputs[n.arity++] = in.id;
      needs_grad = needs_grad || nodes_[in.id].value.requires_grad();
    }
    out.set_requires_grad(needs_grad);
    n.value = std::move(out);
    return push(std::move(n));
  }

  Var elementwise(OpKind kind, Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.shape() != B.shape()) {
      throw ShapeError(std::string(op_name(kind)) + " shapes " + to_string(A.shape()) + " vs " +
                       to_string(B.shape()));
    }
    Tensor<T> out(A.shape());
    auto o = out.data();
    auto x = A.data();
    auto y = B.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
      o[i] = kind == OpKind::add ? x[i] + y[i] : kind == OpKind::sub ? x[i] - y[i] : x[i] * y[i];
    }
    return record(kind, {a, b}, std::move(out));
  }

  bool wants(std::size_t id) const { return nodes_[id].value.requires_grad(); }

  std::vector<T>& slot(std::vector<std::vector<T>>& grads, std::size_t id) const {
    auto& g = grads[id];
    if (g.empty()) g.assign(nodes_[id].value.size(), T{0});
    return g;
  }

  void propagate(const Node& node, const std::vector<T>& gout, std::vector<std::vector<T>>& grads) {
    const std::size_t a = node.inputs[0];
    const std::size_t b = node.inputs[1];
    switch (node.kind) {
      case OpKind::leaf:
        break;
      case OpKind::matmul: {
        const auto& A = nodes_[a].value;
        const auto& B = nodes_[b].value;
        const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
        if (wants(a)) {
          detail::gemm(detail::Trans::no, detail::Trans::yes, m, k, n, gout.data(), B.data().data(),
                       slot(grads, a).data(), true);
        }
        if (wants(b)) {
          detail::gemm(detail::Trans::yes, detail::Trans::no, k, n, m, A.data().data(), gout.data(),
                       slot(grads, b).data(), true);
        }
        break;
      }
      case OpKind::bias_add: {
        const auto& X = nodes_[a].value;
        if (wants(a)) {
          auto& gx = slot(grads, a);
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i];
        }
        if (wants(b)) {
          auto& gb = slot(grads, b);
          const std::size_t channels = X.dim(1);
          const std::size_t inner = X.size() / (X.dim(0) * channels);
          for (std::size_t n = 0, idx = 0; n < X.dim(0); ++n) {
            for (std::size_t c = 0; c < channels; ++c) {
              T s = 0;
              for (std::size_t k = 0; k < inner; ++k, ++idx) s += gout[idx];
              gb[c] += s;
            }
          }
        }
        break;
      }
      case OpKind::conv2d: {
        const auto& X = nodes_[a].value;
        const auto& W = nodes_[b].value;
        const Geometry g = geometry(X.shape(), W.shape(), node.conv);
        const std::size_t plane = g.out_h * g.out_w;
        std::vector<T> gy(g.out_c * g.columns());
        for (std::size_t n = 0; n < g.batch; ++n) {
          for (std::size_t oc = 0; oc < g.out_c; ++oc) {
            const T* src = gout.data() + (n * g.out_c + oc) * plane;
            std::copy(src, src + plane, gy.begin() + oc * g.columns() + n * plane);
          }
        }
        if (wants(b)) {
          detail::gemm(detail::Trans::no, detail::Trans::yes, g.out_c, g.patch, g.columns(), gy.data(),
                       node.saved.data(), slot(grads, b).data(), true);
        }
        if (wants(a)) {
          std::vector<T> gcols(g.patch * g.columns());
          detail::gemm(detail::Trans::yes, detail::Trans::no, g.patch, g.columns(), g.out_c,
                       W.data().data(), gy.data(), gcols.data(), false);
          col2im(gcols, g, slot(grads, a));
        }
        break;
      }
      case OpKind::relu: {
        if (!wants(a)) break;
        auto& gx = slot(grads, a);
        auto x = nodes_[a].value.data();
        for (std::size_t i = 0; i < gx.size(); ++i) {
          if (x[i] > T{0}) gx[i] += gout[i];
        }
        break;
      }
      case OpKind::reshape: {
        if (!wants(a)) break;
        auto& gx = slot(grads, a);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i];
        break;
      }
      case OpKind::mean: {
        if (!wants(a)) break;
        auto& gx = slot(grads, a);
        const T share = gout[0] / static_cast<T>(gx.size());
        for (T& v : gx) v += share;
        break;
      }
      case OpKind::add:
      case OpKind::sub:
      case OpKind::mul: {
        auto x = nodes_[a].value.data();
        auto y = nodes_[b].value.data();
        if (wants(a)) {
          auto& ga = slot(grads, a);
          for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] += node.kind == OpKind::mul ? gout[i] * y[i] : gout[i];
          }
        }
        if (wants(b)) {
          auto& gb = slot(grads, b);
          for (std::size_t i = 0; i < gb.size(); ++i) {
            gb[i] += node.kind == OpKind::mul ? gout[i] * x[i]
                     : node.kind == OpKind::sub ? -gout[i]
                                                : gout[i];
          }
        }
        break;
      }
      case OpKind::softmax_cross_entropy: {
        if (!wants(a)) break;
        auto& gz = slot(grads, a);
        const std::size_t rows = node.labels.size();
        const std::size_t k = gz.size() / rows;
        const T scale = gout[0] / static_cast<T>(rows);
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            const T onehot = static_cast<std::size_t>(node.labels[i]) == j ? T{1} : T{0};
            gz[i * k + j] += scale * (node.saved[i * k + j] - onehot);
          }
        }
        break;
      }
    }
  }

  std::deque<Node> nodes_;  // deque: references from value() survive later ops
};

/// Row-wise cross-entropy without recording anything.
template <typename T>
std::vector<T> cross_entropy_per_row(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy_per_row: logits " + to_string(logits.shape()));
  }
  const std::size_t k = logits.dim(1);
  std::vector<T> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const T* z = logits.data().data() + i * k;
    const T zmax = *std::max_element(z, z + k);
    T s = 0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(z[j] - zmax);
    out[i] = std::log(s) + zmax - z[labels[i]];
  }
  return out;
}

/// Index of the largest logit per row; ties resolve to the lowest index.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  const std::size_t k = logits.dim(1);
  std::vector<int> out(logits.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T* z = logits.data().data() + i * k;
    out[i] = static_cast<int>(std::max_element(z, z + k) - z);
  }
  return out;
}

}  // namespace fastadv

#endif  // FASTADV_CORE_TAPE_HPP
