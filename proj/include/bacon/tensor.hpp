#ifndef BACON_TENSOR_HPP
#define BACON_TENSOR_HPP

// Dense tensors with reverse-mode autodiff on a per-thread tape.
// Broadcasting is deliberately restricted to scalar-vs-tensor and
// equal-shape; everything the losses need is expressible with that.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <utility>
#include <vector>

#include "bacon/common.hpp"

namespace bacon {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

struct TensorNode {
  Shape shape;
  std::vector<real> value;
  std::vector<real> grad;  // allocated lazily, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backward;  // empty on leaves

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), real(0));
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), real(0));
  }
};

class Tensor;

// Ordered record of op nodes; parents always precede children because
// nodes are appended at creation time. One tape per thread at most.
class Tape {
 public:
  Tape() : prev_(current_ref()) { current_ref() = this; }
  ~Tape() { current_ref() = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return current_ref(); }

  bool active = true;

  void record(std::shared_ptr<TensorNode> n) { nodes_.push_back(std::move(n)); }

  void backward(const Tensor& loss);

  void zero_grad() {
    for (auto& n : nodes_) n->zero_grad();
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  static Tape*& current_ref() {
    thread_local Tape* cur = nullptr;
    return cur;
  }
  Tape* prev_;
  std::vector<std::shared_ptr<TensorNode>> nodes_;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

  static Tensor from(Shape shape, std::vector<real> data) {
    if (numel(shape) != data.size())
      throw ShapeMismatch("tensor data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    return Tensor(std::move(n));
  }
  static Tensor zeros(Shape shape) { return full(std::move(shape), real(0)); }
  static Tensor full(Shape shape, real v) {
    const std::size_t n = numel(shape);
    return from(std::move(shape), std::vector<real>(n, v));
  }
  static Tensor scalar(real v) { return from({1}, {v}); }

  // Leaf with gradient tracking (synthetic pixels, network parameters).
  static Tensor param(Shape shape, std::vector<real> data) {
    Tensor t = from(std::move(shape), std::move(data));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  bool is_scalar() const { return size() == 1; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

  std::vector<real>& data() { return node_->value; }
  const std::vector<real>& data() const { return node_->value; }
  real item() const {
    if (!is_scalar()) throw NotScalar("item() on tensor " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  const std::vector<real>& grad() const { return node_->grad; }
  std::vector<real>& grad() { return node_->grad; }
  void zero_grad() { node_->zero_grad(); }

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Creates an op-result node. `backward` accumulates into parents' grads,
// reading from out->grad; it runs only when the result is tape-recorded.
inline Tensor make_op(Shape shape, std::vector<real> value,
                      std::vector<Tensor> parents,
                      std::function<void(TensorNode*)> backward) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  Tape* tape = Tape::current();
  bool track = tape && tape->active;
  bool any_grad = false;
  for (const auto& p : parents) any_grad = any_grad || p.requires_grad();
  if (track && any_grad) {
    n->requires_grad = true;
    for (const auto& p : parents) n->parents.push_back(p.node());
    TensorNode* raw = n.get();
    n->backward = [raw, fn = std::move(backward)]() { fn(raw); };
    tape->record(n);
  }
  return Tensor(std::move(n));
}

inline void Tape::backward(const Tensor& loss) {
  if (!loss.is_scalar()) throw NotScalar("backward() needs a scalar loss");
  auto ln = loss.node();
  if (!ln->requires_grad || !ln->backward)
    throw NoTape("loss is not recorded on the active tape");
  // op-node grads are scratch; only leaf grads accumulate across calls
  for (auto& n : nodes_) n->zero_grad();
  ln->ensure_grad();
  ln->grad[0] += real(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    auto& n = *it;
    if (n->backward && !n->grad.empty()) n->backward();
  }
}

inline void backward(const Tensor& loss) {
  Tape* t = Tape::current();
  if (!t) throw NoTape("no active tape");
  t->backward(loss);
}

namespace detail {

inline void accumulate(TensorNode* p, const std::vector<real>& g) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
}

// Broadcast contract: equal shapes, or one side scalar.
inline void check_broadcast(const Tensor& a, const Tensor& b) {
  if (a.size() == b.size() || a.size() == 1 || b.size() == 1) return;
  throw ShapeMismatch("incompatible shapes " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
}

}  // namespace detail

// ---- elementwise binary ops -------------------------------------------

inline Tensor binary_op(const Tensor& a, const Tensor& b,
                        real (*fwd)(real, real),
                        void (*bwd)(real, real, real, real&, real&)) {
  detail::check_broadcast(a, b);
  const bool as = a.size() == 1, bs = b.size() == 1;
  const std::size_t n = std::max(a.size(), b.size());
  Shape out_shape = as ? b.shape() : a.shape();
  std::vector<real> out(n);
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[as ? 0 : i], bv[bs ? 0 : i]);
  auto an = a.node();
  auto bn = b.node();
  return make_op(std::move(out_shape), std::move(out), {a, b},
                 [an, bn, as, bs, n, bwd](TensorNode* o) {
                   const bool need_a = an->requires_grad;
                   const bool need_b = bn->requires_grad;
                   if (need_a) an->ensure_grad();
                   if (need_b) bn->ensure_grad();
                   for (std::size_t i = 0; i < n; ++i) {
                     real ga = 0, gb = 0;
                     bwd(an->value[as ? 0 : i], bn->value[bs ? 0 : i],
                         o->grad[i], ga, gb);
                     if (need_a) an->grad[as ? 0 : i] += ga;
                     if (need_b) bn->grad[bs ? 0 : i] += gb;
                   }
                 });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](real x, real y) { return x + y; },
      [](real, real, real g, real& ga, real& gb) {
        ga = g;
        gb = g;
      });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](real x, real y) { return x - y; },
      [](real, real, real g, real& ga, real& gb) {
        ga = g;
        gb = -g;
      });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](real x, real y) { return x * y; },
      [](real x, real y, real g, real& ga, real& gb) {
        ga = g * y;
        gb = g * x;
      });
}
inline Tensor div(const Tensor& a, const Tensor& b) {
  for (real y : b.data())
    if (y == real(0)) throw DomainError("division by zero");
  return binary_op(
      a, b, [](real x, real y) { return x / y; },
      [](real x, real y, real g, real& ga, real& gb) {
        ga = g / y;
        gb = -g * x / (y * y);
      });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

// ---- elementwise unary ops --------------------------------------------

inline Tensor unary_op(const Tensor& a, real (*fwd)(real),
                       real (*dfdx)(real)) {
  std::vector<real> out(a.size());
  const auto& av = a.data();
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  auto an = a.node();
  return make_op(a.shape(), std::move(out), {a}, [an, dfdx](TensorNode* o) {
    an->ensure_grad();
    for (std::size_t i = 0; i < o->grad.size(); ++i)
      an->grad[i] += o->grad[i] * dfdx(an->value[i]);
  });
}

inline Tensor relu(const Tensor& a) {
  return unary_op(
      a, [](real x) { return x > 0 ? x : real(0); },
      [](real x) { return x > 0 ? real(1) : real(0); });
}
inline Tensor square(const Tensor& a) {
  return unary_op(
      a, [](real x) { return x * x; }, [](real x) { return 2 * x; });
}
inline Tensor abs(const Tensor& a) {
  return unary_op(
      a, [](real x) { return std::fabs(x); },
      [](real x) { return x > 0 ? real(1) : (x < 0 ? real(-1) : real(0)); });
}
inline Tensor neg(const Tensor& a) {
  return unary_op(
      a, [](real x) { return -x; }, [](real) { return real(-1); });
}
inline Tensor operator-(const Tensor& a) { return neg(a); }

inline constexpr real kLogFloor = real(1e-12);

inline Tensor log(const Tensor& a) {
  for (real x : a.data())
    if (x <= real(0)) throw DomainError("log of non-positive value");
  return unary_op(
      a, [](real x) { return std::log(std::max(x, kLogFloor)); },
      [](real x) { return x >= kLogFloor ? real(1) / x : real(0); });
}

// clamp to [0,1]; derivative 1 on the closed interval, 0 outside.
inline Tensor clip01(const Tensor& a) {
  return unary_op(
      a, [](real x) { return std::min(std::max(x, real(0)), real(1)); },
      [](real x) { return (x >= real(0) && x <= real(1)) ? real(1) : real(0); });
}

// ---- reductions --------------------------------------------------------

inline Tensor reduce(const Tensor& a, const std::vector<std::size_t>& axes,
                     bool mean_reduce) {
  const Shape& in = a.shape();
  std::vector<bool> reduced(in.size(), false);
  if (axes.empty()) {
    reduced.assign(in.size(), true);
  } else {
    for (auto ax : axes) {
      if (ax >= in.size()) throw InvalidAxis("axis " + std::to_string(ax));
      reduced[ax] = true;
    }
  }
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t d = 0; d < in.size(); ++d) {
    if (reduced[d])
      count *= in[d];
    else
      out_shape.push_back(in[d]);
  }
  if (out_shape.empty()) out_shape.push_back(1);

  // flat index of every input element -> flat index in the output
  std::vector<std::size_t> in_strides(in.size(), 1);
  for (std::size_t d = in.size(); d-- > 1;)
    in_strides[d - 1] = in_strides[d] * in[d];
  std::vector<std::size_t> out_strides;
  {
    std::vector<std::size_t> os(out_shape.size(), 1);
    for (std::size_t d = out_shape.size(); d-- > 1;) os[d - 1] = os[d] * out_shape[d];
    out_strides = std::move(os);
  }
  auto idx_map = std::make_shared<std::vector<std::size_t>>(a.size());
  for (std::size_t flat = 0; flat < a.size(); ++flat) {
    std::size_t out = 0, k = 0;
    for (std::size_t d = 0; d < in.size(); ++d) {
      std::size_t idx = (flat / in_strides[d]) % in[d];
      if (!reduced[d]) out += idx * out_strides[k++];
    }
    (*idx_map)[flat] = out;
  }

  std::vector<real> out(numel(out_shape), real(0));
  const auto& av = a.data();
  for (std::size_t i = 0; i < av.size(); ++i) out[(*idx_map)[i]] += av[i];
  const real scale = mean_reduce ? real(1) / real(count) : real(1);
  if (mean_reduce)
    for (auto& v : out) v *= scale;

  auto an = a.node();
  return make_op(std::move(out_shape), std::move(out), {a},
                 [an, idx_map, scale](TensorNode* o) {
                   an->ensure_grad();
                   for (std::size_t i = 0; i < an->value.size(); ++i)
                     an->grad[i] += o->grad[(*idx_map)[i]] * scale;
                 });
}

inline Tensor sum(const Tensor& a, const std::vector<std::size_t>& axes = {}) {
  return reduce(a, axes, false);
}
inline Tensor mean(const Tensor& a, const std::vector<std::size_t>& axes = {}) {
  return reduce(a, axes, true);
}

// ---- matmul ------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw ShapeMismatch("matmul needs rank-2 tensors");
  const std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw ShapeMismatch("matmul inner dims " + std::to_string(k) + " vs " +
                        std::to_string(k2));
  std::vector<real> out(m * n, real(0));
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const real av_ip = av[i * k + p];
      if (av_ip == real(0)) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av_ip * bv[p * n + j];
    }
  auto an = a.node();
  auto bn = b.node();
  return make_op({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](TensorNode* o) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          real acc = 0;
          for (std::size_t j = 0; j < n; ++j)
            acc += o->grad[i * n + j] * bn->value[p * n + j];
          an->grad[i * k + p] += acc;
        }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) {
          real acc = 0;
          for (std::size_t i = 0; i < m; ++i)
            acc += an->value[i * k + p] * o->grad[i * n + j];
          bn->grad[p * n + j] += acc;
        }
    }
  });
}

// ---- structural ops ----------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size())
    throw ShapeMismatch("reshape " + shape_str(a.shape()) + " -> " +
                        shape_str(shape));
  auto an = a.node();
  return make_op(std::move(shape), a.data(), {a}, [an](TensorNode* o) {
    an->ensure_grad();
    for (std::size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i];
  });
}

// Differentiable copy of rows [begin, end) along axis 0.
inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.shape().empty() || begin >= end || end > a.dim(0))
    throw ShapeMismatch("slice_rows [" + std::to_string(begin) + "," +
                        std::to_string(end) + ") of " + shape_str(a.shape()));
  const std::size_t row = a.size() / a.dim(0);
  Shape out_shape = a.shape();
  out_shape[0] = end - begin;
  std::vector<real> out(a.data().begin() + begin * row,
                        a.data().begin() + end * row);
  auto an = a.node();
  return make_op(std::move(out_shape), std::move(out), {a},
                 [an, begin, row](TensorNode* o) {
                   an->ensure_grad();
                   for (std::size_t i = 0; i < o->grad.size(); ++i)
                     an->grad[begin * row + i] += o->grad[i];
                 });
}

}  // namespace bacon

#endif
