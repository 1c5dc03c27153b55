#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "affinity/errors.hpp"
#include "affinity/rng.hpp"

namespace affinity {

namespace detail {

inline std::atomic<uint64_t>& node_sequence() {
  static std::atomic<uint64_t> counter{0};
  return counter;
}

inline size_t numel_of(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// c[m,n] += sum_k a[m,k] * b[k,n]
template <typename T>
void gemm_nn(int m, int k, int n, const T* a, const T* b, T* c) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * k;
    T* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,k] += sum_n a[m,n] * b[k,n]   (b used transposed)
template <typename T>
void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * n;
    T* crow = c + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const T* brow = b + static_cast<size_t>(p) * n;
      T acc = T(0);
      for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// c[k,n] += sum_m a[m,k] * b[m,n]   (a used transposed)
template <typename T>
void gemm_tn(int m, int k, int n, const T* a, const T* b, T* c) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * k;
    const T* brow = b + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      T* crow = c + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

template <typename T>
struct Node;

// Dense row-major tensor. Copies are shallow: they share the underlying
// buffers, and op outputs are always freshly allocated, so a tensor's data is
// immutable once it has been consumed by an op.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<T>>(detail::numel_of(t.shape_), T(0));
    return t;
  }

  static Tensor full(std::vector<int> shape, T value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.data_->begin(), t.data_->end(), value);
    return t;
  }

  static Tensor from_vector(std::vector<int> shape, std::vector<T> values) {
    if (detail::numel_of(shape) != values.size())
      throw ShapeError("from_vector: " + detail::shape_str(shape) + " needs " +
                       std::to_string(detail::numel_of(shape)) + " values, got " +
                       std::to_string(values.size()));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<T>>(std::move(values));
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  size_t numel() const { return data_ ? data_->size() : 0; }
  bool defined() const { return data_ != nullptr; }

  std::vector<T>& values() { return *data_; }
  const std::vector<T>& values() const { return *data_; }
  T* ptr() { return data_->data(); }
  const T* ptr() const { return data_->data(); }

  T item() const {
    if (numel() != 1) throw ShapeError("item: tensor " + detail::shape_str(shape_) + " is not a scalar");
    return (*data_)[0];
  }

  // Marks this tensor as a differentiable leaf (allocates its grad buffer).
  Tensor& set_requires_grad() {
    if (!grad_) grad_ = std::make_shared<std::vector<T>>(numel(), T(0));
    return *this;
  }

  // True when gradients flow through / into this tensor.
  bool tracked() const { return grad_ != nullptr; }

  const std::vector<T>& grad() const {
    if (!grad_) throw Error("grad: tensor has no gradient buffer");
    return *grad_;
  }
  std::vector<T>& grad_mut() {
    if (!grad_) throw Error("grad: tensor has no gradient buffer");
    return *grad_;
  }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
  }

  std::shared_ptr<std::vector<T>> data_handle() const { return data_; }
  std::shared_ptr<std::vector<T>> grad_handle() const { return grad_; }
  // Like grad_handle() but allocates the buffer first; for op outputs whose
  // backprop closure is built before attach_node() runs.
  std::shared_ptr<std::vector<T>> grad_handle_alloc() {
    set_requires_grad();
    return grad_;
  }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

  // Internal: a tensor sharing src's data buffer under a different shape.
  static Tensor view_of(const Tensor& src, std::vector<int> new_shape) {
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.data_ = src.data_;
    return t;
  }

  // Internal: installs the creator node and allocates the output grad buffer.
  void attach_node(std::vector<Tensor<T>> parents, std::function<void()> backprop) {
    set_requires_grad();
    node_ = std::make_shared<Node<T>>();
    node_->seq = detail::node_sequence().fetch_add(1, std::memory_order_relaxed);
    node_->parents = std::move(parents);
    node_->backprop = std::move(backprop);
  }

 private:
  std::vector<int> shape_;
  std::shared_ptr<std::vector<T>> data_;
  std::shared_ptr<std::vector<T>> grad_;
  std::shared_ptr<Node<T>> node_;
};

// One recorded operation: its inputs and the closure that pushes the output
// gradient back into them. seq is the global application order.
template <typename T>
struct Node {
  uint64_t seq = 0;
  std::vector<Tensor<T>> parents;
  std::function<void()> backprop;
};

// The recorded operations reachable from one root, in application order.
template <typename T>
class DiffGraph {
 public:
  static DiffGraph trace(const Tensor<T>& root) {
    DiffGraph g;
    if (!root.node()) return g;
    std::unordered_set<const Node<T>*> seen;
    std::vector<std::shared_ptr<Node<T>>> stack{root.node()};
    seen.insert(root.node().get());
    while (!stack.empty()) {
      auto node = stack.back();
      stack.pop_back();
      g.order_.push_back(node);
      for (const auto& parent : node->parents) {
        const auto& pn = parent.node();
        if (pn && !seen.count(pn.get())) {
          seen.insert(pn.get());
          stack.push_back(pn);
        }
      }
    }
    std::sort(g.order_.begin(), g.order_.end(),
              [](const auto& a, const auto& b) { return a->seq < b->seq; });
    return g;
  }

  // Reverse sweep; assumes the root's gradient has been seeded.
  void run_backward() {
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) (*it)->backprop();
  }

  size_t size() const { return order_.size(); }

 private:
  std::vector<std::shared_ptr<Node<T>>> order_;
};

// Reverse-mode sweep from a scalar loss. Gradients accumulate into the grad
// buffer of every tracked tensor on the path, including the marked leaves.
template <typename T>
void backward(Tensor<T>& loss) {
  if (loss.numel() != 1)
    throw ShapeError("backward: loss must be a scalar, got " + detail::shape_str(loss.shape()));
  if (!loss.tracked()) return;
  loss.grad_mut()[0] += T(1);
  DiffGraph<T>::trace(loss).run_backward();
}

template <typename T>
void zero_grads(const std::vector<Tensor<T>*>& tensors) {
  for (auto* t : tensors) t->zero_grad();
}

// ---------------------------------------------------------------------------
// Differentiable operations
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
bool any_tracked(const Tensor<T>& a) {
  return a.tracked();
}
template <typename T, typename... Rest>
bool any_tracked(const Tensor<T>& a, const Rest&... rest) {
  return a.tracked() || any_tracked(rest...);
}

// Splits [..., m, k] into (batch, m, k); batch == 1 for 2-D.
inline void batched_dims(const std::vector<int>& shape, size_t& batch, int& rows, int& cols) {
  rows = shape[shape.size() - 2];
  cols = shape[shape.size() - 1];
  batch = 1;
  for (size_t i = 0; i + 2 < shape.size(); ++i) batch *= static_cast<size_t>(shape[i]);
}

}  // namespace detail

// Matrix product a [..., m, k] x b [k, n] or [..., k, n]. When b is 2-D it is
// shared across a's batch; otherwise leading dimensions must match exactly.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeError("matmul: operands must have rank >= 2, got " + detail::shape_str(a.shape()) +
                     " and " + detail::shape_str(b.shape()));
  const bool b_shared = b.rank() == 2 && a.rank() >= 2;
  if (!b_shared) {
    if (a.rank() != b.rank())
      throw ShapeError("matmul: incompatible shapes " + detail::shape_str(a.shape()) + " and " +
                       detail::shape_str(b.shape()));
    for (int i = 0; i + 2 < a.rank(); ++i)
      if (a.dim(i) != b.dim(i))
        throw ShapeError("matmul: incompatible shapes " + detail::shape_str(a.shape()) + " and " +
                         detail::shape_str(b.shape()));
  }

  size_t batch;
  int m, k;
  detail::batched_dims(a.shape(), batch, m, k);
  const int bk = b.dim(b.rank() - 2);
  const int n = b.dim(b.rank() - 1);
  if (k != bk)
    throw ShapeError("matmul: incompatible shapes " + detail::shape_str(a.shape()) + " and " +
                     detail::shape_str(b.shape()));

  std::vector<int> out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  Tensor<T> out = Tensor<T>::zeros(out_shape);

  const size_t a_stride = static_cast<size_t>(m) * k;
  const size_t b_stride = b_shared ? 0 : static_cast<size_t>(k) * n;
  const size_t c_stride = static_cast<size_t>(m) * n;
  for (size_t bi = 0; bi < batch; ++bi)
    detail::gemm_nn(m, k, n, a.ptr() + bi * a_stride, b.ptr() + bi * b_stride,
                    out.ptr() + bi * c_stride);

  if (detail::any_tracked(a, b)) {
    auto ad = a.data_handle(), bd = b.data_handle();
    auto ag = a.grad_handle(), bg = b.grad_handle();
    auto og = out.grad_handle_alloc();
    out.attach_node({a, b}, [=]() {
      const T* go = og->data();
      for (size_t bi = 0; bi < batch; ++bi) {
        if (ag)
          detail::gemm_nt(m, n, k, go + bi * c_stride, bd->data() + bi * b_stride,
                          ag->data() + bi * a_stride);
        if (bg)
          detail::gemm_tn(m, k, n, ad->data() + bi * a_stride, go + bi * c_stride,
                          bg->data() + bi * b_stride);
      }
    });
  }
  return out;
}

// Permutes axes; perm must be a permutation of 0..rank-1.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x, const std::vector<int>& perm) {
  if (static_cast<int>(perm.size()) != x.rank())
    throw ShapeError("transpose: permutation size " + std::to_string(perm.size()) +
                     " does not match rank of " + detail::shape_str(x.shape()));
  const int r = x.rank();
  std::vector<int> out_shape(r);
  for (int i = 0; i < r; ++i) out_shape[i] = x.dim(perm[i]);

  std::vector<size_t> in_strides(r, 1), out_strides(r, 1);
  for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * static_cast<size_t>(x.dim(i + 1));
  for (int i = r - 2; i >= 0; --i) out_strides[i] = out_strides[i + 1] * static_cast<size_t>(out_shape[i + 1]);

  // out flat index -> in flat index, precomputed once and reused by backward
  auto map = std::make_shared<std::vector<size_t>>(x.numel());
  {
    std::vector<int> idx(r, 0);
    for (size_t o = 0; o < x.numel(); ++o) {
      size_t in_flat = 0;
      for (int i = 0; i < r; ++i) in_flat += static_cast<size_t>(idx[i]) * in_strides[perm[i]];
      (*map)[o] = in_flat;
      for (int i = r - 1; i >= 0; --i) {
        if (++idx[i] < out_shape[i]) break;
        idx[i] = 0;
      }
    }
  }

  Tensor<T> out = Tensor<T>::zeros(out_shape);
  for (size_t o = 0; o < x.numel(); ++o) out.values()[o] = x.values()[(*map)[o]];

  if (x.tracked()) {
    auto xg = x.grad_handle();
    auto og = out.grad_handle_alloc();
    out.attach_node({x}, [xg, og, map]() {
      for (size_t o = 0; o < og->size(); ++o) (*xg)[(*map)[o]] += (*og)[o];
    });
  }
  return out;
}

// Row-major reinterpretation; shares the data buffer.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<int> new_shape) {
  if (detail::numel_of(new_shape) != x.numel())
    throw ShapeError("reshape: cannot view " + detail::shape_str(x.shape()) + " as " +
                     detail::shape_str(new_shape));
  Tensor<T> out = Tensor<T>::view_of(x, std::move(new_shape));
  if (x.tracked()) {
    auto xg = x.grad_handle();
    auto og = out.grad_handle_alloc();
    out.attach_node({x}, [xg, og]() {
      for (size_t i = 0; i < og->size(); ++i) (*xg)[i] += (*og)[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shape mismatch " + detail::shape_str(a.shape()) + " vs " +
                     detail::shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (size_t i = 0; i < out.numel(); ++i) out.values()[i] = a.values()[i] + b.values()[i];
  if (detail::any_tracked(a, b)) {
    auto ag = a.grad_handle(), bg = b.grad_handle(), og = out.grad_handle_alloc();
    out.attach_node({a, b}, [ag, bg, og]() {
      for (size_t i = 0; i < og->size(); ++i) {
        if (ag) (*ag)[i] += (*og)[i];
        if (bg) (*bg)[i] += (*og)[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: shape mismatch " + detail::shape_str(a.shape()) + " vs " +
                     detail::shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (size_t i = 0; i < out.numel(); ++i) out.values()[i] = a.values()[i] * b.values()[i];
  if (detail::any_tracked(a, b)) {
    auto ad = a.data_handle(), bd = b.data_handle();
    auto ag = a.grad_handle(), bg = b.grad_handle(), og = out.grad_handle_alloc();
    out.attach_node({a, b}, [ad, bd, ag, bg, og]() {
      for (size_t i = 0; i < og->size(); ++i) {
        if (ag) (*ag)[i] += (*og)[i] * (*bd)[i];
        if (bg) (*bg)[i] += (*og)[i] * (*ad)[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (size_t i = 0; i < out.numel(); ++i) out.values()[i] = x.values()[i] * c;
  if (x.tracked()) {
    auto xg = x.grad_handle();
    auto og = out.grad_handle_alloc();
    out.attach_node({x}, [xg, og, c]() {
      for (size_t i = 0; i < og->size(); ++i) (*xg)[i] += (*og)[i] * c;
    });
  }
  return out;
}

// x [..., h] + bias [h], broadcast over leading dimensions.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (bias.rank() != 1 || x.rank() < 1 || x.dim(x.rank() - 1) != bias.dim(0))
    throw ShapeError("add_bias: shape mismatch " + detail::shape_str(x.shape()) + " vs " +
                     detail::shape_str(bias.shape()));
  const size_t h = static_cast<size_t>(bias.dim(0));
  const size_t rows = x.numel() / h;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (size_t r = 0; r < rows; ++r)
    for (size_t j = 0; j < h; ++j) out.values()[r * h + j] = x.values()[r * h + j] + bias.values()[j];
  if (detail::any_tracked(x, bias)) {
    auto xg = x.grad_handle(), bg = bias.grad_handle(), og = out.grad_handle_alloc();
    out.attach_node({x, bias}, [xg, bg, og, rows, h]() {
      for (size_t r = 0; r < rows; ++r)
        for (size_t j = 0; j < h; ++j) {
          const T g = (*og)[r * h + j];
          if (xg) (*xg)[r * h + j] += g;
          if (bg) (*bg)[j] += g;
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (size_t i = 0; i < out.numel(); ++i) {
    const T v = x.values()[i];
    out.values()[i] = v * detail::sigmoid(v);
  }
  if (x.tracked()) {
    auto xd = x.data_handle();
    auto xg = x.grad_handle();
    auto og = out.grad_handle_alloc();
    out.attach_node({x}, [xd, xg, og]() {
      for (size_t i = 0; i < og->size(); ++i) {
        const T v = (*xd)[i];
        const T s = detail::sigmoid(v);
        (*xg)[i] += (*og)[i] * (s + v * s * (T(1) - s));
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (size_t i = 0; i < out.numel(); ++i) out.values()[i] = x.values()[i] > T(0) ? x.values()[i] : T(0);
  if (x.tracked()) {
    auto xd = x.data_handle();
    auto xg = x.grad_handle();
    auto og = out.grad_handle_alloc();
    out.attach_node({x}, [xd, xg, og]() {
      for (size_t i = 0; i < og->size(); ++i)
        if ((*xd)[i] > T(0)) (*xg)[i] += (*og)[i];
    });
  }
  return out;
}

// Softmax over the last axis, max-subtracted for stability.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.rank() < 1 || x.dim(x.rank() - 1) < 1)
    throw ShapeError("softmax: needs a non-empty last axis, got " + detail::shape_str(x.shape()));
  const size_t c = static_cast<size_t>(x.dim(x.rank() - 1));
  const size_t rows = x.numel() / c;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (size_t r = 0; r < rows; ++r) {
    const T* in = x.ptr() + r * c;
    T* o = out.ptr() + r * c;
    T mx = in[0];
    for (size_t j = 1; j < c; ++j) mx = std::max(mx, in[j]);
    T sum = T(0);
    for (size_t j = 0; j < c; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    for (size_t j = 0; j < c; ++j) o[j] /= sum;
  }
  if (x.tracked()) {
    auto od = out.data_handle();
    auto xg = x.grad_handle();
    auto og = out.grad_handle_alloc();
    out.attach_node({x}, [od, xg, og, rows, c]() {
      for (size_t r = 0; r < rows; ++r) {
        const T* y = od->data() + r * c;
        const T* go = og->data() + r * c;
        T dot = T(0);
        for (size_t j = 0; j < c; ++j) dot += go[j] * y[j];
        for (size_t j = 0; j < c; ++j) (*xg)[r * c + j] += y[j] * (go[j] - dot);
      }
    });
  }
  return out;
}

// x / sqrt(mean(x^2) + eps) * gain, over the last axis.
template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, T eps) {
  if (eps <= T(0)) throw ValueError("rms_norm: eps must be positive");
  if (gain.rank() != 1 || x.dim(x.rank() - 1) != gain.dim(0))
    throw ShapeError("rms_norm: gain " + detail::shape_str(gain.shape()) + " does not match " +
                     detail::shape_str(x.shape()));
  const size_t h = static_cast<size_t>(gain.dim(0));
  const size_t rows = x.numel() / h;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto inv_rms = std::make_shared<std::vector<T>>(rows);
  for (size_t r = 0; r < rows; ++r) {
    const T* in = x.ptr() + r * h;
    T ms = T(0);
    for (size_t j = 0; j < h; ++j) ms += in[j] * in[j];
    ms /= static_cast<T>(h);
    const T inv = T(1) / std::sqrt(ms + eps);
    (*inv_rms)[r] = inv;
    T* o = out.ptr() + r * h;
    for (size_t j = 0; j < h; ++j) o[j] = in[j] * inv * gain.values()[j];
  }
  if (detail::any_tracked(x, gain)) {
    auto xd = x.data_handle(), gd = gain.data_handle();
    auto xg = x.grad_handle(), gg = gain.grad_handle();
    auto og = out.grad_handle_alloc();
    out.attach_node({x, gain}, [xd, gd, xg, gg, og, inv_rms, rows, h]() {
      for (size_t r = 0; r < rows; ++r) {
        const T* in = xd->data() + r * h;
        const T* go = og->data() + r * h;
        const T inv = (*inv_rms)[r];
        if (gg)
          for (size_t j = 0; j < h; ++j) (*gg)[j] += go[j] * in[j] * inv;
        if (xg) {
          T dot = T(0);  // sum_i go_i * gain_i * x_i
          for (size_t j = 0; j < h; ++j) dot += go[j] * (*gd)[j] * in[j];
          const T k = inv * inv * inv * dot / static_cast<T>(h);
          for (size_t j = 0; j < h; ++j) (*xg)[r * h + j] += go[j] * (*gd)[j] * inv - in[j] * k;
        }
      }
    });
  }
  return out;
}

// Per-sample mean of x [b, t, h] over positions with mask[b, t] == 1.
template <typename T>
Tensor<T> masked_mean(const Tensor<T>& x, const Tensor<T>& mask) {
  if (x.rank() != 3 || mask.rank() != 2 || x.dim(0) != mask.dim(0) || x.dim(1) != mask.dim(1))
    throw ShapeError("masked_mean: x " + detail::shape_str(x.shape()) + " vs mask " +
                     detail::shape_str(mask.shape()));
  const int b = x.dim(0), t = x.dim(1), h = x.dim(2);
  for (size_t i = 0; i < mask.numel(); ++i)
    if (mask.values()[i] != T(0) && mask.values()[i] != T(1))
      throw ValueError("masked_mean: mask entries must be 0 or 1");
  Tensor<T> out = Tensor<T>::zeros({b, h});
  auto counts = std::make_shared<std::vector<T>>(static_cast<size_t>(b), T(0));
  for (int i = 0; i < b; ++i) {
    T cnt = T(0);
    for (int j = 0; j < t; ++j) cnt += mask.values()[static_cast<size_t>(i) * t + j];
    if (cnt == T(0))
      throw DegenerateInputError("masked_mean: mask row " + std::to_string(i) + " is all zeros");
    (*counts)[static_cast<size_t>(i)] = cnt;
    for (int j = 0; j < t; ++j) {
      if (mask.values()[static_cast<size_t>(i) * t + j] == T(0)) continue;
      const T* row = x.ptr() + (static_cast<size_t>(i) * t + j) * h;
      T* o = out.ptr() + static_cast<size_t>(i) * h;
      for (int d = 0; d < h; ++d) o[d] += row[d] / cnt;
    }
  }
  if (x.tracked()) {
    auto md = mask.data_handle();
    auto xg = x.grad_handle();
    auto og = out.grad_handle_alloc();
    out.attach_node({x, mask}, [md, xg, og, counts, b, t, h]() {
      for (int i = 0; i < b; ++i) {
        const T inv = T(1) / (*counts)[static_cast<size_t>(i)];
        for (int j = 0; j < t; ++j) {
          if ((*md)[static_cast<size_t>(i) * t + j] == T(0)) continue;
          for (int d = 0; d < h; ++d)
            (*xg)[(static_cast<size_t>(i) * t + j) * h + d] +=
                (*og)[static_cast<size_t>(i) * h + d] * inv;
        }
      }
    });
  }
  return out;
}

// Inverted dropout: training zeroes entries with probability p and scales
// survivors by 1/(1-p); inference is the identity.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw ValueError("dropout: p must be in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  const T keep_scale = T(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (size_t i = 0; i < x.numel(); ++i) {
    const T m = rng.uniform() < p ? T(0) : keep_scale;
    (*mask)[i] = m;
    out.values()[i] = x.values()[i] * m;
  }
  if (x.tracked()) {
    auto xg = x.grad_handle();
    auto og = out.grad_handle_alloc();
    out.attach_node({x}, [xg, og, mask]() {
      for (size_t i = 0; i < og->size(); ++i) (*xg)[i] += (*og)[i] * (*mask)[i];
    });
  }
  return out;
}

// Row gather: table [v, h], ids flat [b*t] -> [b, t, h].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int>& ids, int b, int t) {
  if (table.rank() != 2)
    throw ShapeError("embedding: table must be 2-D, got " + detail::shape_str(table.shape()));
  if (static_cast<size_t>(b) * t != ids.size())
    throw ShapeError("embedding: ids length " + std::to_string(ids.size()) + " != " +
                     std::to_string(b) + "*" + std::to_string(t));
  const int v = table.dim(0), h = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= v)
      throw VocabularyError("embedding: token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(v));
  Tensor<T> out = Tensor<T>::zeros({b, t, h});
  for (size_t i = 0; i < ids.size(); ++i) {
    const T* row = table.ptr() + static_cast<size_t>(ids[i]) * h;
    std::copy(row, row + h, out.ptr() + i * h);
  }
  if (table.tracked()) {
    auto tg = table.grad_handle();
    auto og = out.grad_handle_alloc();
    auto idv = std::make_shared<std::vector<int>>(ids);
    out.attach_node({table}, [tg, og, idv, h]() {
      for (size_t i = 0; i < idv->size(); ++i)
        for (int d = 0; d < h; ++d)
          (*tg)[static_cast<size_t>((*idv)[i]) * h + d] += (*og)[i * h + d];
    });
  }
  return out;
}

// Grouped-query expansion: [b, kv, t, d] -> [b, kv*rep, t, d], query head
// q uses key/value head q / rep.
template <typename T>
Tensor<T> repeat_heads(const Tensor<T>& x, int rep) {
  if (x.rank() != 4) throw ShapeError("repeat_heads: expected rank 4, got " + detail::shape_str(x.shape()));
  if (rep == 1) return x;
  const int b = x.dim(0), kv = x.dim(1), t = x.dim(2), d = x.dim(3);
  Tensor<T> out = Tensor<T>::zeros({b, kv * rep, t, d});
  const size_t head_sz = static_cast<size_t>(t) * d;
  for (int i = 0; i < b; ++i)
    for (int q = 0; q < kv * rep; ++q) {
      const T* src = x.ptr() + (static_cast<size_t>(i) * kv + q / rep) * head_sz;
      T* dst = out.ptr() + (static_cast<size_t>(i) * kv * rep + q) * head_sz;
      std::copy(src, src + head_sz, dst);
    }
  if (x.tracked()) {
    auto xg = x.grad_handle();
    auto og = out.grad_handle_alloc();
    out.attach_node({x}, [xg, og, b, kv, rep, t, d, head_sz]() {
      for (int i = 0; i < b; ++i)
        for (int q = 0; q < kv * rep; ++q) {
          const T* go = og->data() + (static_cast<size_t>(i) * kv * rep + q) * head_sz;
          T* dst = xg->data() + (static_cast<size_t>(i) * kv + q / rep) * head_sz;
          for (size_t e = 0; e < head_sz; ++e) dst[e] += go[e];
        }
    });
  }
  return out;
}

// Precomputed rotation table for a span of positions.
template <typename T>
struct RopeTable {
  int positions = 0;
  int half = 0;           // head_dim / 2
  std::vector<T> cos_v;   // [positions x half]
  std::vector<T> sin_v;
};

// Half-split rotary embedding on x [b, heads, t, head_dim]: feature halves
// (a, b) become (a cos - b sin, a sin + b cos) per position.
template <typename T>
Tensor<T> apply_rope(const Tensor<T>& x, const RopeTable<T>& rope) {
  if (x.rank() != 4) throw ShapeError("apply_rope: expected rank 4, got " + detail::shape_str(x.shape()));
  const int b = x.dim(0), heads = x.dim(1), t = x.dim(2), hd = x.dim(3);
  if (hd % 2 != 0) throw ConfigError("apply_rope: head_dim must be even, got " + std::to_string(hd));
  const int half = hd / 2;
  if (rope.half != half || rope.positions < t)
    throw ShapeError("apply_rope: rope table covers " + std::to_string(rope.positions) +
                     " positions x " + std::to_string(rope.half) + " pairs, need " + std::to_string(t) +
                     " x " + std::to_string(half));
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto cs = std::make_shared<std::vector<T>>(rope.cos_v);
  auto sn = std::make_shared<std::vector<T>>(rope.sin_v);
  for (int i = 0; i < b * heads; ++i)
    for (int m = 0; m < t; ++m) {
      const T* in = x.ptr() + (static_cast<size_t>(i) * t + m) * hd;
      T* o = out.ptr() + (static_cast<size_t>(i) * t + m) * hd;
      const T* c = cs->data() + static_cast<size_t>(m) * half;
      const T* s = sn->data() + static_cast<size_t>(m) * half;
      for (int j = 0; j < half; ++j) {
        o[j] = in[j] * c[j] - in[j + half] * s[j];
        o[j + half] = in[j] * s[j] + in[j + half] * c[j];
      }
    }
  if (x.tracked()) {
    auto xg = x.grad_handle();
    auto og = out.grad_handle_alloc();
    out.attach_node({x}, [xg, og, cs, sn, b, heads, t, hd, half]() {
      for (int i = 0; i < b * heads; ++i)
        for (int m = 0; m < t; ++m) {
          const T* go = og->data() + (static_cast<size_t>(i) * t + m) * hd;
          T* gx = xg->data() + (static_cast<size_t>(i) * t + m) * hd;
          const T* c = cs->data() + static_cast<size_t>(m) * half;
          const T* s = sn->data() + static_cast<size_t>(m) * half;
          for (int j = 0; j < half; ++j) {
            gx[j] += go[j] * c[j] + go[j + half] * s[j];
            gx[j + half] += -go[j] * s[j] + go[j + half] * c[j];
          }
        }
    });
  }
  return out;
}

inline constexpr double kAttentionMaskBias = -1e9;

// scores [b, heads, tq, tk] plus a large negative bias at padding columns
// (mask[b, tk] == 0) and, when causal, at future columns tk > tq.
template <typename T>
Tensor<T> attention_bias_add(const Tensor<T>& scores, const Tensor<T>& mask, bool causal) {
  if (scores.rank() != 4 || mask.rank() != 2 || scores.dim(0) != mask.dim(0) ||
      scores.dim(3) != mask.dim(1))
    throw ShapeError("attention_bias_add: scores " + detail::shape_str(scores.shape()) +
                     " vs mask " + detail::shape_str(mask.shape()));
  const int b = scores.dim(0), heads = scores.dim(1), tq = scores.dim(2), tk = scores.dim(3);
  Tensor<T> out = Tensor<T>::zeros(scores.shape());
  const T bias = static_cast<T>(kAttentionMaskBias);
  for (int i = 0; i < b; ++i)
    for (int hh = 0; hh < heads; ++hh)
      for (int q = 0; q < tq; ++q) {
        const size_t base = ((static_cast<size_t>(i) * heads + hh) * tq + q) * tk;
        for (int k = 0; k < tk; ++k) {
          const bool masked =
              mask.values()[static_cast<size_t>(i) * tk + k] == T(0) || (causal && k > q);
          out.values()[base + k] = scores.values()[base + k] + (masked ? bias : T(0));
        }
      }
  if (scores.tracked()) {
    auto sg = scores.grad_handle();
    auto og = out.grad_handle_alloc();
    out.attach_node({scores, mask}, [sg, og]() {
      for (size_t i = 0; i < og->size(); ++i) (*sg)[i] += (*og)[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros({1});
  T acc = T(0);
  for (size_t i = 0; i < x.numel(); ++i) acc += x.values()[i];
  out.values()[0] = acc;
  if (x.tracked()) {
    auto xg = x.grad_handle();
    auto og = out.grad_handle_alloc();
    out.attach_node({x}, [xg, og]() {
      for (size_t i = 0; i < xg->size(); ++i) (*xg)[i] += (*og)[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  const T inv = T(1) / static_cast<T>(x.numel());
  Tensor<T> out = Tensor<T>::zeros({1});
  T acc = T(0);
  for (size_t i = 0; i < x.numel(); ++i) acc += x.values()[i];
  out.values()[0] = acc * inv;
  if (x.tracked()) {
    auto xg = x.grad_handle();
    auto og = out.grad_handle_alloc();
    out.attach_node({x}, [xg, og, inv]() {
      for (size_t i = 0; i < xg->size(); ++i) (*xg)[i] += (*og)[0] * inv;
    });
  }
  return out;
}

// Mean over the batch of -log softmax(logits)[label], in the log-sum-exp
// form; for two classes this equals binary cross-entropy on the positive
// class probability.
template <typename T>
Tensor<T> sparse_categorical_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2)
    throw ShapeError("cross_entropy: logits must be [batch x classes], got " +
                     detail::shape_str(logits.shape()));
  const int b = logits.dim(0), c = logits.dim(1);
  if (static_cast<size_t>(b) != labels.size())
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(b));
  for (int y : labels)
    if (y < 0 || y >= c)
      throw LabelError("cross_entropy: label " + std::to_string(y) + " outside " + std::to_string(c) +
                       " classes");
  auto probs = std::make_shared<std::vector<T>>(logits.numel());
  T total = T(0);
  for (int i = 0; i < b; ++i) {
    const T* z = logits.ptr() + static_cast<size_t>(i) * c;
    T mx = z[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, z[j]);
    T sum = T(0);
    for (int j = 0; j < c; ++j) {
      (*probs)[static_cast<size_t>(i) * c + j] = std::exp(z[j] - mx);
      sum += (*probs)[static_cast<size_t>(i) * c + j];
    }
    for (int j = 0; j < c; ++j) (*probs)[static_cast<size_t>(i) * c + j] /= sum;
    total += std::log(sum) - (z[labels[static_cast<size_t>(i)]] - mx);
  }
  Tensor<T> out = Tensor<T>::zeros({1});
  out.values()[0] = total / static_cast<T>(b);
  if (logits.tracked()) {
    auto lg = logits.grad_handle();
    auto og = out.grad_handle_alloc();
    auto lab = std::make_shared<std::vector<int>>(labels);
    out.attach_node({logits}, [lg, og, probs, lab, b, c]() {
      const T g = (*og)[0] / static_cast<T>(b);
      for (int i = 0; i < b; ++i)
        for (int j = 0; j < c; ++j) {
          const T onehot = j == (*lab)[static_cast<size_t>(i)] ? T(1) : T(0);
          (*lg)[static_cast<size_t>(i) * c + j] +=
              g * ((*probs)[static_cast<size_t>(i) * c + j] - onehot);
        }
    });
  }
  return out;
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace affinity
