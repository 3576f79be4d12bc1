// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// Every differentiable op appends one entry to the calling thread's tape when
// grad mode is on and at least one input requires a gradient. `backward()`
// replays the tape in reverse and clears it. Tapes are thread-local, so
// independent training runs on separate threads share no mutable state.
//
// Two scalar types are instantiated: `float` for training and `double` for
// gradient checks.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace trmqe::ag {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);
  static Tensor from_node(std::shared_ptr<Node<T>> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  // 2-D accessors; a 1-D tensor is treated as one row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const T> data() const { return node_->data; }
  // Direct writes bypass the tape: use only for initialization and optimizer steps.
  std::span<T> mutable_data() { return node_->data; }
  T item() const;
  T at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  // Fresh leaf with copied data and no history.
  Tensor detach() const;

  Node<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

template <typename T>
class Tape {
 public:
  static Tape& current();

  void record(std::shared_ptr<Node<T>> output, std::function<void()> backward_fn);
  // Seeds d(root)/d(root) = 1, runs recorded rules in reverse, clears the tape.
  void backward(const Tensor<T>& root);
  void clear() { entries_.clear(); }
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  struct Entry {
    std::shared_ptr<Node<T>> output;
    std::function<void()> backward_fn;
  };
  std::vector<Entry> entries_;
};

template <typename T>
void backward(const Tensor<T>& root) {
  Tape<T>::current().backward(root);
}

bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- ops ----------------------------------------------------------------

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
// a[m×n] + row[n] broadcast over rows.
template <typename T> Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row);
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
// Exact (erf-based) GELU.
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
// Softmax over the last dimension of scale·x, max-subtracted.
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& x, T scale_factor = T(1));
// x / sqrt(mean(x²) + eps) ⊙ gain, per row.
template <typename T> Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, T eps);

template <typename T> Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count);
template <typename T> Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);

struct RowRef {
  std::uint32_t source;
  std::size_t row;
};
// out[i] = sources[refs[i].source][refs[i].row]; all sources share the column count.
template <typename T>
Tensor<T> gather_rows(const std::vector<Tensor<T>>& sources, const std::vector<RowRef>& refs);

// Multi-head softmax attention restricted to contiguous row segments.
// `offsets` holds segment boundaries: segment i spans [offsets[i], offsets[i+1]).
template <typename T>
Tensor<T> segment_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                            const std::vector<std::size_t>& offsets, std::size_t n_heads);

// Inverted dropout; identity when rate == 0.
template <typename T> Tensor<T> dropout(const Tensor<T>& x, T rate, std::mt19937_64& rng);

// Mean over elements of (pred - target)² and binary cross-entropy; target is a constant.
template <typename T> Tensor<T> mse_loss(const Tensor<T>& pred, std::span<const T> target);
template <typename T> Tensor<T> bce_loss(const Tensor<T>& pred, std::span<const T> target);

// ---- gradient checking ----------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Max over coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|),
// numeric by central differences with step h. `f` must return a scalar.
GradCheckResult grad_check(const std::function<Tensor64()>& f, std::vector<Tensor64>& inputs,
                           double h = 1e-5);

namespace testing {

enum class FaultOp { none, matmul, gelu, rms_norm, softmax, attention, sigmoid };

// Scales the backward result of one op kind on this thread while alive.
class ScopedBackwardFault {
 public:
  ScopedBackwardFault(FaultOp op, double factor);
  ~ScopedBackwardFault();
  ScopedBackwardFault(const ScopedBackwardFault&) = delete;
  ScopedBackwardFault& operator=(const ScopedBackwardFault&) = delete;
};

double fault_factor(FaultOp op) noexcept;

}  // namespace testing

}  // namespace trmqe::ag
