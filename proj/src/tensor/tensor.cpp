// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0

#include "trmqe/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "trmqe/errors.hpp"

namespace trmqe::ag {

namespace {
thread_local bool t_grad_enabled = true;
thread_local testing::FaultOp t_fault_op = testing::FaultOp::none;
thread_local double t_fault_factor = 1.0;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match data length " +
                         std::to_string(data.size()));
  }
  node_ = std::make_shared<Node<T>>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  const auto& s = node_->shape;
  if (s.size() == 1) return 1;
  if (s.size() != 2) throw DimensionError("expected a 2-D tensor, got " + shape_str(s));
  return s[0];
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  const auto& s = node_->shape;
  if (s.size() == 1) return s[0];
  if (s.size() != 2) throw DimensionError("expected a 2-D tensor, got " + shape_str(s));
  return s[1];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->data, false);
}

template <typename T>
Tape<T>& Tape<T>::current() {
  static thread_local Tape tape;
  return tape;
}

template <typename T>
void Tape<T>::record(std::shared_ptr<Node<T>> output, std::function<void()> backward_fn) {
  entries_.push_back(Entry{std::move(output), std::move(backward_fn)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& root) {
  if (!root.defined() || root.numel() != 1) {
    throw ContractError("backward() requires a scalar root");
  }
  Node<T>* r = root.node();
  r->ensure_grad();
  r->grad[0] += T(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // not on a path to the root
    it->backward_fn();
  }
  entries_.clear();
}

bool grad_enabled() noexcept { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

namespace testing {

ScopedBackwardFault::ScopedBackwardFault(FaultOp op, double factor) {
  t_fault_op = op;
  t_fault_factor = factor;
}

ScopedBackwardFault::~ScopedBackwardFault() {
  t_fault_op = FaultOp::none;
  t_fault_factor = 1.0;
}

double fault_factor(FaultOp op) noexcept { return op == t_fault_op ? t_fault_factor : 1.0; }

}  // namespace testing

GradCheckResult grad_check(const std::function<Tensor64()>& f, std::vector<Tensor64>& inputs,
                           double h) {
  Tape<double>::current().clear();
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  Tensor64 out = f();
  if (out.numel() != 1) {
    Tape<double>::current().clear();
    throw ContractError("grad_check target must be scalar, got shape " + shape_str(out.shape()));
  }
  backward(out);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& in : inputs) {
    if (in.has_grad()) {
      analytic.emplace_back(in.grad().begin(), in.grad().end());
    } else {
      analytic.emplace_back(in.numel(), 0.0);
    }
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto data = inputs[i].mutable_data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double saved = data[j];
      data[j] = saved + h;
      const double fp = f().item();
      data[j] = saved - h;
      const double fm = f().item();
      data[j] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[i][j];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      if (rel > result.max_rel_error || !std::isfinite(rel)) {
        result.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
        result.worst_input = i;
        result.worst_index = j;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace trmqe::ag
