// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "trmqe/errors.hpp"
#include "trmqe/tensor.hpp"

namespace trmqe::ag {

namespace {

using testing::FaultOp;
using testing::fault_factor;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_enabled()) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>* t) { return t->requires_grad(); });
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, bool requires_grad) {
  return Tensor<T>(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
void record(const Tensor<T>& out, std::function<void()> fn) {
  Tape<T>::current().record(out.node_ptr(), std::move(fn));
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
void require_2d(const char* op, const Tensor<T>& a) {
  if (a.dim() != 2) throw DimensionError(std::string(op) + ": expected 2-D, got " + shape_str(a.shape()));
}

// Accumulates gradient into `n` only if it participates in differentiation.
template <typename T, typename F>
void accumulate(Node<T>* n, F&& fn) {
  if (!n->requires_grad) return;
  n->ensure_grad();
  fn(n->grad);
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_2d("matmul", a);
  require_2d("matmul", b);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()));
  }
  std::vector<T> out(m * n);
  MapMat<T>(out.data(), m, n).noalias() =
      CMapMat<T>(a.data().data(), m, k) * CMapMat<T>(b.data().data(), k, n);
  const bool rg = any_requires_grad({&a, &b});
  Tensor<T> result = make_result(Shape{m, n}, std::move(out), rg);
  if (rg) {
    auto an = a.node_ptr(), bn = b.node_ptr();
    Node<T>* on = result.node();
    record(result, [an, bn, on, m, k, n] {
      const T f = static_cast<T>(fault_factor(FaultOp::matmul));
      CMapMat<T> g(on->grad.data(), m, n);
      accumulate(an.get(), [&](std::vector<T>& ga) {
        MapMat<T>(ga.data(), m, k).noalias() += f * (g * CMapMat<T>(bn->data.data(), k, n).transpose());
      });
      accumulate(bn.get(), [&](std::vector<T>& gb) {
        MapMat<T>(gb.data(), k, n).noalias() += f * (CMapMat<T>(an->data.data(), m, k).transpose() * g);
      });
    });
  }
  return result;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_2d("transpose", a);
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<T> out(m * n);
  MapMat<T>(out.data(), n, m) = CMapMat<T>(a.data().data(), m, n).transpose();
  const bool rg = any_requires_grad({&a});
  Tensor<T> result = make_result(Shape{n, m}, std::move(out), rg);
  if (rg) {
    auto an = a.node_ptr();
    Node<T>* on = result.node();
    record(result, [an, on, m, n] {
      accumulate(an.get(), [&](std::vector<T>& ga) {
        MapMat<T>(ga.data(), m, n) += CMapMat<T>(on->grad.data(), n, m).transpose();
      });
    });
  }
  return result;
}

namespace {

template <typename T, typename Fwd, typename GradA, typename GradB>
Tensor<T> binary_elementwise(const char* name, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd,
                             GradA grad_a, GradB grad_b) {
  require_same_shape(name, a, b);
  const std::size_t n = a.numel();
  std::vector<T> out(n);
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ad[i], bd[i]);
  const bool rg = any_requires_grad({&a, &b});
  Tensor<T> result = make_result(a.shape(), std::move(out), rg);
  if (rg) {
    auto an = a.node_ptr(), bn = b.node_ptr();
    Node<T>* on = result.node();
    record(result, [an, bn, on, n, grad_a, grad_b] {
      const auto& g = on->grad;
      accumulate(an.get(), [&](std::vector<T>& ga) {
        for (std::size_t i = 0; i < n; ++i) ga[i] += grad_a(g[i], an->data[i], bn->data[i]);
      });
      accumulate(bn.get(), [&](std::vector<T>& gb) {
        for (std::size_t i = 0; i < n; ++i) gb[i] += grad_b(g[i], an->data[i], bn->data[i]);
      });
    });
  }
  return result;
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary_elementwise(const Tensor<T>& x, Fwd fwd, Deriv deriv, FaultOp fault) {
  const std::size_t n = x.numel();
  std::vector<T> out(n);
  const auto xd = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(xd[i]);
  const bool rg = any_requires_grad({&x});
  Tensor<T> result = make_result(x.shape(), std::move(out), rg);
  if (rg) {
    auto xn = x.node_ptr();
    Node<T>* on = result.node();
    record(result, [xn, on, n, deriv, fault] {
      const T f = static_cast<T>(fault_factor(fault));
      accumulate(xn.get(), [&](std::vector<T>& gx) {
        for (std::size_t i = 0; i < n; ++i) gx[i] += f * on->grad[i] * deriv(xn->data[i], on->data[i]);
      });
    });
  }
  return result;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_elementwise<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T g, T, T) { return g; },
      [](T g, T, T) { return g; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_elementwise<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T g, T, T) { return g; },
      [](T g, T, T) { return -g; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_elementwise<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
      [](T g, T x, T) { return g * x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary_elementwise<T>(
      a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; }, FaultOp::none);
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row) {
  const std::size_t m = a.rows(), n = a.cols();
  if (row.numel() != n) {
    throw DimensionError("add_row: row " + shape_str(row.shape()) + " does not match " +
                         shape_str(a.shape()));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  const auto rd = row.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += rd[j];
  const bool rg = any_requires_grad({&a, &row});
  Tensor<T> result = make_result(a.shape(), std::move(out), rg);
  if (rg) {
    auto an = a.node_ptr(), rn = row.node_ptr();
    Node<T>* on = result.node();
    record(result, [an, rn, on, m, n] {
      const auto& g = on->grad;
      accumulate(an.get(), [&](std::vector<T>& ga) {
        for (std::size_t i = 0; i < m * n; ++i) ga[i] += g[i];
      });
      accumulate(rn.get(), [&](std::vector<T>& gr) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
      });
    });
  }
  return result;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  const bool rg = any_requires_grad({&a});
  Tensor<T> result = make_result(Shape{1}, std::vector<T>{s}, rg);
  if (rg) {
    auto an = a.node_ptr();
    Node<T>* on = result.node();
    record(result, [an, on] {
      accumulate(an.get(), [&](std::vector<T>& ga) {
        for (auto& v : ga) v += on->grad[0];
      });
    });
  }
  return result;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary_elementwise<T>(
      x,
      [](T v) {
        if (v >= 0) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); }, FaultOp::sigmoid);
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  constexpr T inv_sqrt_2pi = static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return unary_elementwise<T>(
      x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
        return cdf + v * pdf;
      },
      FaultOp::gelu);
}

namespace {

template <typename T>
void softmax_inplace(T* row, std::size_t n) {
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
  T s = 0;
  for (std::size_t j = 0; j < n; ++j) {
    row[j] = std::exp(row[j] - mx);
    s += row[j];
  }
  const T inv = T(1) / s;
  for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
}

}  // namespace

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, T scale_factor) {
  if (x.dim() == 0 || x.numel() == 0) throw DimensionError("softmax_rows: empty input");
  const std::size_t n = x.shape().back();
  const std::size_t m = x.numel() / n;
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= scale_factor;
  for (std::size_t i = 0; i < m; ++i) softmax_inplace(out.data() + i * n, n);
  const bool rg = any_requires_grad({&x});
  Tensor<T> result = make_result(x.shape(), std::move(out), rg);
  if (rg) {
    auto xn = x.node_ptr();
    Node<T>* on = result.node();
    record(result, [xn, on, m, n, scale_factor] {
      const T f = static_cast<T>(fault_factor(FaultOp::softmax));
      accumulate(xn.get(), [&](std::vector<T>& gx) {
        for (std::size_t i = 0; i < m; ++i) {
          const T* y = on->data.data() + i * n;
          const T* g = on->grad.data() + i * n;
          T dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
          for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += f * scale_factor * y[j] * (g[j] - dot);
        }
      });
    });
  }
  return result;
}

template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, T eps) {
  const std::size_t n = x.shape().back();
  if (gain.numel() != n) {
    throw DimensionError("rms_norm: gain " + shape_str(gain.shape()) + " vs input " +
                         shape_str(x.shape()));
  }
  const std::size_t m = x.numel() / n;
  std::vector<T> out(x.numel());
  std::vector<T> inv_rms(m);
  const auto xd = x.data(), gd = gain.data();
  for (std::size_t i = 0; i < m; ++i) {
    T ss = 0;
    for (std::size_t j = 0; j < n; ++j) ss += xd[i * n + j] * xd[i * n + j];
    const T denom = std::sqrt(ss / static_cast<T>(n) + eps);
    inv_rms[i] = denom > T(0) ? T(1) / denom : T(0);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xd[i * n + j] * inv_rms[i] * gd[j];
  }
  const bool rg = any_requires_grad({&x, &gain});
  Tensor<T> result = make_result(x.shape(), std::move(out), rg);
  if (rg) {
    auto xn = x.node_ptr(), gn = gain.node_ptr();
    Node<T>* on = result.node();
    record(result, [xn, gn, on, m, n, inv_rms = std::move(inv_rms)] {
      const T f = static_cast<T>(fault_factor(FaultOp::rms_norm));
      const auto& g = on->grad;
      const auto& xd = xn->data;
      const auto& gd = gn->data;
      accumulate(gn.get(), [&](std::vector<T>& gg) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gg[j] += f * g[i * n + j] * xd[i * n + j] * inv_rms[i];
      });
      accumulate(xn.get(), [&](std::vector<T>& gx) {
        for (std::size_t i = 0; i < m; ++i) {
          T dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * gd[j] * xd[i * n + j] * inv_rms[i];
          dot /= static_cast<T>(n);
          for (std::size_t j = 0; j < n; ++j) {
            const T xhat = xd[i * n + j] * inv_rms[i];
            gx[i * n + j] += f * inv_rms[i] * (g[i * n + j] * gd[j] - xhat * dot);
          }
        }
      });
    });
  }
  return result;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  require_2d("slice_rows", x);
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (begin + count > m) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of range for " + shape_str(x.shape()));
  }
  std::vector<T> out(x.data().begin() + begin * n, x.data().begin() + (begin + count) * n);
  const bool rg = any_requires_grad({&x});
  Tensor<T> result = make_result(Shape{count, n}, std::move(out), rg);
  if (rg) {
    auto xn = x.node_ptr();
    Node<T>* on = result.node();
    record(result, [xn, on, begin, count, n] {
      accumulate(xn.get(), [&](std::vector<T>& gx) {
        for (std::size_t i = 0; i < count * n; ++i) gx[begin * n + i] += on->grad[i];
      });
    });
  }
  return result;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  require_2d("slice_cols", x);
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (begin + count > n) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of range for " + shape_str(x.shape()));
  }
  std::vector<T> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(x.data().begin() + i * n + begin, count, out.begin() + i * count);
  const bool rg = any_requires_grad({&x});
  Tensor<T> result = make_result(Shape{m, count}, std::move(out), rg);
  if (rg) {
    auto xn = x.node_ptr();
    Node<T>* on = result.node();
    record(result, [xn, on, begin, count, m, n] {
      accumulate(xn.get(), [&](std::vector<T>& gx) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < count; ++j) gx[i * n + begin + j] += on->grad[i * count + j];
      });
    });
  }
  return result;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  std::vector<RowRef> refs;
  for (std::uint32_t p = 0; p < parts.size(); ++p)
    for (std::size_t r = 0; r < parts[p].rows(); ++r) refs.push_back({p, r});
  return gather_rows(parts, refs);
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    }
    offsets.push_back(total);
    total += p.cols();
  }
  std::vector<T> out(m * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t c = parts[k].cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(parts[k].data().begin() + i * c, c, out.begin() + i * total + offsets[k]);
  }
  bool rg = false;
  if (grad_enabled())
    for (const auto& p : parts) rg = rg || p.requires_grad();
  Tensor<T> result = make_result(Shape{m, total}, std::move(out), rg);
  if (rg) {
    std::vector<std::shared_ptr<Node<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node_ptr());
    Node<T>* on = result.node();
    record(result, [nodes, on, offsets, m, total] {
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        const std::size_t c = nodes[k]->data.size() / m;
        accumulate(nodes[k].get(), [&](std::vector<T>& gp) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j) gp[i * c + j] += on->grad[i * total + offsets[k] + j];
        });
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> gather_rows(const std::vector<Tensor<T>>& sources, const std::vector<RowRef>& refs) {
  if (sources.empty()) throw DimensionError("gather_rows: no sources");
  const std::size_t n = sources.front().cols();
  for (const auto& s : sources) {
    if (s.cols() != n) {
      throw DimensionError("gather_rows: column mismatch " + shape_str(sources.front().shape()) +
                           " vs " + shape_str(s.shape()));
    }
  }
  std::vector<T> out(refs.size() * n);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& ref = refs[i];
    if (ref.source >= sources.size() || ref.row >= sources[ref.source].rows()) {
      throw DimensionError("gather_rows: reference out of range");
    }
    std::copy_n(sources[ref.source].data().begin() + ref.row * n, n, out.begin() + i * n);
  }
  bool rg = false;
  if (grad_enabled())
    for (const auto& s : sources) rg = rg || s.requires_grad();
  Tensor<T> result = make_result(Shape{refs.size(), n}, std::move(out), rg);
  if (rg) {
    std::vector<std::shared_ptr<Node<T>>> nodes;
    for (const auto& s : sources) nodes.push_back(s.node_ptr());
    Node<T>* on = result.node();
    record(result, [nodes, on, refs, n] {
      for (std::size_t i = 0; i < refs.size(); ++i) {
        Node<T>* src = nodes[refs[i].source].get();
        if (!src->requires_grad) continue;
        src->ensure_grad();
        T* dst = src->grad.data() + refs[i].row * n;
        const T* g = on->grad.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) dst[j] += g[j];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> segment_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                            const std::vector<std::size_t>& offsets, std::size_t n_heads) {
  require_same_shape("segment_attention", q, k);
  require_same_shape("segment_attention", q, v);
  require_2d("segment_attention", q);
  const std::size_t rows = q.shape()[0], d = q.shape()[1];
  if (n_heads == 0 || d % n_heads != 0) {
    throw DimensionError("segment_attention: width " + std::to_string(d) +
                         " not divisible by head count " + std::to_string(n_heads));
  }
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != rows ||
      !std::is_sorted(offsets.begin(), offsets.end())) {
    throw DimensionError("segment_attention: offsets do not partition " + std::to_string(rows) + " rows");
  }
  const std::size_t dh = d / n_heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));

  // Attention probabilities, one len×len block per (segment, head).
  std::vector<std::vector<T>> probs;
  probs.reserve((offsets.size() - 1) * n_heads);
  std::vector<T> out(rows * d, T(0));
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const std::size_t b = offsets[s], len = offsets[s + 1] - b;
    for (std::size_t h = 0; h < n_heads; ++h) {
      std::vector<T> p(len * len);
      if (len > 0) {
        const std::size_t off = b * d + h * dh;
        CStridedMap<T> qm(q.data().data() + off, len, dh, stride);
        CStridedMap<T> km(k.data().data() + off, len, dh, stride);
        CStridedMap<T> vm(v.data().data() + off, len, dh, stride);
        MapMat<T> pm(p.data(), len, len);
        pm.noalias() = sc * (qm * km.transpose());
        for (std::size_t i = 0; i < len; ++i) softmax_inplace(p.data() + i * len, len);
        StridedMap<T>(out.data() + off, len, dh, stride).noalias() = pm * vm;
      }
      probs.push_back(std::move(p));
    }
  }

  const bool rg = any_requires_grad({&q, &k, &v});
  Tensor<T> result = make_result(Shape{rows, d}, std::move(out), rg);
  if (rg) {
    auto qn = q.node_ptr(), kn = k.node_ptr(), vn = v.node_ptr();
    Node<T>* on = result.node();
    record(result, [qn, kn, vn, on, offsets, n_heads, d, dh, sc, probs = std::move(probs)] {
      const T f = static_cast<T>(fault_factor(FaultOp::attention));
      const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));
      for (auto* n : {qn.get(), kn.get(), vn.get()})
        if (n->requires_grad) n->ensure_grad();
      RowMat<T> dp, ds;
      std::size_t idx = 0;
      for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
        const std::size_t b = offsets[s], len = offsets[s + 1] - b;
        for (std::size_t h = 0; h < n_heads; ++h, ++idx) {
          if (len == 0) continue;
          const std::size_t off = b * d + h * dh;
          CMapMat<T> pm(probs[idx].data(), len, len);
          CStridedMap<T> gm(on->grad.data() + off, len, dh, stride);
          CStridedMap<T> qm(qn->data.data() + off, len, dh, stride);
          CStridedMap<T> km(kn->data.data() + off, len, dh, stride);
          CStridedMap<T> vm(vn->data.data() + off, len, dh, stride);
          if (vn->requires_grad) {
            StridedMap<T>(vn->grad.data() + off, len, dh, stride).noalias() += f * (pm.transpose() * gm);
          }
          if (qn->requires_grad || kn->requires_grad) {
            dp.noalias() = gm * vm.transpose();
            ds.resize(static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(len));
            for (std::size_t i = 0; i < len; ++i) {
              T dot = 0;
              for (std::size_t j = 0; j < len; ++j) dot += dp(i, j) * pm(i, j);
              for (std::size_t j = 0; j < len; ++j) ds(i, j) = pm(i, j) * (dp(i, j) - dot) * sc * f;
            }
            if (qn->requires_grad)
              StridedMap<T>(qn->grad.data() + off, len, dh, stride).noalias() += ds * km;
            if (kn->requires_grad)
              StridedMap<T>(kn->grad.data() + off, len, dh, stride).noalias() += ds.transpose() * qm;
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T rate, std::mt19937_64& rng) {
  if (rate <= T(0)) return x;
  if (rate >= T(1)) throw ContractError("dropout rate must be < 1");
  const std::size_t n = x.numel();
  std::vector<T> mask(n);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const T keep_scale = T(1) / (T(1) - rate);
  for (auto& m : mask) m = u(rng) >= static_cast<double>(rate) ? keep_scale : T(0);
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x.data()[i] * mask[i];
  const bool rg = any_requires_grad({&x});
  Tensor<T> result = make_result(x.shape(), std::move(out), rg);
  if (rg) {
    auto xn = x.node_ptr();
    Node<T>* on = result.node();
    record(result, [xn, on, mask = std::move(mask)] {
      accumulate(xn.get(), [&](std::vector<T>& gx) {
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += on->grad[i] * mask[i];
      });
    });
  }
  return result;
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, std::span<const T> target) {
  const std::size_t n = pred.numel();
  if (target.size() != n) {
    throw DimensionError("mse_loss: prediction " + shape_str(pred.shape()) + " vs " +
                         std::to_string(target.size()) + " targets");
  }
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T diff = pred.data()[i] - target[i];
    s += diff * diff;
  }
  const bool rg = any_requires_grad({&pred});
  Tensor<T> result = make_result(Shape{1}, std::vector<T>{s / static_cast<T>(n)}, rg);
  if (rg) {
    auto pn = pred.node_ptr();
    Node<T>* on = result.node();
    std::vector<T> tgt(target.begin(), target.end());
    record(result, [pn, on, tgt = std::move(tgt), n] {
      accumulate(pn.get(), [&](std::vector<T>& gp) {
        const T c = T(2) * on->grad[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) gp[i] += c * (pn->data[i] - tgt[i]);
      });
    });
  }
  return result;
}

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& pred, std::span<const T> target) {
  const std::size_t n = pred.numel();
  if (target.size() != n) {
    throw DimensionError("bce_loss: prediction " + shape_str(pred.shape()) + " vs " +
                         std::to_string(target.size()) + " targets");
  }
  constexpr T eps = static_cast<T>(1e-7);
  std::vector<T> clamped(n);
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T p = std::clamp(pred.data()[i], eps, T(1) - eps);
    clamped[i] = p;
    s -= target[i] * std::log(p) + (T(1) - target[i]) * std::log(T(1) - p);
  }
  const bool rg = any_requires_grad({&pred});
  Tensor<T> result = make_result(Shape{1}, std::vector<T>{s / static_cast<T>(n)}, rg);
  if (rg) {
    auto pn = pred.node_ptr();
    Node<T>* on = result.node();
    std::vector<T> tgt(target.begin(), target.end());
    record(result, [pn, on, tgt = std::move(tgt), clamped = std::move(clamped), n] {
      accumulate(pn.get(), [&](std::vector<T>& gp) {
        const T c = on->grad[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) {
          const T p = clamped[i];
          gp[i] += c * (p - tgt[i]) / (p * (T(1) - p));
        }
      });
    });
  }
  return result;
}

#define TRMQE_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> transpose(const Tensor<T>&);                                                   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> scale(const Tensor<T>&, T);                                                    \
  template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> sum(const Tensor<T>&);                                                         \
  template Tensor<T> mean(const Tensor<T>&);                                                        \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                     \
  template Tensor<T> gelu(const Tensor<T>&);                                                        \
  template Tensor<T> softmax_rows(const Tensor<T>&, T);                                             \
  template Tensor<T> rms_norm(const Tensor<T>&, const Tensor<T>&, T);                               \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                        \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                        \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                    \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                                    \
  template Tensor<T> gather_rows(const std::vector<Tensor<T>>&, const std::vector<RowRef>&);        \
  template Tensor<T> segment_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                       const std::vector<std::size_t>&, std::size_t);               \
  template Tensor<T> dropout(const Tensor<T>&, T, std::mt19937_64&);                                \
  template Tensor<T> mse_loss(const Tensor<T>&, std::span<const T>);                                \
  template Tensor<T> bce_loss(const Tensor<T>&, std::span<const T>);

TRMQE_INSTANTIATE_OPS(float)
TRMQE_INSTANTIATE_OPS(double)

#undef TRMQE_INSTANTIATE_OPS

}  // namespace trmqe::ag
