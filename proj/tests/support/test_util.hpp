// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "trmqe/matrix.hpp"
#include "trmqe/tensor.hpp"

namespace trmqe::test {

template <typename T = double>
ag::Tensor<T> random_tensor(ag::Shape shape, std::mt19937_64& rng, double stddev = 1.0,
                            bool requires_grad = false) {
  std::normal_distribution<double> n(0.0, stddev);
  std::vector<T> data(ag::shape_numel(shape));
  for (auto& v : data) v = static_cast<T>(n(rng));
  return ag::Tensor<T>(std::move(shape), std::move(data), requires_grad);
}

inline FloatMatrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                                 double stddev = 1.0) {
  std::normal_distribution<double> n(0.0, stddev);
  FloatMatrix m(rows, cols);
  for (auto& v : m.data) v = static_cast<float>(n(rng));
  return m;
}

// sum(w ⊙ y) for a fixed random w; avoids losses whose gradient vanishes by symmetry.
inline ag::Tensor64 weighted_sum(const ag::Tensor64& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto w = random_tensor<double>(y.shape(), rng);
  return ag::sum(ag::mul(y, w));
}

}  // namespace trmqe::test
