// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0
//
// Mean-centred truncated SVD used to map encoder states of one width onto
// another (e.g. 1024 → 512) before they reach the model.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "trmqe/embedding_file.hpp"
#include "trmqe/matrix.hpp"

namespace trmqe {

struct SvdProjector {
  std::vector<double> mean;             // D_in
  std::vector<double> basis;            // D_in × k, row-major, orthonormal columns
  std::vector<double> singular_values;  // k, non-increasing
  std::size_t input_dim = 0;
  std::size_t k = 0;

  double basis_at(std::size_t row, std::size_t col) const { return basis[row * k + col]; }

  // (x − mean)·V_k
  FloatMatrix project(const FloatMatrix& x) const;
  // Back to D_in: y·V_kᵀ + mean.
  FloatMatrix reconstruct(const FloatMatrix& y) const;

  nlohmann::json to_json() const;
  static SvdProjector from_json(const nlohmann::json& j);
};

// Thin SVD of the centred sample; basis columns are sign-normalised so their
// largest-magnitude entry is positive. Throws RankError when k exceeds the
// numerical rank of the centred sample.
SvdProjector fit_svd(const FloatMatrix& sample, std::size_t k);

// Every token row of every example (source and translation), or a seeded
// uniform subsample of `cap` rows when there are more.
FloatMatrix sample_token_rows(std::span<const EmbeddedExample> examples, std::size_t cap = 100'000,
                              std::uint64_t seed = 0);

void project_examples(std::vector<EmbeddedExample>& examples, const SvdProjector& p);

// Optional post-processing of encoder states: each row scaled to unit L2 norm (zero rows kept).
void l2_normalize_rows(std::vector<EmbeddedExample>& examples);

}  // namespace trmqe
