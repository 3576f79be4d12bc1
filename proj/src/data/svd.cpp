// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0

#include "trmqe/svd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/SVD>

#include "trmqe/errors.hpp"

namespace trmqe {

namespace {

using MatrixXdR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

SvdProjector fit_svd(const FloatMatrix& sample, std::size_t k) {
  const std::size_t n = sample.rows, d = sample.cols;
  if (k == 0) throw ContractError("fit_svd: k must be positive");
  if (n < k) throw ContractError("fit_svd: need at least k=" + std::to_string(k) + " rows, got " + std::to_string(n));
  if (k > d) throw RankError("fit_svd: k=" + std::to_string(k) + " exceeds the input width " + std::to_string(d), d);

  MatrixXdR x(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x(i, j) = sample(i, j);
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;

  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  // Inputs are single precision, so rank is judged at float resolution.
  const double tol = static_cast<double>(std::max(n, d)) * std::numeric_limits<float>::epsilon() *
                     (sv.size() > 0 ? sv(0) : 0.0);
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) rank += sv(i) > tol;
  if (k > rank) {
    throw RankError("fit_svd: k=" + std::to_string(k) + " exceeds the achievable rank " + std::to_string(rank) +
                        " of the centred sample",
                    rank);
  }

  SvdProjector p;
  p.input_dim = d;
  p.k = k;
  p.mean.assign(mu.data(), mu.data() + d);
  p.singular_values.assign(sv.data(), sv.data() + k);
  p.basis.resize(d * k);
  const Eigen::MatrixXd& v = svd.matrixV();
  for (std::size_t c = 0; c < k; ++c) {
    Eigen::Index arg = 0;
    v.col(static_cast<Eigen::Index>(c)).cwiseAbs().maxCoeff(&arg);
    const double sign = v(arg, static_cast<Eigen::Index>(c)) < 0 ? -1.0 : 1.0;
    for (std::size_t r = 0; r < d; ++r) p.basis[r * k + c] = sign * v(r, c);
  }
  return p;
}

FloatMatrix SvdProjector::project(const FloatMatrix& x) const {
  if (x.rows > 0 && x.cols != input_dim) {
    throw DimensionError("project: input width " + std::to_string(x.cols) + " does not match projector width " +
                         std::to_string(input_dim));
  }
  FloatMatrix out(x.rows, k);
  std::vector<double> centred(input_dim);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < input_dim; ++j) centred[j] = static_cast<double>(x(i, j)) - mean[j];
    for (std::size_t c = 0; c < k; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < input_dim; ++j) acc += centred[j] * basis[j * k + c];
      out(i, c) = static_cast<float>(acc);
    }
  }
  return out;
}

FloatMatrix SvdProjector::reconstruct(const FloatMatrix& y) const {
  if (y.rows > 0 && y.cols != k) {
    throw DimensionError("reconstruct: input width " + std::to_string(y.cols) + " does not match k=" +
                         std::to_string(k));
  }
  FloatMatrix out(y.rows, input_dim);
  for (std::size_t i = 0; i < y.rows; ++i) {
    for (std::size_t j = 0; j < input_dim; ++j) {
      double acc = mean[j];
      for (std::size_t c = 0; c < k; ++c) acc += static_cast<double>(y(i, c)) * basis[j * k + c];
      out(i, j) = static_cast<float>(acc);
    }
  }
  return out;
}

nlohmann::json SvdProjector::to_json() const {
  return {{"input_dim", input_dim}, {"k", k}, {"mean", mean}, {"basis", basis}, {"singular_values", singular_values}};
}

SvdProjector SvdProjector::from_json(const nlohmann::json& j) {
  SvdProjector p;
  try {
    p.input_dim = j.at("input_dim").get<std::size_t>();
    p.k = j.at("k").get<std::size_t>();
    p.mean = j.at("mean").get<std::vector<double>>();
    p.basis = j.at("basis").get<std::vector<double>>();
    p.singular_values = j.at("singular_values").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed projector: ") + e.what());
  }
  if (p.mean.size() != p.input_dim || p.basis.size() != p.input_dim * p.k || p.singular_values.size() != p.k) {
    throw FormatError("projector arrays do not match its declared dimensions");
  }
  return p;
}

FloatMatrix sample_token_rows(std::span<const EmbeddedExample> examples, std::size_t cap, std::uint64_t seed) {
  std::vector<const float*> rows;
  std::size_t d = 0;
  for (const auto& ex : examples) {
    for (const auto* m : {&ex.source, &ex.translation}) {
      if (m->rows == 0) continue;
      if (d == 0) d = m->cols;
      if (m->cols != d) throw DimensionError("sample_token_rows: inconsistent embedding widths");
      for (std::size_t r = 0; r < m->rows; ++r) rows.push_back(m->row(r).data());
    }
  }
  if (rows.size() > cap) {
    std::mt19937_64 rng(seed);
    // Partial Fisher-Yates, then restore file order so the sample is order-stable.
    std::vector<std::size_t> idx(rows.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < cap; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(cap);
    std::sort(idx.begin(), idx.end());
    std::vector<const float*> kept;
    kept.reserve(cap);
    for (std::size_t i : idx) kept.push_back(rows[i]);
    rows = std::move(kept);
  }
  FloatMatrix out(rows.size(), d);
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i], rows[i] + d, out.row(i).begin());
  return out;
}

void project_examples(std::vector<EmbeddedExample>& examples, const SvdProjector& p) {
  for (auto& ex : examples) {
    ex.source = p.project(ex.source);
    ex.translation = p.project(ex.translation);
  }
}

void l2_normalize_rows(std::vector<EmbeddedExample>& examples) {
  for (auto& ex : examples) {
    for (auto* m : {&ex.source, &ex.translation}) {
      for (std::size_t r = 0; r < m->rows; ++r) {
        auto row = m->row(r);
        double ss = 0.0;
        for (float v : row) ss += static_cast<double>(v) * v;
        if (ss == 0.0) continue;
        const double inv = 1.0 / std::sqrt(ss);
        for (auto& v : row) v = static_cast<float>(v * inv);
      }
    }
  }
}

}  // namespace trmqe
