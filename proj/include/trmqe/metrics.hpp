// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0
//
// Correlation and error metrics for sentence-level QE, with percentile
// bootstrap intervals. Correlations on a constant input raise
// UndefinedMetricError rather than returning NaN.

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace trmqe {

double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);
double mae(std::span<const double> pred, std::span<const double> gold);

// 1-based ranks; tied values share the mean of the ranks they cover.
std::vector<double> average_ranks(std::span<const double> x);

using MetricFn = std::function<double(std::span<const double>, std::span<const double>)>;

struct ConfidenceInterval {
  double low = 0.0;
  double high = 0.0;
};

struct BootstrapOptions {
  std::size_t resamples = 1000;
  double level = 0.95;
  std::uint64_t seed = 0;
  // Replaces the uniform index draw; fills `indices` (size n) for one resample.
  std::function<void(std::mt19937_64&, std::vector<std::size_t>& indices)> sampler;
};

// Paired percentile bootstrap. Resamples with an undefined metric are redrawn
// (at most 10× `resamples` draws in total); more than 90% undefined draws raise
// UndefinedMetricError. The interval is widened if needed so it contains the
// full-sample estimate.
ConfidenceInterval bootstrap_ci(const MetricFn& metric, std::span<const double> x, std::span<const double> y,
                                const BootstrapOptions& options = {});

// Linear-interpolated quantile of sorted values, q in [0,1].
double quantile_sorted(std::span<const double> sorted, double q);

}  // namespace trmqe
