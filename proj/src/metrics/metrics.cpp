// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0

#include "trmqe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "trmqe/errors.hpp"

namespace trmqe {

namespace {

void check_pair(std::span<const double> x, std::span<const double> y, std::size_t min_len, const char* fn) {
  if (x.size() != y.size()) {
    throw DimensionError(std::string(fn) + ": length mismatch " + std::to_string(x.size()) + " vs " +
                         std::to_string(y.size()));
  }
  if (x.size() < min_len) {
    throw ContractError(std::string(fn) + ": needs at least " + std::to_string(min_len) + " values");
  }
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y, 2, "pearson");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedMetricError();
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y, 2, "spearman");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  return pearson(rx, ry);
}

double mae(std::span<const double> pred, std::span<const double> gold) {
  check_pair(pred, gold, 1, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - gold[i]);
  return s / static_cast<double>(pred.size());
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ContractError("quantile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

ConfidenceInterval bootstrap_ci(const MetricFn& metric, std::span<const double> x, std::span<const double> y,
                                const BootstrapOptions& options) {
  check_pair(x, y, 1, "bootstrap_ci");
  if (options.resamples == 0) throw ContractError("bootstrap_ci: resamples must be positive");
  if (!(options.level > 0.0 && options.level < 1.0)) throw ContractError("bootstrap_ci: level must be in (0,1)");
  const double point = metric(x, y);  // propagates UndefinedMetricError on the full sample

  const std::size_t n = x.size();
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> idx(n);
  std::vector<double> bx(n), by(n), stats;
  stats.reserve(options.resamples);
  const std::size_t max_draws = 10 * options.resamples;
  std::size_t draws = 0, undefined = 0;
  while (stats.size() < options.resamples && draws < max_draws) {
    ++draws;
    if (options.sampler) {
      options.sampler(rng, idx);
    } else {
      for (auto& i : idx) i = pick(rng);
    }
    for (std::size_t i = 0; i < n; ++i) {
      bx[i] = x[idx[i]];
      by[i] = y[idx[i]];
    }
    try {
      stats.push_back(metric(bx, by));
    } catch (const UndefinedMetricError&) {
      ++undefined;
    }
  }
  if (static_cast<double>(undefined) > 0.9 * static_cast<double>(draws) || stats.size() < options.resamples) {
    throw UndefinedMetricError("bootstrap: " + std::to_string(undefined) + " of " + std::to_string(draws) +
                               " resamples had an undefined metric");
  }
  std::sort(stats.begin(), stats.end());
  const double alpha = 1.0 - options.level;
  ConfidenceInterval ci{quantile_sorted(stats, alpha / 2), quantile_sorted(stats, 1.0 - alpha / 2)};
  ci.low = std::min(ci.low, point);
  ci.high = std::max(ci.high, point);
  return ci;
}

}  // namespace trmqe
