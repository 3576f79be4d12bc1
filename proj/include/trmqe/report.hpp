// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-pair and pooled evaluation of quality predictions in target01 space.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trmqe/metrics.hpp"

namespace trmqe {

struct Prediction {
  std::string pair_id;
  double gold = 0.0;       // target01
  double predicted = 0.0;  // model quality
};

struct MetricSummary {
  std::size_t n = 0;
  std::optional<double> pearson, spearman, mae;
  std::optional<ConfidenceInterval> pearson_ci, spearman_ci, mae_ci;
  // Set when a correlation (or its interval) is undefined for this group.
  std::string error;
};

struct PairReport {
  std::string pair_id;
  MetricSummary metrics;
};

struct EvalReport {
  std::vector<PairReport> pairs;  // sorted by pair_id; pairs with < 2 examples are skipped
  MetricSummary overall;          // over the pooled prediction set
  // Unweighted mean over the pairs whose metric is defined.
  std::optional<double> macro_pearson, macro_spearman, macro_mae;
  std::vector<std::string> warnings;
  std::vector<Prediction> predictions;

  nlohmann::ordered_json to_json() const;
  std::string to_markdown() const;
};

MetricSummary summarize(std::span<const double> pred, std::span<const double> gold, const BootstrapOptions& boot);

EvalReport build_eval_report(std::vector<Prediction> predictions, const BootstrapOptions& boot = {});

// Columns: pair_id, gold_target01, predicted; one row per prediction, in input order.
void write_predictions_tsv(const std::filesystem::path& path, const std::vector<Prediction>& predictions);
std::vector<Prediction> read_predictions_tsv(const std::filesystem::path& path);

// Shortest round-tripping decimal representation, shared by every text artifact.
std::string format_number(double v);

}  // namespace trmqe
