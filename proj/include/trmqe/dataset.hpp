// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0
//
// Sentence-level QE records. Rows carry pair_id, source, translation, score;
// TSV puts them in that column order and JSONL uses the same field names.

#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace trmqe {

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

struct QeRecord {
  std::string pair_id;
  std::string source;
  std::string translation;
  double da_z = 0.0;  // z-normalised direct assessment

  double target01() const { return sigmoid(da_z); }
};

enum class DatasetFormat { tsv, jsonl };
// `z`: the score column already holds z-scores. `raw`: 0-100 DA scores to be normalised.
enum class ScoreKind { z, raw };

DatasetFormat infer_format(const std::filesystem::path& path);

struct PairStats {
  double mean = 0.0;
  double stdev = 0.0;  // population
  std::size_t n = 0;
};

using ZNormalizer = std::map<std::string, PairStats>;

// Per-pair mean/stdev over raw scores.
ZNormalizer fit_z_normalizer(const std::vector<std::pair<std::string, double>>& pair_scores);

struct Dataset {
  std::vector<QeRecord> records;
  std::vector<std::string> warnings;
  ZNormalizer normalizer;  // populated for raw scores

  std::map<std::string, std::vector<std::size_t>> by_pair() const;
};

// Raw scores are normalised with `train_stats` when given (held-out splits),
// otherwise with statistics fitted on this file. Records of a pair missing from
// the statistics are dropped with a warning. Malformed rows raise FormatError
// with the 1-based line number.
Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format, ScoreKind kind = ScoreKind::z,
                     const ZNormalizer* train_stats = nullptr);

}  // namespace trmqe
