// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0

#include "trmqe/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "trmqe/errors.hpp"

namespace trmqe {

namespace {

struct RawRow {
  std::size_t line = 0;
  std::string pair_id, source, translation;
  double score = 0.0;
};

FormatError line_error(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  return FormatError(path.string() + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  while (!s.empty() && (s.front() == ' ')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size() && std::isfinite(out);
}

std::vector<RawRow> read_tsv(const std::filesystem::path& path, std::istream& is) {
  std::vector<RawRow> rows;
  std::string line;
  for (std::size_t n = 1; std::getline(is, line); ++n) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (rows.empty() && n == 1 && cols.size() == 4 && cols[0] == "pair_id" && cols[3] == "score") continue;
    if (cols.size() != 4) {
      throw line_error(path, n, "expected 4 tab-separated columns, found " + std::to_string(cols.size()));
    }
    RawRow r{n, std::move(cols[0]), std::move(cols[1]), std::move(cols[2]), 0.0};
    if (r.pair_id.empty()) throw line_error(path, n, "empty pair_id");
    if (!parse_double(cols[3], r.score)) throw line_error(path, n, "score is not a finite number: '" + cols[3] + "'");
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<RawRow> read_jsonl(const std::filesystem::path& path, std::istream& is) {
  std::vector<RawRow> rows;
  std::string line;
  for (std::size_t n = 1; std::getline(is, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw line_error(path, n, std::string("invalid JSON: ") + e.what());
    }
    try {
      RawRow r;
      r.line = n;
      r.pair_id = j.at("pair_id").get<std::string>();
      r.source = j.at("source").get<std::string>();
      r.translation = j.at("translation").get<std::string>();
      if (!j.at("score").is_number()) throw line_error(path, n, "score must be a number");
      r.score = j.at("score").get<double>();
      if (!std::isfinite(r.score)) throw line_error(path, n, "score is not finite");
      if (r.pair_id.empty()) throw line_error(path, n, "empty pair_id");
      rows.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw line_error(path, n, std::string("bad record: ") + e.what());
    }
  }
  return rows;
}

}  // namespace

DatasetFormat infer_format(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".tsv" || ext == ".txt") return DatasetFormat::tsv;
  if (ext == ".jsonl" || ext == ".json") return DatasetFormat::jsonl;
  throw ConfigError("cannot infer dataset format from extension '" + ext + "'", "format");
}

ZNormalizer fit_z_normalizer(const std::vector<std::pair<std::string, double>>& pair_scores) {
  ZNormalizer z;
  for (const auto& [pair, score] : pair_scores) {
    auto& s = z[pair];
    ++s.n;
    s.mean += score;
  }
  for (auto& [_, s] : z) s.mean /= static_cast<double>(s.n);
  for (const auto& [pair, score] : pair_scores) {
    auto& s = z.at(pair);
    s.stdev += (score - s.mean) * (score - s.mean);
  }
  for (auto& [_, s] : z) s.stdev = std::sqrt(s.stdev / static_cast<double>(s.n));
  return z;
}

std::map<std::string, std::vector<std::size_t>> Dataset::by_pair() const {
  std::map<std::string, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < records.size(); ++i) out[records[i].pair_id].push_back(i);
  return out;
}

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format, ScoreKind kind,
                     const ZNormalizer* train_stats) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open dataset: " + path.string());
  const auto rows = format == DatasetFormat::tsv ? read_tsv(path, is) : read_jsonl(path, is);

  Dataset ds;
  if (kind == ScoreKind::raw) {
    if (train_stats != nullptr) {
      ds.normalizer = *train_stats;
    } else {
      std::vector<std::pair<std::string, double>> scores;
      scores.reserve(rows.size());
      for (const auto& r : rows) scores.emplace_back(r.pair_id, r.score);
      ds.normalizer = fit_z_normalizer(scores);
    }
  }

  std::set<std::string> missing, flat;
  for (const auto& r : rows) {
    double z = r.score;
    if (kind == ScoreKind::raw) {
      auto it = ds.normalizer.find(r.pair_id);
      if (it == ds.normalizer.end()) {
        missing.insert(r.pair_id);
        continue;
      }
      if (it->second.stdev > 0.0) {
        z = (r.score - it->second.mean) / it->second.stdev;
      } else {
        flat.insert(r.pair_id);
        z = 0.0;
      }
    }
    ds.records.push_back({r.pair_id, r.source, r.translation, z});
  }
  for (const auto& p : missing) {
    ds.warnings.push_back("pair '" + p + "' has no training statistics; its records were dropped");
  }
  for (const auto& p : flat) ds.warnings.push_back("pair '" + p + "' has constant raw scores; z set to 0");
  if (kind == ScoreKind::raw && train_stats != nullptr) {
    const auto groups = ds.by_pair();
    for (const auto& [p, _] : *train_stats) {
      if (!groups.count(p)) ds.warnings.push_back("pair '" + p + "' has no records in " + path.filename().string());
    }
  }
  if (rows.empty()) ds.warnings.push_back("dataset " + path.string() + " has no records");
  return ds;
}

}  // namespace trmqe
