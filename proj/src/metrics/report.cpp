// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0

#include "trmqe/report.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "trmqe/errors.hpp"

namespace trmqe {

std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw Error("format_number: conversion failed");
  return std::string(buf, ptr);
}

MetricSummary summarize(std::span<const double> pred, std::span<const double> gold, const BootstrapOptions& boot) {
  MetricSummary m;
  m.n = pred.size();
  m.mae = mae(pred, gold);
  m.mae_ci = bootstrap_ci(mae, pred, gold, boot);
  std::vector<std::string> errors;
  auto correlation = [&](const char* name, const MetricFn& fn, std::optional<double>& value,
                         std::optional<ConfidenceInterval>& ci) {
    try {
      value = fn(pred, gold);
      ci = bootstrap_ci(fn, pred, gold, boot);
    } catch (const UndefinedMetricError& e) {
      errors.push_back(std::string(name) + ": " + e.what());
    }
  };
  correlation("pearson", pearson, m.pearson, m.pearson_ci);
  correlation("spearman", spearman, m.spearman, m.spearman_ci);
  for (std::size_t i = 0; i < errors.size(); ++i) m.error += (i ? "; " : "") + errors[i];
  return m;
}

EvalReport build_eval_report(std::vector<Prediction> predictions, const BootstrapOptions& boot) {
  EvalReport r;
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < predictions.size(); ++i) groups[predictions[i].pair_id].push_back(i);

  std::vector<double> macro_p, macro_s, macro_m;
  for (const auto& [pair, idx] : groups) {
    if (idx.size() < 2) {
      r.warnings.push_back("pair '" + pair + "' has " + std::to_string(idx.size()) +
                           " example(s); skipped in the per-pair table");
      continue;
    }
    std::vector<double> p, g;
    for (std::size_t i : idx) {
      p.push_back(predictions[i].predicted);
      g.push_back(predictions[i].gold);
    }
    PairReport pr{pair, summarize(p, g, boot)};
    if (!pr.metrics.error.empty()) r.warnings.push_back("pair '" + pair + "': " + pr.metrics.error);
    if (pr.metrics.pearson) macro_p.push_back(*pr.metrics.pearson);
    if (pr.metrics.spearman) macro_s.push_back(*pr.metrics.spearman);
    macro_m.push_back(*pr.metrics.mae);
    r.pairs.push_back(std::move(pr));
  }
  auto mean = [](const std::vector<double>& v) -> std::optional<double> {
    if (v.empty()) return std::nullopt;
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  r.macro_pearson = mean(macro_p);
  r.macro_spearman = mean(macro_s);
  r.macro_mae = mean(macro_m);

  if (predictions.empty()) {
    r.warnings.push_back("no predictions to evaluate");
  } else {
    std::vector<double> p, g;
    for (const auto& x : predictions) {
      p.push_back(x.predicted);
      g.push_back(x.gold);
    }
    if (p.size() >= 2) {
      r.overall = summarize(p, g, boot);
      if (!r.overall.error.empty()) r.warnings.push_back("overall: " + r.overall.error);
    } else {
      r.overall.n = p.size();
      r.overall.mae = mae(p, g);
      r.overall.error = "fewer than 2 examples";
    }
  }
  r.predictions = std::move(predictions);
  return r;
}

namespace {

nlohmann::ordered_json opt(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json ci_json(const std::optional<ConfidenceInterval>& ci) {
  if (!ci) return nullptr;
  return nlohmann::ordered_json::array({ci->low, ci->high});
}

nlohmann::ordered_json summary_json(const MetricSummary& m) {
  nlohmann::ordered_json j;
  j["n"] = m.n;
  j["pearson"] = opt(m.pearson);
  j["spearman"] = opt(m.spearman);
  j["mae"] = opt(m.mae);
  j["pearson_ci95"] = ci_json(m.pearson_ci);
  j["spearman_ci95"] = ci_json(m.spearman_ci);
  j["mae_ci95"] = ci_json(m.mae_ci);
  if (!m.error.empty()) j["error"] = m.error;
  return j;
}

std::string cell(const std::optional<double>& v, int precision = 3) {
  if (!v) return "n/a";
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << *v;
  return os.str();
}

std::string cell_ci(const std::optional<double>& v, const std::optional<ConfidenceInterval>& ci) {
  if (!v) return "n/a";
  std::string s = cell(v);
  if (ci) s += " [" + cell(ci->low) + ", " + cell(ci->high) + "]";
  return s;
}

}  // namespace

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  auto& pj = j["pairs"] = nlohmann::ordered_json::array();
  for (const auto& p : pairs) {
    auto s = summary_json(p.metrics);
    nlohmann::ordered_json row;
    row["pair_id"] = p.pair_id;
    for (auto& [k, v] : s.items()) row[k] = v;
    pj.push_back(std::move(row));
  }
  j["overall"] = summary_json(overall);
  j["macro"] = {{"pearson", opt(macro_pearson)}, {"spearman", opt(macro_spearman)}, {"mae", opt(macro_mae)}};
  j["warnings"] = warnings;
  return j;
}

std::string EvalReport::to_markdown() const {
  std::ostringstream os;
  os << "| Pair | n | Pearson | Spearman | MAE |\n";
  os << "|---|---:|---|---|---|\n";
  auto row = [&](const std::string& name, const MetricSummary& m) {
    os << "| " << name << " | " << m.n << " | " << cell_ci(m.pearson, m.pearson_ci) << " | "
       << cell_ci(m.spearman, m.spearman_ci) << " | " << cell_ci(m.mae, m.mae_ci) << " |\n";
  };
  for (const auto& p : pairs) row(p.pair_id, p.metrics);
  row("Overall", overall);
  os << "| Macro mean | " << pairs.size() << " pairs | " << cell(macro_pearson) << " | " << cell(macro_spearman)
     << " | " << cell(macro_mae) << " |\n";
  if (!warnings.empty()) {
    os << "\n";
    for (const auto& w : warnings) os << "- " << w << "\n";
  }
  return os.str();
}

void write_predictions_tsv(const std::filesystem::path& path, const std::vector<Prediction>& predictions) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write predictions: " + path.string());
  os << "pair_id\tgold_target01\tpredicted\n";
  for (const auto& p : predictions) {
    os << p.pair_id << '\t' << format_number(p.gold) << '\t' << format_number(p.predicted) << '\n';
  }
  if (!os) throw Error("failed writing predictions: " + path.string());
}

std::vector<Prediction> read_predictions_tsv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open predictions: " + path.string());
  std::vector<Prediction> out;
  std::string line;
  std::getline(is, line);
  for (std::size_t n = 2; std::getline(is, line); ++n) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Prediction p;
    std::string gold, pred;
    if (!std::getline(ls, p.pair_id, '\t') || !std::getline(ls, gold, '\t') || !std::getline(ls, pred)) {
      throw FormatError(path.string() + ":" + std::to_string(n) + ": expected 3 columns");
    }
    p.gold = std::stod(gold);
    p.predicted = std::stod(pred);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace trmqe
