// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "trmqe/cli.hpp"
#include "trmqe/errors.hpp"

namespace trmqe::cli {

namespace {

std::vector<std::vector<std::string>> parse_csv(const std::string& text, const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n') {
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else if (c != '\r') {
      field += c;
      any = true;
    }
  }
  if (quoted) throw FormatError(path.string() + ": unterminated quoted field");
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

struct Column {
  std::string header, key;
  enum { plain, higher, lower } best = plain;
};

std::string render_table(const ResultsTable& t, const std::vector<std::size_t>& rows,
                         const std::vector<Column>& cols,
                         const std::function<std::string(std::size_t, const Column&)>& cell) {
  // Bold every row that ties for the best value of a metric column.
  std::vector<std::vector<bool>> bold(rows.size(), std::vector<bool>(cols.size(), false));
  for (std::size_t c = 0; c < cols.size(); ++c) {
    if (cols[c].best == Column::plain) continue;
    std::optional<double> best;
    std::vector<std::optional<double>> vals;
    for (std::size_t r : rows) {
      const auto& s = t.at(r, cols[c].key);
      std::optional<double> v;
      if (!s.empty()) v = std::stod(s);
      vals.push_back(v);
      if (v && (!best || (cols[c].best == Column::higher ? *v > *best : *v < *best))) best = v;
    }
    for (std::size_t i = 0; i < rows.size(); ++i) bold[i][c] = best && vals[i] && *vals[i] == *best;
  }
  std::ostringstream os;
  os << "|";
  for (const auto& c : cols) os << ' ' << c.header << " |";
  os << "\n|";
  for (const auto& c : cols) os << (c.best == Column::plain ? "---|" : "---:|");
  os << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    os << "|";
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const std::string v = cell(rows[i], cols[c]);
      os << ' ' << (bold[i][c] && !v.empty() ? "**" + v + "**" : v) << " |";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace

const std::string& ResultsTable::at(std::size_t row, const std::string& column) const {
  const auto it = std::find(columns.begin(), columns.end(), column);
  if (it == columns.end()) throw FormatError("results table has no column '" + column + "'");
  return rows.at(row).at(static_cast<std::size_t>(it - columns.begin()));
}

ResultsTable read_results_csv(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("no results file at " + path.string(), "results");
  std::ostringstream ss;
  ss << is.rdbuf();
  auto rows = parse_csv(ss.str(), path);
  if (rows.empty()) throw FormatError(path.string() + ": missing header row");
  ResultsTable t;
  t.columns = std::move(rows.front());
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != t.columns.size()) {
      throw FormatError(path.string() + ":" + std::to_string(i + 1) + ": expected " +
                        std::to_string(t.columns.size()) + " fields, found " + std::to_string(rows[i].size()));
    }
    t.rows.push_back(std::move(rows[i]));
  }
  return t;
}

std::string cmd_report(const fs::path& results_dir) {
  const fs::path csv = fs::is_directory(results_dir) ? results_dir / "results.csv" : results_dir;
  const auto t = read_results_csv(csv);
  std::vector<std::size_t> ok, failed;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& s = t.at(r, "status");
    if (s == "ok") ok.push_back(r);
    if (s == "failed") failed.push_back(r);
  }
  if (ok.empty()) throw ConfigError("no completed cells in " + csv.string(), "results");

  const std::vector<std::pair<std::string, std::string>> axes = {
      {"architecture", "Architecture"}, {"embedding", "Embedding"}, {"freeze", "Freeze"},
      {"external_steps", "Steps"},      {"l_cycles", "L-cycles"},  {"seed", "Seed"}};
  std::vector<std::string> varying;
  for (const auto& [key, _] : axes) {
    std::set<std::string> seen;
    for (std::size_t r : ok) seen.insert(t.at(r, key));
    if (seen.size() > 1) varying.push_back(key);
  }
  auto header_of = [&](const std::string& key) {
    for (const auto& [k, h] : axes)
      if (k == key) return h;
    return key;
  };
  auto numeric_order = [&](const std::string& key) {
    auto rows = ok;
    std::stable_sort(rows.begin(), rows.end(),
                     [&](std::size_t a, std::size_t b) { return std::stoull(t.at(a, key)) < std::stoull(t.at(b, key)); });
    return rows;
  };
  auto verbatim = [&](std::size_t r, const Column& c) { return t.at(r, c.key); };
  const std::vector<Column> metrics = {{"Pearson", "pearson", Column::higher},
                                       {"Spearman", "spearman", Column::higher},
                                       {"MAE", "mae", Column::lower}};

  std::ostringstream os;
  os << "# Results\n\n" << ok.size() << " completed cell(s) from `" << csv.generic_string() << "`.\n\n";

  for (const std::string lead : {"external_steps", "l_cycles"}) {
    if (std::find(varying.begin(), varying.end(), lead) == varying.end()) continue;
    std::vector<Column> cols = {{header_of(lead), lead}};
    for (const auto& k : varying)
      if (k != lead) cols.push_back({header_of(k), k});
    cols.insert(cols.end(), metrics.begin(), metrics.end());
    os << "## " << (lead == "external_steps" ? "External steps" : "L-cycles") << "\n\n"
       << render_table(t, numeric_order(lead), cols, verbatim) << '\n';
  }

  std::vector<std::string> label_keys = varying;
  if (label_keys.empty()) label_keys = {"architecture", "embedding", "freeze"};
  auto label = [&](std::size_t r) {
    std::string s;
    for (const auto& k : label_keys) {
      if (!s.empty()) s += " / ";
      if (k == "external_steps") s += "N=" + t.at(r, k);
      else if (k == "l_cycles") s += "L=" + t.at(r, k);
      else if (k == "seed") s += "seed " + t.at(r, k);
      else s += t.at(r, k);
    }
    return s;
  };
  const std::vector<Column> model_cols = {{"Model", "model"},
                                          {"Trainable", "trainable_params"},
                                          {"Pearson", "pearson", Column::higher},
                                          {"Spearman", "spearman", Column::higher}};
  os << "## Models\n\n"
     << render_table(t, ok, model_cols,
                     [&](std::size_t r, const Column& c) { return c.key == "model" ? label(r) : t.at(r, c.key); })
     << '\n';

  os << "Best values per metric column are bold; every tied row is bold.\n";
  if (!failed.empty()) {
    os << "\n## Failed cells\n\n";
    for (std::size_t r : failed) os << "- `" << t.at(r, "cell_id") << "`: " << t.at(r, "error") << '\n';
  }
  return os.str();
}

}  // namespace trmqe::cli
