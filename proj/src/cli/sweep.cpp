// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "trmqe/cli.hpp"
#include "trmqe/errors.hpp"

namespace trmqe::cli {

namespace {

constexpr const char* kDoneMarker = "done";

template <typename V>
std::vector<V> read_list(const nlohmann::json& grid, const char* key) {
  if (!grid.contains(key)) return {};
  const auto& a = grid.at(key);
  if (!a.is_array()) throw ConfigError("must be a list", std::string("grid.") + key);
  try {
    return a.get<std::vector<V>>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("has the wrong element type", std::string("grid.") + key);
  }
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-') ? c : '_';
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    os << text;
    if (!os) throw Error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string md_cell(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += "\\|";
    else if (c == '\n' || c == '\r') out += ' ';
    else out += c;
  }
  return out;
}

std::string opt_num(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

using Row = std::map<std::string, std::string>;

Row cell_axes(const SweepCell& c, int phase) {
  return {{"cell_id", c.id},
          {"phase", std::to_string(phase)},
          {"architecture", c.architecture},
          {"embedding", c.embedding},
          {"freeze", c.freeze},
          {"external_steps", std::to_string(c.external_steps)},
          {"l_cycles", std::to_string(c.l_cycles)},
          {"seed", std::to_string(c.seed)}};
}

Row success_row(const SweepCell& c, int phase, const TrainOutcome& t, double seconds) {
  Row r = cell_axes(c, phase);
  const auto& m = t.report.overall;
  r["status"] = "ok";
  r["trainable_params"] = std::to_string(t.trainable_params);
  r["n_test"] = std::to_string(m.n);
  r["pearson"] = opt_num(m.pearson);
  r["pearson_ci_low"] = m.pearson_ci ? format_number(m.pearson_ci->low) : "";
  r["pearson_ci_high"] = m.pearson_ci ? format_number(m.pearson_ci->high) : "";
  r["spearman"] = opt_num(m.spearman);
  r["spearman_ci_low"] = m.spearman_ci ? format_number(m.spearman_ci->low) : "";
  r["spearman_ci_high"] = m.spearman_ci ? format_number(m.spearman_ci->high) : "";
  r["mae"] = opt_num(m.mae);
  r["mae_ci_low"] = m.mae_ci ? format_number(m.mae_ci->low) : "";
  r["mae_ci_high"] = m.mae_ci ? format_number(m.mae_ci->high) : "";
  r["selected_epoch"] = std::to_string(t.log.selected_epoch);
  r["error"] = m.error;
  r["wall_clock_s"] = format_number(seconds);
  return r;
}

Row failure_row(const SweepCell& c, int phase, const std::string& what, double seconds) {
  Row r = cell_axes(c, phase);
  r["status"] = "failed";
  r["error"] = what;
  r["wall_clock_s"] = format_number(seconds);
  return r;
}

std::string cell_config_text(const SweepCell& c) { return run_config_to_json(c.config).dump(2) + "\n"; }

bool cell_done(const fs::path& cell_dir, const SweepCell& c) {
  return fs::exists(cell_dir / kDoneMarker) && fs::exists(cell_dir / "result.json") &&
         slurp(cell_dir / "cell_config.json") == cell_config_text(c);
}

void run_cell(const SweepCell& c, int phase, const fs::path& cell_dir) {
  fs::remove_all(cell_dir);
  fs::create_directories(cell_dir);
  write_atomic(cell_dir / "cell_config.json", cell_config_text(c));
  const auto t0 = std::chrono::steady_clock::now();
  auto seconds = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  Row row;
  bool ok = false;
  try {
    const auto outcome = cmd_train(c.config, cell_dir);
    row = success_row(c, phase, outcome, seconds());
    ok = true;
  } catch (const std::exception& e) {
    spdlog::error("cell {} failed: {}", c.id, e.what());
    row = failure_row(c, phase, e.what(), seconds());
  }
  nlohmann::ordered_json j;
  for (const auto& col : results_columns()) j[col] = row.count(col) ? row.at(col) : "";
  write_atomic(cell_dir / "result.json", j.dump(2) + "\n");
  if (ok) write_atomic(cell_dir / kDoneMarker, "");
}

Row load_row(const SweepCell& c, int phase, const fs::path& cell_dir) {
  if (fs::exists(cell_dir / "result.json") && slurp(cell_dir / "cell_config.json") == cell_config_text(c)) {
    const auto j = nlohmann::json::parse(slurp(cell_dir / "result.json"));
    Row r;
    for (const auto& col : results_columns()) r[col] = j.value(col, std::string());
    return r;
  }
  Row r = cell_axes(c, phase);
  r["status"] = "pending";
  return r;
}

void write_results(const std::vector<Row>& rows, const fs::path& csv, const fs::path& md) {
  const auto& cols = results_columns();
  std::string out, table;
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
  out += '\n';
  table += "|";
  for (const auto& c : cols) table += " " + c + " |";
  table += "\n|";
  for (std::size_t i = 0; i < cols.size(); ++i) table += "---|";
  table += '\n';
  for (const auto& r : rows) {
    table += "|";
    for (std::size_t i = 0; i < cols.size(); ++i) {
      const auto& v = r.count(cols[i]) ? r.at(cols[i]) : std::string();
      out += (i ? "," : "") + csv_field(v);
      table += " " + md_cell(v) + " |";
    }
    out += '\n';
    table += '\n';
  }
  write_atomic(csv, out);
  write_atomic(md, table);
}

}  // namespace

const std::vector<std::string>& results_columns() {
  static const std::vector<std::string> cols = {
      "cell_id",      "phase",        "architecture",   "embedding",       "freeze",          "external_steps",
      "l_cycles",     "seed",         "status",         "trainable_params", "n_test",         "pearson",
      "pearson_ci_low", "pearson_ci_high", "spearman",  "spearman_ci_low", "spearman_ci_high", "mae",
      "mae_ci_low",   "mae_ci_high",  "selected_epoch", "error",           "wall_clock_s"};
  return cols;
}

SweepSpec sweep_spec_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("sweep spec must be an object", "config");
  for (const auto& [key, _] : j.items()) {
    if (key != "phase" && key != "base" && key != "grid" && key != "output_dir") {
      throw ConfigError("unknown field", key);
    }
  }
  SweepSpec s;
  if (j.contains("phase")) {
    if (!j.at("phase").is_number_integer()) throw ConfigError("must be 1, 2 or 3", "phase");
    s.phase = j.at("phase").get<int>();
  }
  if (s.phase < 1 || s.phase > 3) throw ConfigError("must be 1, 2 or 3", "phase");
  try {
    s.base = run_config_from_json(j.value("base", nlohmann::json::object()), base_dir);
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    const std::string lead = e.field() + ": ";
    if (!e.field().empty() && msg.rfind(lead, 0) == 0) msg = msg.substr(lead.size());
    throw ConfigError(msg, "base." + e.field());
  }
  if (j.contains("output_dir")) {
    if (!j.at("output_dir").is_string()) throw ConfigError("must be a string", "output_dir");
    s.output_dir = j.at("output_dir").get<std::string>();
  }

  const auto grid = j.value("grid", nlohmann::json::object());
  if (!grid.is_object()) throw ConfigError("must be an object", "grid");
  for (const auto& [key, _] : grid.items()) {
    static const std::set<std::string> known = {"architecture", "embeddings", "freeze",
                                                "external_steps", "l_cycles", "seeds"};
    if (!known.count(key)) throw ConfigError("unknown axis", "grid." + key);
  }
  for (const auto& a : read_list<std::string>(grid, "architecture")) s.grid.architecture.push_back(parse_architecture(a));
  if (grid.contains("embeddings")) {
    if (!grid.at("embeddings").is_array()) throw ConfigError("must be a list", "grid.embeddings");
    std::size_t i = 0;
    for (const auto& e : grid.at("embeddings")) {
      s.grid.embeddings.push_back(data_spec_from_json(e, base_dir, "grid.embeddings[" + std::to_string(i++) + "]."));
    }
  }
  if (grid.contains("freeze")) {
    if (!grid.at("freeze").is_array()) throw ConfigError("must be a list", "grid.freeze");
    for (const auto& f : grid.at("freeze")) {
      if (!f.is_object() || !f.contains("name") || !f.at("name").is_string()) {
        throw ConfigError("each variant needs a name and a spec list", "grid.freeze");
      }
      FreezeVariant v{f.at("name").get<std::string>(), {}};
      try {
        v.spec = f.value("spec", std::vector<std::string>{});
      } catch (const nlohmann::json::exception&) {
        throw ConfigError("spec must be a list of patterns", "grid.freeze");
      }
      s.grid.freeze.push_back(std::move(v));
    }
  }
  s.grid.external_steps = read_list<std::size_t>(grid, "external_steps");
  s.grid.l_cycles = read_list<std::size_t>(grid, "l_cycles");
  s.grid.seeds = read_list<std::uint64_t>(grid, "seeds");
  expand_sweep(s);  // validates every cell
  return s;
}

SweepSpec load_sweep_spec(const fs::path& path, const std::vector<std::string>& overrides) {
  auto j = read_json_file(path);
  for (const auto& o : overrides) apply_override(j, o);
  return sweep_spec_from_json(j, path.parent_path());
}

std::vector<SweepCell> expand_sweep(const SweepSpec& spec) {
  const auto& b = spec.base;
  auto archs = spec.grid.architecture.empty() ? std::vector<Architecture>{b.model.architecture} : spec.grid.architecture;
  auto embs = spec.grid.embeddings.empty() ? std::vector<DataSpec>{b.data} : spec.grid.embeddings;
  auto freezes = spec.grid.freeze.empty()
                     ? std::vector<FreezeVariant>{{b.training.freeze_spec.empty() ? "none" : "base", b.training.freeze_spec}}
                     : spec.grid.freeze;
  auto steps = spec.grid.external_steps.empty() ? std::vector<std::size_t>{b.model.external_steps} : spec.grid.external_steps;
  auto cycles = spec.grid.l_cycles.empty() ? std::vector<std::size_t>{b.model.l_cycles} : spec.grid.l_cycles;
  auto seeds = spec.grid.seeds.empty() ? std::vector<std::uint64_t>{b.training.seed} : spec.grid.seeds;

  std::set<std::string> names;
  for (const auto& e : embs) {
    if (!names.insert(e.name).second) throw ConfigError("duplicate embedding name '" + e.name + "'", "grid.embeddings");
  }
  names.clear();
  for (const auto& f : freezes) {
    if (f.name.empty() || !names.insert(f.name).second) {
      throw ConfigError("freeze variant names must be unique and non-empty", "grid.freeze");
    }
  }

  std::vector<SweepCell> cells;
  std::set<std::string> ids;
  for (auto arch : archs)
    for (const auto& emb : embs)
      for (const auto& fr : freezes)
        for (auto n : steps)
          for (auto l : cycles)
            for (auto seed : seeds) {
              SweepCell c;
              c.architecture = to_string(arch);
              c.embedding = emb.name;
              c.freeze = fr.name;
              c.external_steps = n;
              c.l_cycles = l;
              c.seed = seed;
              c.id = sanitize(c.architecture + "-" + emb.name + "-" + fr.name + "-N" + std::to_string(n) + "-L" +
                              std::to_string(l) + "-s" + std::to_string(seed));
              if (!ids.insert(c.id).second) throw ConfigError("grid produces duplicate cell id " + c.id, "grid");
              c.config = b;
              c.config.model.architecture = arch;
              c.config.model.external_steps = n;
              c.config.model.l_cycles = l;
              // The unshared baseline gets the same effective depth per step.
              if (arch == Architecture::standard) c.config.model.standard_depth = TrmConfig::layers_per_cycle * l;
              c.config.model.seed = seed;
              c.config.training.seed = seed;
              c.config.training.freeze_spec = fr.spec;
              c.config.data = emb;
              TrmConfig probe = c.config.model;
              if (probe.input_dim == 0) probe.input_dim = 1;
              try {
                probe.validate();
                c.config.training.validate();
              } catch (const ConfigError& e) {
                throw ConfigError(std::string("cell ") + c.id + ": " + e.what(), e.field());
              }
              cells.push_back(std::move(c));
            }
  if (cells.empty()) throw ConfigError("grid is empty", "grid");
  return cells;
}

SweepSummary cmd_sweep(const SweepSpec& spec, const fs::path& dir, const SweepOptions& opts) {
  const auto cells = expand_sweep(spec);
  fs::create_directories(dir / "cells");
  SweepSummary summary;
  summary.cells = cells.size();

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cell_done(dir / "cells" / cells[i].id, cells[i])) {
      ++summary.skipped;
    } else {
      todo.push_back(i);
    }
  }
  if (opts.max_cells && todo.size() > *opts.max_cells) todo.resize(*opts.max_cells);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < todo.size(); k = next++) {
      const auto& c = cells[todo[k]];
      spdlog::info("sweep cell {} ({}/{})", c.id, k + 1, todo.size());
      run_cell(c, spec.phase, dir / "cells" / c.id);
    }
  };
  const std::size_t n_workers = std::clamp<std::size_t>(opts.workers, 1, std::max<std::size_t>(todo.size(), 1));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  summary.ran = todo.size();

  std::vector<Row> rows;
  for (const auto& c : cells) {
    rows.push_back(load_row(c, spec.phase, dir / "cells" / c.id));
    const auto& status = rows.back().at("status");
    if (status == "failed") ++summary.failed;
    if (status == "pending") ++summary.pending;
  }
  summary.results_csv = dir / "results.csv";
  summary.results_md = dir / "results.md";
  write_results(rows, summary.results_csv, summary.results_md);
  return summary;
}

}  // namespace trmqe::cli
