// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <spdlog/spdlog.h>

#include "trmqe/checkpoint.hpp"
#include "trmqe/cli.hpp"
#include "trmqe/errors.hpp"

using namespace trmqe;
using namespace trmqe::cli;

namespace {

struct QuietLogs {
  QuietLogs() { spdlog::set_level(spdlog::level::off); }
} quiet_logs;

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
}

// A scratch directory removed at scope exit.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("trmqe_test_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct RunResult {
  int code = -1;
  std::string out, err;
};

RunResult run_cli(const std::string& args, const fs::path& cwd) {
  const fs::path out = cwd / "stdout.txt", err = cwd / "stderr.txt";
  const std::string cmd = "cd '" + cwd.string() + "' && '" + std::string(TRMQE_CLI_PATH) + "' --log-level off " +
                          args + " >'" + out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

SynthParams tiny_synth(std::size_t n, std::uint64_t seed) {
  SynthParams p;
  p.n_examples = n;
  p.input_dim = 6;
  p.min_source_len = 2;
  p.max_source_len = 4;
  p.min_translation_len = 2;
  p.max_translation_len = 4;
  p.seed = seed;
  return p;
}

DataSpec tiny_data(const fs::path& dir, const std::string& name = "synth") {
  cmd_synth(tiny_synth(48, 1), dir / "train.emb");
  cmd_synth(tiny_synth(24, 2), dir / "validation.emb");
  cmd_synth(tiny_synth(24, 3), dir / "test.emb");
  DataSpec d;
  d.name = name;
  d.train = dir / "train.emb";
  d.validation = dir / "validation.emb";
  d.test = dir / "test.emb";
  return d;
}

RunConfig tiny_run(const DataSpec& data) {
  RunConfig c;
  c.model.input_dim = 0;
  c.model.hidden_dim = 8;
  c.model.n_heads = 2;
  c.model.l_cycles = 1;
  c.model.max_seq_len = 16;
  c.model.dropout = 0.1;
  c.training.max_epochs = 2;
  c.training.lr = 1e-3;
  c.data = data;
  c.bootstrap_resamples = 100;
  return c;
}

std::string without_column(const std::string& csv, const std::string& column) {
  std::istringstream is(csv);
  std::string line, out;
  std::getline(is, line);
  std::vector<std::string> header;
  std::stringstream hs(line);
  for (std::string f; std::getline(hs, f, ',');) header.push_back(f);
  const auto drop = static_cast<std::size_t>(std::find(header.begin(), header.end(), column) - header.begin());
  REQUIRE(drop < header.size());
  is.clear();
  is.seekg(0);
  while (std::getline(is, line)) {
    std::stringstream ls(line);
    std::size_t i = 0;
    for (std::string f; std::getline(ls, f, ','); ++i) {
      if (i != drop) out += f + ',';
    }
    out += '\n';
  }
  return out;
}

}  // namespace

TEST_CASE("config overrides") {
  nlohmann::json j = {{"model", {{"l_cycles", 2}}}};
  apply_override(j, "model.l_cycles=4");
  apply_override(j, "training.freeze_spec=[\"embedding.*\"]");
  apply_override(j, "data.name=xlmr");
  apply_override(j, "training.lr=1e-3");
  CHECK(j["model"]["l_cycles"] == 4);
  CHECK(j["training"]["freeze_spec"][0] == "embedding.*");
  CHECK(j["data"]["name"] == "xlmr");
  CHECK(j["training"]["lr"] == doctest::Approx(1e-3));
  CHECK_THROWS_AS(apply_override(j, "no_equals_sign"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "model.l_cycles.x=1"), ConfigError);

  const auto c = run_config_from_json(j);
  CHECK(c.model.l_cycles == 4);
  CHECK(c.model.input_dim == 0);
  CHECK(c.training.freeze_spec == std::vector<std::string>{"embedding.*"});
}

TEST_CASE("config errors name the field") {
  auto field_of = [](const nlohmann::json& j) {
    try {
      run_config_from_json(j);
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string("<none>");
  };
  CHECK(field_of({{"model", {{"l_cycles", 7}}}}) == "model.l_cycles");
  CHECK(field_of({{"model", {{"hidden_dim", 10}, {"n_heads", 4}}}}) == "model.n_heads");
  CHECK(field_of({{"training", {{"lr", -1}}}}) == "training.lr");
  CHECK(field_of({{"training", {{"loss", "huber"}}}}) == "training.loss");
  CHECK(field_of({{"data", {{"svd", 3}}}}) == "data.svd");
  CHECK(field_of({{"optimizer", {}}}) == "optimizer");
  CHECK(field_of({{"model", {{"dropout", "high"}}}}) == "model.dropout");
}

TEST_CASE("run config round trip and path resolution") {
  nlohmann::json j = {{"data", {{"train", "a/train.emb"}, {"test", "/abs/test.emb"}}}, {"output_dir", "out"}};
  const auto c = run_config_from_json(j, "/configs");
  CHECK(c.data.train == fs::path("/configs/a/train.emb"));
  CHECK(c.data.test == fs::path("/abs/test.emb"));
  CHECK(run_config_from_json(run_config_to_json(c)) == c);
}

TEST_CASE("output root") {
  const char* old = std::getenv("TRMQE_OUTPUT_ROOT");
  const std::string saved = old ? old : "";
  setenv("TRMQE_OUTPUT_ROOT", "/tmp/qe_root", 1);
  CHECK(resolve_output("runs/a") == fs::path("/tmp/qe_root/runs/a"));
  CHECK(resolve_output("/elsewhere") == fs::path("/elsewhere"));
  unsetenv("TRMQE_OUTPUT_ROOT");
  CHECK(resolve_output("runs/a") == fs::current_path() / "runs/a");
  if (old) setenv("TRMQE_OUTPUT_ROOT", saved.c_str(), 1);
}

TEST_CASE("synth command") {
  TempDir tmp("synth");
  SynthParams p;
  cmd_synth(p, tmp.path / "a.emb");
  cmd_synth(p, tmp.path / "b.emb");
  const auto file = read_embedding_file(tmp.path / "a.emb");
  CHECK(file.examples.size() == p.n_examples);
  CHECK(file.header.encoder_id() == "synthetic");
  CHECK(slurp(tmp.path / "a.emb") == slurp(tmp.path / "b.emb"));

  p.n_examples = 0;
  cmd_synth(p, tmp.path / "empty.emb");
  CHECK(read_embedding_file(tmp.path / "empty.emb").examples.empty());
  CHECK(cmd_extract_check(tmp.path / "empty.emb").header.count == 0);
}

TEST_CASE("extract-check") {
  TempDir tmp("check");
  SynthParams p = tiny_synth(10, 4);
  cmd_synth(p, tmp.path / "ok.emb");
  const auto r = cmd_extract_check(tmp.path / "ok.emb", 6, "synthetic");
  CHECK(r.header.count == 10);
  CHECK(r.source_rows > 0);
  CHECK(r.to_json(tmp.path / "ok.emb")["status"] == "ok");
  CHECK_THROWS_AS(cmd_extract_check(tmp.path / "ok.emb", 7), ContractError);
  CHECK_THROWS_AS(cmd_extract_check(tmp.path / "ok.emb", {}, "xlm-roberta-large"), ContractError);
  CHECK_THROWS_AS(cmd_extract_check(tmp.path / "missing.emb"), ConfigError);

  auto bytes = slurp(tmp.path / "ok.emb");
  write_file(tmp.path / "short.emb", bytes.substr(0, bytes.size() - 5));
  try {
    cmd_extract_check(tmp.path / "short.emb");
    FAIL("expected CorruptionError");
  } catch (const CorruptionError& e) {
    CHECK(e.record_index() == 9);
  }

  const auto ok = run_cli("extract-check ok.emb --expect-dim 6", tmp.path);
  CHECK(ok.code == 0);
  CHECK(ok.out.find("\"input_dim\": 6") != std::string::npos);
  const auto bad = run_cli("extract-check short.emb", tmp.path);
  CHECK(bad.code == 1);
  CHECK(bad.err.find("record 9") != std::string::npos);
  CHECK(run_cli("extract-check nothing.emb", tmp.path).code == 2);
}

TEST_CASE("train and evaluate") {
  TempDir tmp("train");
  const auto cfg = tiny_run(tiny_data(tmp.path));
  const auto a = cmd_train(cfg, tmp.path / "a");
  for (const char* f : {"model.ckpt", "train_log.jsonl", "eval_report.json", "eval_report.md", "predictions.tsv",
                        "config.json"}) {
    CHECK_MESSAGE(fs::exists(tmp.path / "a" / f), f);
  }
  CHECK(a.report.overall.n == 24);
  CHECK(a.trainable_params > 0);

  SUBCASE("same seed, same report bytes") {
    cmd_train(cfg, tmp.path / "b");
    CHECK(slurp(tmp.path / "a" / "eval_report.json") == slurp(tmp.path / "b" / "eval_report.json"));
    CHECK(slurp(tmp.path / "a" / "model.ckpt") == slurp(tmp.path / "b" / "model.ckpt"));
  }
  SUBCASE("evaluate reproduces the training-time report") {
    cmd_evaluate(tmp.path / "a" / "model.ckpt", cfg.data.test, tmp.path / "ev", cfg.bootstrap_resamples,
                 cfg.bootstrap_seed);
    CHECK(slurp(tmp.path / "ev" / "eval_report.json") == slurp(tmp.path / "a" / "eval_report.json"));
    CHECK(slurp(tmp.path / "ev" / "predictions.tsv") == slurp(tmp.path / "a" / "predictions.tsv"));
  }
  SUBCASE("written config reloads to the resolved run") {
    const auto back = load_run_config(tmp.path / "a" / "config.json");
    CHECK(back.model.input_dim == 6);
    CHECK(back.data == cfg.data);
  }
  SUBCASE("a projected representation travels with the checkpoint") {
    auto projected = cfg;
    projected.data.svd_k = 4;
    const auto p = cmd_train(projected, tmp.path / "svd");
    CHECK(read_checkpoint(tmp.path / "svd" / "model.ckpt").config.input_dim == 4);
    cmd_evaluate(tmp.path / "svd" / "model.ckpt", cfg.data.test, tmp.path / "svd_ev", cfg.bootstrap_resamples);
    CHECK(slurp(tmp.path / "svd_ev" / "eval_report.json") == slurp(tmp.path / "svd" / "eval_report.json"));
  }
  SUBCASE("input dimension mismatch") {
    auto wrong = cfg;
    wrong.model.input_dim = 5;
    try {
      cmd_train(wrong, tmp.path / "wrong");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.field() == "model.input_dim");
    }
  }
}

TEST_CASE("train command exit codes") {
  TempDir tmp("exit");
  const auto data = tiny_data(tmp.path);
  write_file(tmp.path / "desk.json", run_config_to_json(tiny_run(data)).dump(2));

  const auto ok = run_cli("train --config desk.json --out run", tmp.path);
  CHECK(ok.code == 0);
  CHECK(fs::exists(tmp.path / "run" / "model.ckpt"));
  CHECK(fs::exists(tmp.path / "run" / "train_log.jsonl"));
  CHECK(fs::exists(tmp.path / "run" / "eval_report.json"));

  const auto rerun = run_cli("train --config desk.json --out run2", tmp.path);
  CHECK(rerun.code == 0);
  CHECK(slurp(tmp.path / "run" / "eval_report.json") == slurp(tmp.path / "run2" / "eval_report.json"));

  const auto missing = run_cli("train --config desk.json --set data.train=absent/train.emb", tmp.path);
  CHECK(missing.code == 2);
  CHECK(missing.err.find("absent/train.emb") != std::string::npos);

  const auto bad = run_cli("train --config desk.json --set model.external_steps=0", tmp.path);
  CHECK(bad.code == 2);
  CHECK(bad.err.find("model.external_steps") != std::string::npos);

  CHECK(run_cli("train", tmp.path).code == 2);
  CHECK(run_cli("frobnicate", tmp.path).code == 2);
  CHECK(run_cli("train --config nowhere.json", tmp.path).code == 2);

  auto bytes = slurp(data.test);
  write_file(tmp.path / "broken.emb", bytes.substr(0, bytes.size() / 2));
  const auto broken = run_cli("train --config desk.json --set data.test=broken.emb --out broken_run", tmp.path);
  CHECK(broken.code == 1);

  setenv("TRMQE_OUTPUT_ROOT", (tmp.path / "root").c_str(), 1);
  const auto rooted = run_cli("train --config desk.json --set output_dir=from_env", tmp.path);
  unsetenv("TRMQE_OUTPUT_ROOT");
  CHECK(rooted.code == 0);
  CHECK(fs::exists(tmp.path / "root" / "from_env" / "eval_report.json"));

  const auto ev = run_cli("evaluate --checkpoint run/model.ckpt --data test.emb --out ev", tmp.path);
  CHECK(ev.code == 0);
  CHECK(run_cli("evaluate --checkpoint run/none.ckpt --data test.emb --out ev2", tmp.path).code == 2);
}

TEST_CASE("sweep grid expansion") {
  SweepSpec s;
  s.base = tiny_run(DataSpec{});
  s.grid.external_steps = {1, 2, 4};
  s.grid.l_cycles = {1, 2, 4};
  const auto cells = expand_sweep(s);
  REQUIRE(cells.size() == 9);
  CHECK(cells[0].id == "trm-default-none-N1-L1-s0");
  CHECK(cells[5].external_steps == 2);
  CHECK(cells[5].l_cycles == 4);
  CHECK(cells[5].config.model.l_cycles == 4);

  s.grid.external_steps = {1, 17};
  CHECK_THROWS_AS(expand_sweep(s), ConfigError);

  s.grid.external_steps = {1};
  s.grid.architecture = {Architecture::trm, Architecture::standard};
  const auto both = expand_sweep(s);
  CHECK(both.back().config.model.standard_depth == 8);

  s.grid.l_cycles = {1};
  s.grid.architecture = {};
  s.grid.freeze = {{"frozen", {"embedding.*"}}, {"trainable", {}}};
  const auto fr = expand_sweep(s);
  REQUIRE(fr.size() == 2);
  CHECK(fr[0].config.training.freeze_spec == std::vector<std::string>{"embedding.*"});
  CHECK(fr[1].freeze == "trainable");

  CHECK_THROWS_AS(sweep_spec_from_json({{"phase", 4}}), ConfigError);
  CHECK_THROWS_AS(sweep_spec_from_json({{"grid", {{"depth", {1}}}}}), ConfigError);
  CHECK(sweep_spec_from_json({{"grid", {{"external_steps", {1, 2, 4}}, {"l_cycles", {1, 2, 4}}}}}).grid.l_cycles.size() ==
        3);
}

TEST_CASE("sweep resume and failure isolation") {
  TempDir tmp("sweep");
  SweepSpec s;
  s.base = tiny_run(tiny_data(tmp.path));
  s.base.training.max_epochs = 1;
  s.grid.external_steps = {1, 2};
  s.grid.l_cycles = {1, 2};

  const auto full = cmd_sweep(s, tmp.path / "full");
  CHECK(full.ran == 4);
  CHECK(full.failed == 0);
  const std::string reference = slurp(full.results_csv);

  SUBCASE("interrupted then resumed") {
    const auto first = cmd_sweep(s, tmp.path / "resumed", {.workers = 1, .max_cells = 1});
    CHECK(first.pending == 3);
    CHECK(slurp(first.results_csv).find(",pending,") != std::string::npos);
    // A cell left half-written by a crash has no done marker and is redone.
    fs::create_directories(tmp.path / "resumed" / "cells" / "trm-synth-none-N1-L2-s0");
    write_file(tmp.path / "resumed" / "cells" / "trm-synth-none-N1-L2-s0" / "model.ckpt", "partial");
    const auto second = cmd_sweep(s, tmp.path / "resumed");
    CHECK(second.skipped == 1);
    CHECK(second.ran == 3);
    CHECK(without_column(slurp(second.results_csv), "wall_clock_s") == without_column(reference, "wall_clock_s"));
    const auto third = cmd_sweep(s, tmp.path / "resumed");
    CHECK(third.ran == 0);
    CHECK(third.skipped == 4);
  }
  SUBCASE("parallel workers give the same table") {
    const auto par = cmd_sweep(s, tmp.path / "parallel", {.workers = 3});
    CHECK(without_column(slurp(par.results_csv), "wall_clock_s") == without_column(reference, "wall_clock_s"));
  }
  SUBCASE("a failing cell is recorded and the rest still run") {
    auto broken = s;
    broken.grid.external_steps = {1};
    broken.grid.l_cycles = {1};
    DataSpec missing = s.base.data;
    missing.name = "absent";
    missing.train = tmp.path / "absent.emb";
    broken.grid.embeddings = {missing, s.base.data};
    const auto r = cmd_sweep(broken, tmp.path / "broken");
    CHECK(r.failed == 1);
    const auto t = read_results_csv(r.results_csv);
    REQUIRE(t.rows.size() == 2);
    CHECK(t.at(0, "status") == "failed");
    CHECK(t.at(0, "error").find("absent.emb") != std::string::npos);
    CHECK(t.at(1, "status") == "ok");
    const auto md = cmd_report(tmp.path / "broken");
    CHECK(md.find("## Failed cells") != std::string::npos);
  }
  SUBCASE("report values are the CSV values") {
    const auto t = read_results_csv(full.results_csv);
    const auto md = cmd_report(tmp.path / "full");
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      for (const char* col : {"pearson", "spearman", "mae", "trainable_params"}) {
        CHECK_MESSAGE(md.find(t.at(r, col)) != std::string::npos, col);
      }
    }
    CHECK(md.find("## External steps") != std::string::npos);
    CHECK(md.find("## L-cycles") != std::string::npos);
  }
}

TEST_CASE("report tables") {
  TempDir tmp("report");
  const auto header = [] {
    std::string h;
    for (const auto& c : results_columns()) h += (h.empty() ? "" : ",") + c;
    return h + "\n";
  }();
  auto row = [](const std::string& id, int n, const std::string& pearson, const std::string& spearman,
                const std::string& mae, const std::string& status = "ok") {
    std::map<std::string, std::string> v = {{"cell_id", id},         {"phase", "1"},      {"architecture", "trm"},
                                            {"embedding", "synth"},  {"freeze", "none"},  {"external_steps", std::to_string(n)},
                                            {"l_cycles", "4"},       {"seed", "0"},       {"status", status},
                                            {"trainable_params", "1234"}, {"n_test", "10"}, {"pearson", pearson},
                                            {"spearman", spearman},  {"mae", mae}};
    std::string line;
    for (const auto& c : results_columns()) line += (line.empty() ? "" : ",") + (v.count(c) ? v.at(c) : std::string());
    return line + "\n";
  };

  SUBCASE("one cell gives one-row tables") {
    fs::create_directories(tmp.path / "one");
    write_file(tmp.path / "one" / "results.csv", header + row("a", 1, "0.5", "0.25", "0.1"));
    const auto md = cmd_report(tmp.path / "one");
    CHECK(md.find("## External steps") == std::string::npos);
    const auto models = md.substr(md.find("## Models"));
    std::size_t table_lines = 0;
    for (auto pos = models.find("\n|"); pos != std::string::npos; pos = models.find("\n|", pos + 1)) ++table_lines;
    CHECK(table_lines == 3);  // header, separator, one row
    CHECK(md.find("**0.25**") != std::string::npos);
  }
  SUBCASE("ties bold every tied row") {
    fs::create_directories(tmp.path / "tie");
    write_file(tmp.path / "tie" / "results.csv",
               header + row("a", 1, "0.5", "0.75", "0.2") + row("b", 2, "0.4", "0.75", "0.2") +
                   row("c", 4, "0.3", "0.5", "0.3"));
    const auto md = cmd_report(tmp.path / "tie");
    const auto steps = md.substr(0, md.find("## Models"));
    CHECK(std::count(steps.begin(), steps.end(), '*') == 4 * 5);  // 0.5, 0.75, 0.75, 0.2, 0.2
    CHECK(steps.find("| 1 | **0.5** | **0.75** | **0.2** |") != std::string::npos);
    CHECK(steps.find("| 2 | 0.4 | **0.75** | **0.2** |") != std::string::npos);
    CHECK(steps.find("| 4 | 0.3 | 0.5 | 0.3 |") != std::string::npos);
  }
  SUBCASE("nothing completed") {
    fs::create_directories(tmp.path / "none");
    write_file(tmp.path / "none" / "results.csv", header + row("a", 1, "", "", "", "pending"));
    CHECK_THROWS_AS(cmd_report(tmp.path / "none"), ConfigError);
    CHECK(run_cli("report none", tmp.path).code == 2);
    CHECK(run_cli("report nowhere", tmp.path).code == 2);
  }
  SUBCASE("quoted error fields survive the round trip") {
    fs::create_directories(tmp.path / "quoted");
    std::string bad = row("x", 1, "", "", "", "failed");
    bad.replace(bad.rfind(",,"), 2, ",\"boom, \"\"quoted\"\"\",");
    write_file(tmp.path / "quoted" / "results.csv", header + row("a", 1, "0.5", "0.25", "0.1") + bad);
    const auto t = read_results_csv(tmp.path / "quoted" / "results.csv");
    CHECK(t.at(1, "error") == "boom, \"quoted\"");
  }
}
