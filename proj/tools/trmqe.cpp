// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0
//
// trmqe: synth | extract-check | train | evaluate | sweep | report
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "trmqe/cli.hpp"
#include "trmqe/errors.hpp"

using namespace trmqe;
using namespace trmqe::cli;

namespace {

std::string print_overall(const EvalReport& r) {
  const auto& m = r.overall;
  auto f = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string("-"); };
  return "n=" + std::to_string(m.n) + " pearson=" + f(m.pearson) + " spearman=" + f(m.spearman) + " mae=" + f(m.mae);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weight-shared recursive transformer for sentence-level translation quality estimation"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic embedding file");
  std::string synth_out, synth_config;
  std::vector<std::string> synth_sets;
  synth->add_option("--out", synth_out, "Output embedding file")->required();
  synth->add_option("--config", synth_config, "JSON generator parameters");
  synth->add_option("--set", synth_sets, "Override a generator parameter, key=value");

  // extract-check
  auto* check = app.add_subcommand("extract-check", "Validate an embedding file end to end");
  std::string check_file, expect_encoder;
  std::size_t expect_dim = 0;
  check->add_option("file", check_file, "Embedding file")->required();
  check->add_option("--expect-dim", expect_dim, "Required input dimension");
  check->add_option("--expect-encoder", expect_encoder, "Required encoder_id");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train one model and evaluate it on the test split");
  std::string train_config, train_out;
  std::vector<std::string> train_sets;
  train_cmd->add_option("--config", train_config, "JSON run config")->required();
  train_cmd->add_option("--set", train_sets, "Override a config value, dotted.key=value");
  train_cmd->add_option("--out", train_out, "Output directory (default: output_dir from the config)");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a checkpoint on an embedding file");
  std::string eval_ckpt, eval_data, eval_out;
  std::size_t eval_resamples = 1000;
  std::uint64_t eval_seed = 0;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "model.ckpt from a train run")->required();
  eval_cmd->add_option("--data", eval_data, "Embedding file to score")->required();
  eval_cmd->add_option("--out", eval_out, "Output directory")->required();
  eval_cmd->add_option("--bootstrap-resamples", eval_resamples, "Bootstrap resamples for intervals");
  eval_cmd->add_option("--bootstrap-seed", eval_seed, "Bootstrap seed");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Run a resumable grid of trainings");
  std::string sweep_config, sweep_out;
  std::vector<std::string> sweep_sets;
  std::size_t workers = 1, max_cells = 0;
  sweep->add_option("--config", sweep_config, "JSON sweep spec")->required();
  sweep->add_option("--set", sweep_sets, "Override a spec value, dotted.key=value");
  sweep->add_option("--out", sweep_out, "Output directory (default: output_dir from the spec)");
  sweep->add_option("--workers", workers, "Cells trained concurrently");
  sweep->add_option("--max-cells", max_cells, "Stop after this many new cells (0: no limit)");

  // report
  auto* report = app.add_subcommand("report", "Markdown tables from a sweep's results.csv");
  std::string report_dir, report_out;
  report->add_option("results", report_dir, "Sweep directory or results.csv")->required();
  report->add_option("--out", report_out, "Write the report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*synth) {
      nlohmann::json j = synth_config.empty() ? nlohmann::json::object() : read_json_file(synth_config);
      for (const auto& s : synth_sets) apply_override(j, s);
      const auto params = SynthParams::from_json(j);
      const fs::path out = resolve_output(synth_out);
      cmd_synth(params, out);
      std::cout << out.string() << '\n';
    } else if (*check) {
      const auto r = cmd_extract_check(check_file, expect_dim ? std::optional<std::size_t>(expect_dim) : std::nullopt,
                                       expect_encoder);
      std::cout << r.to_json(check_file).dump(2) << '\n';
    } else if (*train_cmd) {
      const auto cfg = load_run_config(train_config, train_sets);
      const fs::path dir = resolve_output(train_out.empty() ? cfg.output_dir : fs::path(train_out));
      const auto out = cmd_train(cfg, dir);
      for (const auto& w : out.warnings) spdlog::warn("{}", w);
      std::cout << dir.string() << ": selected epoch " << out.log.selected_epoch << ", test "
                << print_overall(out.report) << '\n';
    } else if (*eval_cmd) {
      const auto r = cmd_evaluate(eval_ckpt, eval_data, resolve_output(eval_out), eval_resamples, eval_seed);
      std::cout << print_overall(r) << '\n';
    } else if (*sweep) {
      const auto spec = load_sweep_spec(sweep_config, sweep_sets);
      const fs::path dir = resolve_output(sweep_out.empty() ? spec.output_dir : fs::path(sweep_out));
      SweepOptions opts;
      opts.workers = workers;
      if (max_cells > 0) opts.max_cells = max_cells;
      const auto s = cmd_sweep(spec, dir, opts);
      std::cout << s.results_csv.string() << ": " << s.cells << " cells, " << s.ran << " run, " << s.skipped
                << " already done, " << s.failed << " failed, " << s.pending << " pending\n";
      if (s.failed > 0) return kExitRuntime;
    } else if (*report) {
      const auto md = cmd_report(report_dir);
      if (report_out.empty()) {
        std::cout << md;
      } else {
        std::ofstream os(resolve_output(report_out));
        os << md;
        if (!os) throw Error("cannot write " + report_out);
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
