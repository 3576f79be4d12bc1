// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0
//
// Library side of the `trmqe` command: run configs, single trainings,
// evaluation, resumable sweeps, and report tables. The executable in tools/
// only parses arguments and maps exceptions to exit codes.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trmqe/embedding_file.hpp"
#include "trmqe/model.hpp"
#include "trmqe/report.hpp"
#include "trmqe/svd.hpp"
#include "trmqe/synth.hpp"
#include "trmqe/train.hpp"

namespace trmqe::cli {

namespace fs = std::filesystem;

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// ---- configuration ----------------------------------------------------------

// One representation: three embedding files plus optional post-processing.
struct DataSpec {
  std::string name = "default";
  fs::path train, validation, test;
  std::size_t svd_k = 0;  // 0 keeps the raw input dimension
  bool l2_normalize = false;

  bool operator==(const DataSpec&) const = default;
};

nlohmann::ordered_json data_spec_to_json(const DataSpec& d);
DataSpec data_spec_from_json(const nlohmann::json& j, const fs::path& base_dir, const std::string& field_prefix);

struct RunConfig {
  TrmConfig model;  // model.input_dim == 0 takes the dimension from the data
  TrainConfig training;
  DataSpec data;
  std::size_t bootstrap_resamples = 1000;
  std::uint64_t bootstrap_seed = 0;
  fs::path output_dir = "run";

  bool operator==(const RunConfig&) const = default;
};

nlohmann::json read_json_file(const fs::path& path);

// Applies "dotted.key=value" to a JSON tree. The value is parsed as JSON when
// it parses, otherwise taken as a string.
void apply_override(nlohmann::json& root, const std::string& assignment);

nlohmann::ordered_json run_config_to_json(const RunConfig& c);
// Relative data paths resolve against `base_dir` (the config file's directory).
RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& base_dir = {});
RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides = {});

// TRMQE_OUTPUT_ROOT when set, else the working directory.
fs::path output_root();
// Absolute paths pass through; relative ones land under output_root().
fs::path resolve_output(const fs::path& p);

// ---- data -----------------------------------------------------------------

struct PreparedData {
  std::vector<EmbeddedExample> train, validation, test;
  std::optional<SvdProjector> projector;
  std::size_t raw_input_dim = 0;
  std::string encoder_id;
};

// Reads the three files, checks they agree on dimension, fits the SVD on the
// training split when requested. A missing file is a ConfigError naming it.
PreparedData prepare_data(const DataSpec& spec);

// Reads one file and applies the same post-processing a checkpoint recorded.
std::vector<EmbeddedExample> load_for_model(const fs::path& path, const std::optional<SvdProjector>& projector,
                                            bool l2_normalize, std::size_t expected_dim);

// ---- commands ---------------------------------------------------------------

struct TrainOutcome {
  fs::path dir;
  TrainLog log;
  EvalReport report;
  std::size_t trainable_params = 0;
  std::vector<std::string> warnings;
};

// Writes model.ckpt, train_log.jsonl, eval_report.json, eval_report.md,
// predictions.tsv and config.json into `dir`.
TrainOutcome cmd_train(const RunConfig& config, const fs::path& dir);

// Re-scores a checkpoint on one embedding file, writing the report files and
// predictions.tsv into `dir`.
EvalReport cmd_evaluate(const fs::path& checkpoint, const fs::path& data, const fs::path& dir,
                        std::size_t bootstrap_resamples = 1000, std::uint64_t bootstrap_seed = 0);

void cmd_synth(const SynthParams& params, const fs::path& out);

struct ExtractCheck {
  EmbeddingHeader header;
  std::size_t source_rows = 0, translation_rows = 0;
  nlohmann::ordered_json to_json(const fs::path& path) const;
};

// Streams every record; throws FormatError/CorruptionError on the first defect,
// ContractError when an expectation does not hold.
ExtractCheck cmd_extract_check(const fs::path& path, std::optional<std::size_t> expect_dim = {},
                               const std::string& expect_encoder = {});

// ---- sweeps ---------------------------------------------------------------

struct FreezeVariant {
  std::string name;
  std::vector<std::string> spec;
  bool operator==(const FreezeVariant&) const = default;
};

struct SweepAxes {
  std::vector<Architecture> architecture;
  std::vector<DataSpec> embeddings;
  std::vector<FreezeVariant> freeze;
  std::vector<std::size_t> external_steps;
  std::vector<std::size_t> l_cycles;
  std::vector<std::uint64_t> seeds;
};

struct SweepSpec {
  int phase = 1;
  RunConfig base;
  SweepAxes grid;  // empty axes inherit the single value from `base`
  fs::path output_dir = "sweep";
};

SweepSpec sweep_spec_from_json(const nlohmann::json& j, const fs::path& base_dir = {});
SweepSpec load_sweep_spec(const fs::path& path, const std::vector<std::string>& overrides = {});

struct SweepCell {
  std::string id;  // also the cell's directory name
  RunConfig config;
  std::string architecture, embedding, freeze;
  std::size_t external_steps = 0, l_cycles = 0;
  std::uint64_t seed = 0;
};

// Cartesian product in fixed axis order: architecture, embedding, freeze,
// external_steps, l_cycles, seed. Every cell config is validated.
std::vector<SweepCell> expand_sweep(const SweepSpec& spec);

struct SweepOptions {
  std::size_t workers = 1;
  std::optional<std::size_t> max_cells;  // run at most this many pending cells
};

struct SweepSummary {
  std::size_t cells = 0, ran = 0, skipped = 0, failed = 0, pending = 0;
  fs::path results_csv, results_md;
};

// Cells with a done marker are skipped; results.csv is rebuilt from every
// completed cell directory after each run.
SweepSummary cmd_sweep(const SweepSpec& spec, const fs::path& dir, const SweepOptions& opts = {});

const std::vector<std::string>& results_columns();

// ---- report ---------------------------------------------------------------

struct ResultsTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  const std::string& at(std::size_t row, const std::string& column) const;
};

ResultsTable read_results_csv(const fs::path& path);

// Markdown tables from a sweep's results.csv. Throws ConfigError when no cell completed.
std::string cmd_report(const fs::path& results_dir);

}  // namespace trmqe::cli
