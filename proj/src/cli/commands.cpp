// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>

#include <spdlog/spdlog.h>

#include "trmqe/checkpoint.hpp"
#include "trmqe/cli.hpp"
#include "trmqe/errors.hpp"

namespace trmqe::cli {

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os << text;
  if (!os) throw Error("cannot write " + path.string());
}

std::vector<Prediction> score(const TrmModel<float>& model, const std::vector<EmbeddedExample>& examples) {
  const auto q = predict(model, examples);
  std::vector<Prediction> out;
  out.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) out.push_back({examples[i].pair_id, examples[i].target01(), q[i]});
  return out;
}

void write_report(const EvalReport& report, const fs::path& dir) {
  write_text(dir / "eval_report.json", report.to_json().dump(2) + "\n");
  write_text(dir / "eval_report.md", report.to_markdown());
  write_predictions_tsv(dir / "predictions.tsv", report.predictions);
}

BootstrapOptions boot(std::size_t resamples, std::uint64_t seed) {
  BootstrapOptions b;
  b.resamples = resamples;
  b.seed = seed;
  return b;
}

}  // namespace

TrainOutcome cmd_train(const RunConfig& config, const fs::path& dir) {
  auto data = prepare_data(config.data);
  RunConfig resolved = config;
  const std::size_t dim = data.projector ? data.projector->k : data.raw_input_dim;
  if (resolved.model.input_dim == 0) {
    resolved.model.input_dim = dim;
  } else if (resolved.model.input_dim != dim) {
    throw ConfigError("is " + std::to_string(resolved.model.input_dim) + " but the data provides " +
                          std::to_string(dim),
                      "model.input_dim");
  }
  try {
    resolved.model.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(e.what(), "model." + e.field());
  }

  fs::create_directories(dir);
  TrainOutcome out;
  out.dir = dir;
  TrmModel<float> model(resolved.model);
  out.trainable_params = count_trainable(model.params(), resolved.training.freeze_spec);
  auto result = train(std::move(model), data.train, data.validation, resolved.training);
  out.log = result.log;
  out.warnings = result.warnings;

  out.report = build_eval_report(score(result.model, data.test),
                                 boot(resolved.bootstrap_resamples, resolved.bootstrap_seed));
  for (const auto& w : out.report.warnings) out.warnings.push_back(w);

  nlohmann::json meta;
  meta["encoder_id"] = data.encoder_id;
  meta["representation"] = resolved.data.name;
  meta["raw_input_dim"] = data.raw_input_dim;
  meta["l2_normalize"] = resolved.data.l2_normalize;
  meta["projector"] = data.projector ? data.projector->to_json() : nlohmann::json(nullptr);
  meta["selected_epoch"] = result.log.selected_epoch;
  meta["training"] = train_config_to_json(resolved.training);
  write_checkpoint(dir / "model.ckpt", result.model, meta);
  write_text(dir / "train_log.jsonl", result.log.to_jsonl(true));
  write_text(dir / "config.json", run_config_to_json(resolved).dump(2) + "\n");
  write_report(out.report, dir);
  return out;
}

EvalReport cmd_evaluate(const fs::path& checkpoint, const fs::path& data, const fs::path& dir,
                        std::size_t bootstrap_resamples, std::uint64_t bootstrap_seed) {
  if (!fs::exists(checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint.string(), "checkpoint");
  const auto ckpt = read_checkpoint(checkpoint);
  std::optional<SvdProjector> projector;
  if (ckpt.metadata.contains("projector") && !ckpt.metadata.at("projector").is_null()) {
    projector = SvdProjector::from_json(ckpt.metadata.at("projector"));
  }
  const bool l2 = ckpt.metadata.value("l2_normalize", false);
  const auto examples = load_for_model(data, projector, l2, ckpt.config.input_dim);
  if (examples.empty()) throw ConfigError("embedding file holds no examples: " + data.string(), "data");
  const auto model = ckpt.make_model();
  auto report = build_eval_report(score(model, examples), boot(bootstrap_resamples, bootstrap_seed));
  fs::create_directories(dir);
  write_report(report, dir);
  return report;
}

void cmd_synth(const SynthParams& params, const fs::path& out) {
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const auto examples = synth_examples(params);
  write_embedding_file(out, static_cast<std::uint32_t>(params.input_dim), synth_metadata(params), examples);
}

nlohmann::ordered_json ExtractCheck::to_json(const fs::path& path) const {
  nlohmann::ordered_json j;
  j["path"] = path.generic_string();
  j["version"] = header.version;
  j["input_dim"] = header.input_dim;
  j["count"] = header.count;
  j["encoder_id"] = header.encoder_id();
  j["source_rows"] = source_rows;
  j["translation_rows"] = translation_rows;
  j["status"] = "ok";
  return j;
}

ExtractCheck cmd_extract_check(const fs::path& path, std::optional<std::size_t> expect_dim,
                               const std::string& expect_encoder) {
  if (!fs::exists(path)) throw ConfigError("embedding file not found: " + path.string(), "file");
  EmbeddingReader reader(path);
  ExtractCheck out;
  out.header = reader.header();
  if (expect_dim && out.header.input_dim != *expect_dim) {
    throw ContractError("input_dim is " + std::to_string(out.header.input_dim) + ", expected " +
                        std::to_string(*expect_dim));
  }
  if (!expect_encoder.empty() && out.header.encoder_id() != expect_encoder) {
    throw ContractError("encoder_id is '" + out.header.encoder_id() + "', expected '" + expect_encoder + "'");
  }
  while (auto ex = reader.next()) {
    out.source_rows += ex->source.rows;
    out.translation_rows += ex->translation.rows;
  }
  return out;
}

}  // namespace trmqe::cli
