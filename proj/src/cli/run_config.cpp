// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include "trmqe/cli.hpp"
#include "trmqe/errors.hpp"

namespace trmqe::cli {

namespace {

fs::path resolve_input(const fs::path& p, const fs::path& base_dir) {
  if (p.empty() || p.is_absolute() || base_dir.empty()) return p;
  return (base_dir / p).lexically_normal();
}

template <typename V>
void read_key(const nlohmann::json& j, const char* key, V& out, const std::string& prefix) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("has the wrong type", prefix + key);
  }
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& prefix) {
  if (!j.is_object()) throw ConfigError("must be an object", prefix.empty() ? "config" : prefix.substr(0, prefix.size() - 1));
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
      throw ConfigError("unknown field", prefix + key);
    }
  }
}

// Re-throws nested ConfigErrors with the section prefix on the field name.
template <typename F>
auto with_prefix(const std::string& prefix, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    if (e.field().empty()) throw;
    std::string msg = e.what();
    const std::string lead = e.field() + ": ";
    if (msg.rfind(lead, 0) == 0) msg = msg.substr(lead.size());
    throw ConfigError(msg, prefix + e.field());
  }
}

}  // namespace

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string(), "config");
  try {
    return nlohmann::json::parse(is, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what(), "config");
  }
}

void apply_override(nlohmann::json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like key.path=value, got '" + assignment + "'", "set");
  }
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }
  nlohmann::json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("empty path component in '" + key + "'", "set");
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError("'" + key + "' descends into a non-object", "set");
      *node = nlohmann::json::object();
    }
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

nlohmann::ordered_json data_spec_to_json(const DataSpec& d) {
  nlohmann::ordered_json j;
  j["name"] = d.name;
  j["train"] = d.train.generic_string();
  j["validation"] = d.validation.generic_string();
  j["test"] = d.test.generic_string();
  j["svd_k"] = d.svd_k;
  j["l2_normalize"] = d.l2_normalize;
  return j;
}

DataSpec data_spec_from_json(const nlohmann::json& j, const fs::path& base_dir, const std::string& prefix) {
  reject_unknown(j, {"name", "train", "validation", "test", "svd_k", "l2_normalize"}, prefix);
  DataSpec d;
  std::string train, validation, test;
  read_key(j, "name", d.name, prefix);
  read_key(j, "train", train, prefix);
  read_key(j, "validation", validation, prefix);
  read_key(j, "test", test, prefix);
  read_key(j, "svd_k", d.svd_k, prefix);
  read_key(j, "l2_normalize", d.l2_normalize, prefix);
  d.train = resolve_input(train, base_dir);
  d.validation = resolve_input(validation, base_dir);
  d.test = resolve_input(test, base_dir);
  if (d.name.empty()) throw ConfigError("must not be empty", prefix + "name");
  return d;
}

nlohmann::ordered_json run_config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["model"] = config_to_json(c.model);
  j["training"] = train_config_to_json(c.training);
  j["data"] = data_spec_to_json(c.data);
  j["eval"] = {{"bootstrap_resamples", c.bootstrap_resamples}, {"bootstrap_seed", c.bootstrap_seed}};
  j["output_dir"] = c.output_dir.generic_string();
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  reject_unknown(j, {"model", "training", "data", "eval", "output_dir"}, "");
  RunConfig c;
  if (j.contains("model")) {
    c.model = with_prefix("model.", [&] { return config_from_json(j.at("model")); });
    if (!j.at("model").contains("input_dim")) c.model.input_dim = 0;
  } else {
    c.model.input_dim = 0;
  }
  if (j.contains("training")) {
    c.training = with_prefix("training.", [&] { return train_config_from_json(j.at("training")); });
  }
  if (j.contains("data")) c.data = data_spec_from_json(j.at("data"), base_dir, "data.");
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    reject_unknown(e, {"bootstrap_resamples", "bootstrap_seed"}, "eval.");
    read_key(e, "bootstrap_resamples", c.bootstrap_resamples, "eval.");
    read_key(e, "bootstrap_seed", c.bootstrap_seed, "eval.");
  }
  std::string out = c.output_dir.string();
  read_key(j, "output_dir", out, "");
  c.output_dir = out;

  // Field-level checks up front, so a bad value fails before any data is read.
  TrmConfig probe = c.model;
  if (probe.input_dim == 0) probe.input_dim = 1;
  with_prefix("model.", [&] { probe.validate(); return 0; });
  with_prefix("training.", [&] { c.training.validate(); return 0; });
  if (c.bootstrap_resamples == 0) throw ConfigError("must be positive", "eval.bootstrap_resamples");
  return c;
}

RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides) {
  auto j = read_json_file(path);
  for (const auto& o : overrides) apply_override(j, o);
  return run_config_from_json(j, path.parent_path());
}

fs::path output_root() {
  if (const char* env = std::getenv("TRMQE_OUTPUT_ROOT"); env != nullptr && *env != '\0') return fs::path(env);
  return fs::current_path();
}

fs::path resolve_output(const fs::path& p) { return p.is_absolute() ? p : (output_root() / p).lexically_normal(); }

// ---- data -----------------------------------------------------------------

namespace {

EmbeddingFile read_split(const fs::path& path, const char* field) {
  if (path.empty()) throw ConfigError("no embedding file given", std::string("data.") + field);
  if (!fs::exists(path)) throw ConfigError("embedding file not found: " + path.string(), std::string("data.") + field);
  return read_embedding_file(path);
}

}  // namespace

PreparedData prepare_data(const DataSpec& spec) {
  auto train = read_split(spec.train, "train");
  auto validation = read_split(spec.validation, "validation");
  auto test = read_split(spec.test, "test");
  const std::size_t dim = train.header.input_dim;
  for (const auto* f : {&validation, &test}) {
    if (f->header.input_dim != dim) {
      throw ConfigError("embedding files disagree on input dimension (" + std::to_string(dim) + " vs " +
                            std::to_string(f->header.input_dim) + ")",
                        "data");
    }
  }
  PreparedData out;
  out.raw_input_dim = dim;
  out.encoder_id = train.header.encoder_id();
  out.train = std::move(train.examples);
  out.validation = std::move(validation.examples);
  out.test = std::move(test.examples);
  if (spec.l2_normalize) {
    l2_normalize_rows(out.train);
    l2_normalize_rows(out.validation);
    l2_normalize_rows(out.test);
  }
  if (spec.svd_k > 0) {
    out.projector = fit_svd(sample_token_rows(out.train), spec.svd_k);
    project_examples(out.train, *out.projector);
    project_examples(out.validation, *out.projector);
    project_examples(out.test, *out.projector);
  }
  return out;
}

std::vector<EmbeddedExample> load_for_model(const fs::path& path, const std::optional<SvdProjector>& projector,
                                            bool l2_normalize, std::size_t expected_dim) {
  if (!fs::exists(path)) throw ConfigError("embedding file not found: " + path.string(), "data");
  auto file = read_embedding_file(path);
  const std::size_t raw = projector ? projector->input_dim : expected_dim;
  if (file.header.input_dim != raw) {
    throw ConfigError("embedding dimension " + std::to_string(file.header.input_dim) +
                          " does not match the model's " + std::to_string(raw),
                      "data");
  }
  if (l2_normalize) l2_normalize_rows(file.examples);
  if (projector) project_examples(file.examples, *projector);
  return std::move(file.examples);
}

}  // namespace trmqe::cli
