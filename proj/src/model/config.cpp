// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0

#include <fnmatch.h>

#include "trmqe/errors.hpp"
#include "trmqe/model.hpp"

namespace trmqe {

std::string to_string(HeadType h) { return h == HeadType::halting ? "halting" : "decoupled"; }
std::string to_string(Architecture a) { return a == Architecture::trm ? "trm" : "standard"; }

HeadType parse_head_type(const std::string& s) {
  if (s == "halting") return HeadType::halting;
  if (s == "decoupled") return HeadType::decoupled;
  throw ConfigError("expected 'halting' or 'decoupled', got '" + s + "'", "head_type");
}

Architecture parse_architecture(const std::string& s) {
  if (s == "trm") return Architecture::trm;
  if (s == "standard") return Architecture::standard;
  throw ConfigError("expected 'trm' or 'standard', got '" + s + "'", "architecture");
}

void TrmConfig::validate() const {
  if (input_dim == 0) throw ConfigError("must be positive", "input_dim");
  if (hidden_dim == 0) throw ConfigError("must be positive", "hidden_dim");
  if (n_heads == 0 || hidden_dim % n_heads != 0) {
    throw ConfigError("hidden_dim " + std::to_string(hidden_dim) + " is not divisible by n_heads " +
                          std::to_string(n_heads),
                      "n_heads");
  }
  if (ffn_mult == 0) throw ConfigError("must be positive", "ffn_mult");
  if (l_cycles < 1 || l_cycles > 6) throw ConfigError("must be in [1, 6]", "l_cycles");
  if (external_steps < 1 || external_steps > 16) throw ConfigError("must be in [1, 16]", "external_steps");
  if (architecture == Architecture::standard && standard_depth == 0) {
    throw ConfigError("must be positive for the standard architecture", "standard_depth");
  }
  if (max_seq_len < 3) throw ConfigError("must leave room for the three marker tokens", "max_seq_len");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("must be in [0, 1)", "dropout");
  if (!(norm_eps >= 0.0)) throw ConfigError("must be non-negative", "norm_eps");
}

nlohmann::ordered_json config_to_json(const TrmConfig& c) {
  nlohmann::ordered_json j;
  j["input_dim"] = c.input_dim;
  j["hidden_dim"] = c.hidden_dim;
  j["n_heads"] = c.n_heads;
  j["ffn_mult"] = c.ffn_mult;
  j["l_cycles"] = c.l_cycles;
  j["external_steps"] = c.external_steps;
  j["layers_per_cycle"] = TrmConfig::layers_per_cycle;
  j["head_type"] = to_string(c.head_type);
  j["architecture"] = to_string(c.architecture);
  j["standard_depth"] = c.standard_depth;
  j["max_seq_len"] = c.max_seq_len;
  j["dropout"] = c.dropout;
  j["norm_eps"] = c.norm_eps;
  j["seed"] = c.seed;
  return j;
}

namespace {

template <typename V>
void read_field(const nlohmann::json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("has the wrong type", key);
  }
}

}  // namespace

TrmConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be an object");
  static const char* known[] = {"input_dim",    "hidden_dim",     "n_heads",      "ffn_mult",
                                "l_cycles",     "external_steps", "head_type",    "architecture",
                                "standard_depth", "max_seq_len",  "dropout",      "norm_eps",
                                "seed",         "layers_per_cycle"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
      throw ConfigError("unknown model field", key);
    }
  }
  TrmConfig c;
  read_field(j, "input_dim", c.input_dim);
  read_field(j, "hidden_dim", c.hidden_dim);
  read_field(j, "n_heads", c.n_heads);
  read_field(j, "ffn_mult", c.ffn_mult);
  read_field(j, "l_cycles", c.l_cycles);
  read_field(j, "external_steps", c.external_steps);
  read_field(j, "standard_depth", c.standard_depth);
  read_field(j, "max_seq_len", c.max_seq_len);
  read_field(j, "dropout", c.dropout);
  read_field(j, "norm_eps", c.norm_eps);
  read_field(j, "seed", c.seed);
  if (j.contains("layers_per_cycle")) {
    std::size_t lpc = 0;
    read_field(j, "layers_per_cycle", lpc);
    if (lpc != TrmConfig::layers_per_cycle) throw ConfigError("is fixed at 2", "layers_per_cycle");
  }
  std::string s;
  if (j.contains("head_type")) {
    read_field(j, "head_type", s);
    c.head_type = parse_head_type(s);
  }
  if (j.contains("architecture")) {
    read_field(j, "architecture", s);
    c.architecture = parse_architecture(s);
  }
  return c;
}

bool glob_match(std::string_view pattern, std::string_view name) {
  const std::string p(pattern), n(name);
  return ::fnmatch(p.c_str(), n.c_str(), 0) == 0;
}

}  // namespace trmqe
