// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0

#include "trmqe/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "trmqe/errors.hpp"

namespace trmqe {

nlohmann::ordered_json SynthParams::to_json() const {
  return {{"n_examples", n_examples},
          {"input_dim", input_dim},
          {"min_source_len", min_source_len},
          {"max_source_len", max_source_len},
          {"min_translation_len", min_translation_len},
          {"max_translation_len", max_translation_len},
          {"label_noise", label_noise},
          {"copy_noise", copy_noise},
          {"n_pairs", n_pairs},
          {"seed", seed}};
}

SynthParams SynthParams::from_json(const nlohmann::json& j) {
  SynthParams p;
  const SynthParams defaults;
  const auto known = defaults.to_json();
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown synth field", key);
  }
  auto read = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("wrong type", key);
    }
  };
  read("n_examples", p.n_examples);
  read("input_dim", p.input_dim);
  read("min_source_len", p.min_source_len);
  read("max_source_len", p.max_source_len);
  read("min_translation_len", p.min_translation_len);
  read("max_translation_len", p.max_translation_len);
  read("label_noise", p.label_noise);
  read("copy_noise", p.copy_noise);
  read("n_pairs", p.n_pairs);
  read("seed", p.seed);
  if (p.input_dim == 0) throw ConfigError("must be positive", "input_dim");
  if (p.min_source_len > p.max_source_len) throw ConfigError("exceeds max_source_len", "min_source_len");
  if (p.min_translation_len == 0) throw ConfigError("must be positive", "min_translation_len");
  if (p.min_translation_len > p.max_translation_len) {
    throw ConfigError("exceeds max_translation_len", "min_translation_len");
  }
  if (p.n_pairs == 0) throw ConfigError("must be positive", "n_pairs");
  if (p.label_noise < 0 || p.copy_noise < 0) throw ConfigError("noise must be non-negative", "label_noise");
  return p;
}

std::vector<SynthExample> synth_task(const SynthParams& p) {
  if (p.min_translation_len == 0 || p.min_translation_len > p.max_translation_len ||
      p.min_source_len > p.max_source_len || p.input_dim == 0 || p.n_pairs == 0) {
    throw ConfigError("inconsistent synth parameters");
  }
  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> src_len(p.min_source_len, p.max_source_len);
  std::uniform_int_distribution<std::size_t> tr_len(p.min_translation_len, p.max_translation_len);
  const std::size_t d = p.input_dim;

  std::vector<SynthExample> out;
  out.reserve(p.n_examples);
  for (std::size_t i = 0; i < p.n_examples; ++i) {
    const std::size_t s = src_len(rng), t = tr_len(rng);
    SynthExample se;
    auto& ex = se.example;
    ex.pair_id = "syn-" + std::to_string(i % p.n_pairs);
    ex.encoder_id = "synthetic";
    ex.source = FloatMatrix(s, d);
    for (auto& v : ex.source.data) v = static_cast<float>(gauss(rng));

    se.aligned = std::uniform_int_distribution<std::size_t>(0, std::min(s, t))(rng);
    // Which source rows are copied, and where in the translation they land.
    std::vector<std::size_t> src_rows(s), slots(t);
    std::iota(src_rows.begin(), src_rows.end(), 0);
    std::iota(slots.begin(), slots.end(), 0);
    std::shuffle(src_rows.begin(), src_rows.end(), rng);
    std::shuffle(slots.begin(), slots.end(), rng);

    ex.translation = FloatMatrix(t, d);
    std::vector<bool> filled(t, false);
    for (std::size_t a = 0; a < se.aligned; ++a) {
      auto dst = ex.translation.row(slots[a]);
      const auto src = ex.source.row(src_rows[a]);
      for (std::size_t j = 0; j < d; ++j) dst[j] = static_cast<float>(src[j] + p.copy_noise * gauss(rng));
      filled[slots[a]] = true;
    }
    for (std::size_t r = 0; r < t; ++r) {
      if (filled[r]) continue;
      for (auto& v : ex.translation.row(r)) v = static_cast<float>(gauss(rng));
    }
    const double f = static_cast<double>(se.aligned) / static_cast<double>(t);
    ex.da_z = static_cast<float>(4.0 * f - 2.0 + p.label_noise * gauss(rng));
    out.push_back(std::move(se));
  }
  return out;
}

std::vector<EmbeddedExample> synth_examples(const SynthParams& p) {
  auto task = synth_task(p);
  std::vector<EmbeddedExample> out;
  out.reserve(task.size());
  for (auto& se : task) out.push_back(std::move(se.example));
  return out;
}

nlohmann::json synth_metadata(const SynthParams& p) {
  return {{"encoder_id", "synthetic"},
          {"tokenizer", "none (synthetic Gaussian rows)"},
          {"generator", p.to_json()}};
}

double alignment_oracle(const EmbeddedExample& ex, double radius) {
  const std::size_t t = ex.translation.rows;
  if (t == 0) return 0.0;
  std::size_t hits = 0;
  const double r2 = radius * radius;
  for (std::size_t i = 0; i < t; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < ex.source.rows; ++j) {
      double dist = 0.0;
      for (std::size_t c = 0; c < ex.translation.cols; ++c) {
        const double diff = static_cast<double>(ex.translation(i, c)) - ex.source(j, c);
        dist += diff * diff;
      }
      best = std::min(best, dist);
    }
    hits += best <= r2;
  }
  return static_cast<double>(hits) / static_cast<double>(t);
}

double default_oracle_radius(const SynthParams& p) {
  // Copies sit near copy_noise·√d from their source, distractors near √(2d);
  // take the geometric mean of the two scales.
  const double d = static_cast<double>(p.input_dim);
  return std::sqrt(std::max(p.copy_noise * std::sqrt(d), 1e-6) * std::sqrt(2.0 * d));
}

}  // namespace trmqe
