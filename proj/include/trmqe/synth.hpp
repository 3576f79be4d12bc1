// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic stand-in for encoder features. Each translation holds noisy copies
// of some source rows ("aligned") mixed with unrelated Gaussian rows. Quality
// rises with the aligned fraction f = aligned / t:
//   da_z = 4·f − 2 + N(0, σ²)

#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "trmqe/embedding_file.hpp"

namespace trmqe {

struct SynthParams {
  std::size_t n_examples = 1000;
  std::size_t input_dim = 32;
  std::size_t min_source_len = 3;
  std::size_t max_source_len = 8;
  std::size_t min_translation_len = 3;
  std::size_t max_translation_len = 8;
  double label_noise = 0.05;  // σ on da_z
  double copy_noise = 0.1;    // per-coordinate noise on aligned copies
  std::size_t n_pairs = 2;    // pair ids "syn-0", "syn-1", ...
  std::uint64_t seed = 0;

  nlohmann::ordered_json to_json() const;
  static SynthParams from_json(const nlohmann::json& j);
};

struct SynthExample {
  EmbeddedExample example;
  std::size_t aligned = 0;  // ground-truth aligned row count
};

std::vector<SynthExample> synth_task(const SynthParams& p);
std::vector<EmbeddedExample> synth_examples(const SynthParams& p);

// {"encoder_id": "synthetic", "generator": params}
nlohmann::json synth_metadata(const SynthParams& p);

// Alignment-count oracle: fraction of translation rows whose nearest source row
// lies within `radius` (Euclidean).
double alignment_oracle(const EmbeddedExample& ex, double radius);

// A radius separating copies from distractors for the given params.
double default_oracle_radius(const SynthParams& p);

}  // namespace trmqe
