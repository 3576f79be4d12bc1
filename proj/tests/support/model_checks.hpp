// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0
//
// Model-level checks shared by the unit suite and the acceptance binary.

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "support/test_util.hpp"
#include "trmqe/model.hpp"

namespace trmqe::test {

inline TrmConfig tiny_config(std::size_t l_cycles, std::size_t steps) {
  TrmConfig c;
  c.input_dim = 4;
  c.hidden_dim = 8;
  c.n_heads = 2;
  c.l_cycles = l_cycles;
  c.external_steps = steps;
  c.max_seq_len = 6;
  c.dropout = 0.0;
  return c;
}

// Two examples (s,t) = (1,2) and (2,1), so every sequence has 6 positions.
struct TinyBatch {
  std::vector<FloatMatrix> mats;
  std::vector<SequencePair> pairs;
  std::vector<double> targets;
};

inline TinyBatch tiny_batch(std::size_t input_dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TinyBatch b;
  b.mats.reserve(4);
  b.mats.push_back(random_matrix(1, input_dim, rng));
  b.mats.push_back(random_matrix(2, input_dim, rng));
  b.mats.push_back(random_matrix(2, input_dim, rng));
  b.mats.push_back(random_matrix(1, input_dim, rng));
  b.pairs = {{&b.mats[0], &b.mats[1]}, {&b.mats[2], &b.mats[3]}};
  b.targets = {0.3, 0.8};
  return b;
}

// Max relative error of the full forward + MSE loss (over every step's quality
// and the q_continue logits, so each parameter receives a signal) with respect
// to every parameter, in 64-bit.
inline ag::GradCheckResult full_model_grad_check(std::size_t l_cycles, std::size_t steps, std::uint64_t seed,
                                                 HeadType head = HeadType::halting) {
  TrmConfig cfg = tiny_config(l_cycles, steps);
  cfg.head_type = head;
  TrmModel<double> model(cfg);
  model.randomize(seed, 0.3);
  const TinyBatch data = tiny_batch(cfg.input_dim, seed + 1000);
  const auto packed = pack_batch<double>(data.pairs, cfg);

  std::vector<ag::Tensor64> inputs;
  for (auto& [_, t] : model.params().entries()) inputs.push_back(t);

  auto f = [&]() {
    const auto result = model.forward(packed);
    ag::Tensor64 loss = ag::mse_loss(result.quality, std::span<const double>(data.targets));
    for (const auto& s : result.steps) {
      loss = ag::add(loss, ag::mse_loss(s.quality, std::span<const double>(data.targets)));
      loss = ag::add(loss, ag::scale(weighted_sum(ag::slice_cols(s.q_logits, 1, 1), seed), 0.1));
    }
    return loss;
  };
  return ag::grad_check(f, inputs);
}

}  // namespace trmqe::test
