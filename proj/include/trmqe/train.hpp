// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0
//
// Supervised training of the quality head: loss over per-step predictions,
// AdamW with decoupled decay, freeze patterns, early stopping on validation
// Spearman.

#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trmqe/embedding_file.hpp"
#include "trmqe/model.hpp"

namespace trmqe {

enum class LossKind { mse, bce };
std::string to_string(LossKind k);
LossKind parse_loss_kind(const std::string& s);

struct TrainConfig {
  double lr = 3e-4;
  double weight_decay = 0.01;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 30;
  std::size_t patience = 5;  // evaluations without improvement before stopping
  LossKind loss = LossKind::mse;
  double per_step_loss_weight = 0.0;  // λ
  std::vector<std::string> freeze_spec;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;  // epochs between validation passes
  double grad_clip = 1.0;      // global norm; 0 disables
  std::size_t warmup_steps = 100;
  // Stop once this much wall-clock time has been spent; 0 means no limit.
  double time_budget_s = 0.0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::ordered_json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// l(final) + λ · mean over earlier steps of l(step). Each entry is [B×1].
template <typename T>
ag::Tensor<T> qe_loss(const std::vector<ag::Tensor<T>>& step_quality, std::span<const T> target, LossKind kind,
                      double lambda);

// ---- freezing -------------------------------------------------------------

struct FreezePartition {
  std::vector<std::string> frozen;
  std::vector<std::string> trainable;
  std::vector<std::string> warnings;  // patterns that matched nothing
};

FreezePartition freeze_resolve(const std::vector<std::string>& freeze_spec, const ParamStore<float>& params);

// ---- optimizer ------------------------------------------------------------

class AdamW {
 public:
  AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // Updates the named parameters that carry a gradient. Decay applies to 2-D
  // weight matrices only. `lr` overrides the base rate for this step.
  void step(ParamStore<float>& params, const std::vector<std::string>& names, std::optional<double> lr = {});
  std::size_t steps() const { return t_; }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

// Scales gradients of `names` so their joint L2 norm is at most `max_norm`; returns the pre-clip norm.
double clip_grad_norm(ParamStore<float>& params, const std::vector<std::string>& names, double max_norm);

// ---- training loop --------------------------------------------------------

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::optional<double> val_pearson, val_spearman, val_mae;
  double wall_clock_s = 0.0;  // since training started
  bool evaluated = false;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  std::size_t selected_epoch = 0;
  bool stopped_early = false;
  bool budget_exhausted = false;

  // One JSON object per epoch; `include_timing` controls the wall_clock_s field.
  std::string to_jsonl(bool include_timing = true) const;
};

struct TrainResult {
  TrmModel<float> model;  // best validation checkpoint
  TrainLog log;
  std::vector<std::string> warnings;
};

// Called after every epoch; returning false stops training.
using EpochCallback = std::function<bool(const EpochLog&)>;

TrainResult train(TrmModel<float> model, const std::vector<EmbeddedExample>& train_set,
                  const std::vector<EmbeddedExample>& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

// Inference in fixed batches, in input order.
std::vector<double> predict(const TrmModel<float>& model, const std::vector<EmbeddedExample>& examples,
                            std::size_t batch_size = 64);

}  // namespace trmqe
