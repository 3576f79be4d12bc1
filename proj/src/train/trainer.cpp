// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <spdlog/spdlog.h>

#include "trmqe/errors.hpp"
#include "trmqe/metrics.hpp"
#include "trmqe/train.hpp"

namespace trmqe {

namespace {

using Snapshot = std::map<std::string, std::vector<float>>;

Snapshot snapshot(const ParamStore<float>& params) {
  Snapshot s;
  for (const auto& [name, t] : params.entries()) s.emplace(name, std::vector<float>(t.data().begin(), t.data().end()));
  return s;
}

void restore(ParamStore<float>& params, const Snapshot& s) {
  for (auto& [name, t] : params.entries()) {
    const auto& src = s.at(name);
    std::copy(src.begin(), src.end(), t.mutable_data().begin());
  }
}

std::vector<SequencePair> pairs_for(const std::vector<EmbeddedExample>& xs, std::span<const std::size_t> idx) {
  std::vector<SequencePair> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back({&xs[i].source, &xs[i].translation});
  return out;
}

nlohmann::ordered_json opt(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

std::string TrainLog::to_jsonl(bool include_timing) const {
  std::ostringstream os;
  for (const auto& e : epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["evaluated"] = e.evaluated;
    j["val_pearson"] = opt(e.val_pearson);
    j["val_spearman"] = opt(e.val_spearman);
    j["val_mae"] = opt(e.val_mae);
    j["selected"] = e.epoch == selected_epoch;
    if (include_timing) j["wall_clock_s"] = e.wall_clock_s;
    os << j.dump() << '\n';
  }
  return os.str();
}

std::vector<double> predict(const TrmModel<float>& model, const std::vector<EmbeddedExample>& examples,
                            std::size_t batch_size) {
  if (batch_size == 0) throw ContractError("predict: batch_size must be positive");
  ag::NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(examples.size());
  std::vector<std::size_t> idx(examples.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, examples.size() - start);
    const auto pairs = pairs_for(examples, std::span(idx).subspan(start, n));
    const auto result = model.forward(pack_batch<float>(pairs, model.config()));
    for (float q : result.quality.data()) out.push_back(q);
  }
  return out;
}

TrainResult train(TrmModel<float> model, const std::vector<EmbeddedExample>& train_set,
                  const std::vector<EmbeddedExample>& val_set, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("training split is empty", "train");
  if (val_set.empty()) throw ConfigError("validation split is empty", "validation");

  TrainResult result{std::move(model), {}, {}};
  auto& m = result.model;
  auto& params = m.params();
  const auto part = freeze_resolve(cfg.freeze_spec, params);
  for (const auto& w : part.warnings) {
    spdlog::warn("{}", w);
    result.warnings.push_back(w);
  }
  // Frozen tensors take no part in backward at all, which also guarantees they stay bit-identical.
  for (const auto& name : part.frozen) params.at(name).set_requires_grad(false);

  std::vector<double> val_gold;
  val_gold.reserve(val_set.size());
  for (const auto& ex : val_set) val_gold.push_back(ex.target01());

  AdamW opt_(cfg.lr, cfg.weight_decay);
  std::mt19937_64 shuffle_rng(cfg.seed);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
  const ForwardOptions fwd{true, &dropout_rng};
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  double best = -std::numeric_limits<double>::infinity();
  Snapshot best_params = snapshot(params);
  std::size_t since_best = 0, truncated = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - b0);
      const auto idx = std::span(order).subspan(b0, n);
      const auto packed = pack_batch<float>(pairs_for(train_set, idx), m.config());
      if (epoch == 1) truncated += packed.truncated;
      std::vector<float> target;
      target.reserve(n);
      for (std::size_t i : idx) target.push_back(static_cast<float>(train_set[i].target01()));

      params.zero_grad();
      ag::Tensor32 loss;
      try {
        const auto out = m.forward(packed, fwd);
        std::vector<ag::Tensor32> steps;
        for (const auto& s : out.steps) steps.push_back(s.quality);
        loss = qe_loss(steps, std::span<const float>(target), cfg.loss, cfg.per_step_loss_weight);
      } catch (const NumericError& e) {
        ag::Tape<float>::current().clear();
        throw TrainError("non-finite activations at epoch " + std::to_string(epoch) + ", batch " +
                         std::to_string(batches + 1) + ": " + e.what());
      }
      const float lv = loss.item();
      if (!std::isfinite(lv)) {
        ag::Tape<float>::current().clear();
        throw TrainError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                         std::to_string(batches + 1));
      }
      ag::backward(loss);
      if (cfg.grad_clip > 0.0) clip_grad_norm(params, part.trainable, cfg.grad_clip);
      const double warm =
          cfg.warmup_steps == 0 ? 1.0
                                : std::min(1.0, static_cast<double>(opt_.steps() + 1) / static_cast<double>(cfg.warmup_steps));
      opt_.step(params, part.trainable, cfg.lr * warm);
      loss_sum += lv;
      ++batches;
    }
    if (epoch == 1 && truncated > 0) {
      const std::string w = std::to_string(truncated) + " training example(s) exceeded max_seq_len and were truncated";
      spdlog::warn("{}", w);
      result.warnings.push_back(w);
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(batches);
    const bool last = epoch == cfg.max_epochs;
    if (epoch % cfg.eval_every == 0 || last) {
      log.evaluated = true;
      const auto pred = predict(m, val_set);
      log.val_mae = mae(pred, val_gold);
      if (pred.size() >= 2) try {
        log.val_pearson = pearson(pred, val_gold);
        log.val_spearman = spearman(pred, val_gold);
      } catch (const UndefinedMetricError&) {
        // Constant predictions: leave correlations empty; the epoch cannot win selection.
      }
      const double score = log.val_spearman.value_or(-std::numeric_limits<double>::infinity());
      if (score > best || result.log.selected_epoch == 0) {
        best = score;
        best_params = snapshot(params);
        result.log.selected_epoch = epoch;
        since_best = 0;
      } else {
        ++since_best;
      }
    }
    log.wall_clock_s = elapsed();
    spdlog::info("epoch {:3d}  loss {:.5f}  val spearman {}", epoch, log.train_loss,
                 log.val_spearman ? fmt::format("{:.4f}", *log.val_spearman) : std::string("-"));
    result.log.epochs.push_back(log);
    if (on_epoch && !on_epoch(log)) break;
    if (since_best >= cfg.patience) {
      result.log.stopped_early = true;
      break;
    }
    if (cfg.time_budget_s > 0.0 && log.wall_clock_s >= cfg.time_budget_s) {
      result.log.budget_exhausted = true;
      break;
    }
  }

  // Stopped before any validation pass (callback or budget): keep the final weights.
  if (result.log.selected_epoch == 0) {
    result.log.selected_epoch = result.log.epochs.back().epoch;
    best_params = snapshot(params);
  }
  restore(params, best_params);
  for (const auto& name : part.frozen) params.at(name).set_requires_grad(true);
  params.zero_grad();
  return result;
}

}  // namespace trmqe
