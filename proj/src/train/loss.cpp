// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>

#include "trmqe/errors.hpp"
#include "trmqe/train.hpp"

namespace trmqe {

std::string to_string(LossKind k) { return k == LossKind::mse ? "mse" : "bce"; }

LossKind parse_loss_kind(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "bce") return LossKind::bce;
  throw ConfigError("expected 'mse' or 'bce', got '" + s + "'", "loss");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("must be positive", "lr");
  if (!(weight_decay >= 0.0)) throw ConfigError("must be non-negative", "weight_decay");
  if (batch_size == 0) throw ConfigError("must be positive", "batch_size");
  if (max_epochs == 0) throw ConfigError("must be positive", "max_epochs");
  if (patience == 0) throw ConfigError("must be positive", "patience");
  if (!(per_step_loss_weight >= 0.0 && per_step_loss_weight <= 1.0)) {
    throw ConfigError("must be in [0, 1]", "per_step_loss_weight");
  }
  if (eval_every == 0) throw ConfigError("must be positive", "eval_every");
  if (!(grad_clip >= 0.0)) throw ConfigError("must be non-negative", "grad_clip");
  if (!(time_budget_s >= 0.0)) throw ConfigError("must be non-negative", "time_budget_s");
}

nlohmann::ordered_json train_config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["batch_size"] = c.batch_size;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["loss"] = to_string(c.loss);
  j["per_step_loss_weight"] = c.per_step_loss_weight;
  j["freeze_spec"] = c.freeze_spec;
  j["seed"] = c.seed;
  j["eval_every"] = c.eval_every;
  j["grad_clip"] = c.grad_clip;
  j["warmup_steps"] = c.warmup_steps;
  j["time_budget_s"] = c.time_budget_s;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("training config must be an object");
  TrainConfig c;
  const auto known = train_config_to_json(c);
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown training field", key);
  }
  auto read = [&](const char* key, auto& out) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(out);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("has the wrong type", key);
    }
  };
  read("lr", c.lr);
  read("weight_decay", c.weight_decay);
  read("batch_size", c.batch_size);
  read("max_epochs", c.max_epochs);
  read("patience", c.patience);
  read("per_step_loss_weight", c.per_step_loss_weight);
  read("freeze_spec", c.freeze_spec);
  read("seed", c.seed);
  read("eval_every", c.eval_every);
  read("grad_clip", c.grad_clip);
  read("warmup_steps", c.warmup_steps);
  read("time_budget_s", c.time_budget_s);
  if (j.contains("loss")) {
    std::string s;
    read("loss", s);
    c.loss = parse_loss_kind(s);
  }
  return c;
}

template <typename T>
ag::Tensor<T> qe_loss(const std::vector<ag::Tensor<T>>& step_quality, std::span<const T> target, LossKind kind,
                      double lambda) {
  if (step_quality.empty()) throw ContractError("qe_loss: no step predictions");
  auto one = [&](const ag::Tensor<T>& q) {
    return kind == LossKind::mse ? ag::mse_loss(q, target) : ag::bce_loss(q, target);
  };
  ag::Tensor<T> loss = one(step_quality.back());
  if (step_quality.size() > 1 && lambda > 0.0) {
    ag::Tensor<T> earlier = one(step_quality.front());
    for (std::size_t i = 1; i + 1 < step_quality.size(); ++i) earlier = ag::add(earlier, one(step_quality[i]));
    const double w = lambda / static_cast<double>(step_quality.size() - 1);
    loss = ag::add(loss, ag::scale(earlier, static_cast<T>(w)));
  }
  return loss;
}

template ag::Tensor<float> qe_loss(const std::vector<ag::Tensor<float>>&, std::span<const float>, LossKind, double);
template ag::Tensor<double> qe_loss(const std::vector<ag::Tensor<double>>&, std::span<const double>, LossKind,
                                    double);

}  // namespace trmqe
