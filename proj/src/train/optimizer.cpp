// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "trmqe/errors.hpp"
#include "trmqe/train.hpp"

namespace trmqe {

FreezePartition freeze_resolve(const std::vector<std::string>& freeze_spec, const ParamStore<float>& params) {
  FreezePartition out;
  std::vector<std::size_t> hits(freeze_spec.size(), 0);
  for (const auto& name : params.names()) {
    bool frozen = false;
    for (std::size_t i = 0; i < freeze_spec.size(); ++i) {
      if (!freeze_spec[i].empty() && glob_match(freeze_spec[i], name)) {
        frozen = true;
        ++hits[i];
      }
    }
    (frozen ? out.frozen : out.trainable).push_back(name);
  }
  for (std::size_t i = 0; i < freeze_spec.size(); ++i) {
    if (!freeze_spec[i].empty() && hits[i] == 0) {
      out.warnings.push_back("freeze pattern '" + freeze_spec[i] + "' matches no parameter");
    }
  }
  return out;
}

AdamW::AdamW(double lr, double weight_decay, double beta1, double beta2, double eps)
    : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
  if (!(lr > 0.0)) throw ConfigError("must be positive", "lr");
}

void AdamW::step(ParamStore<float>& params, const std::vector<std::string>& names, std::optional<double> lr) {
  ++t_;
  const double rate = lr.value_or(lr_);
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (const auto& name : names) {
    auto& p = params.at(name);
    if (!p.has_grad()) continue;
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(p.numel(), 0.0);
      v.assign(p.numel(), 0.0);
    }
    const bool decay = p.dim() == 2 && wd_ > 0.0;
    auto w = p.mutable_data();
    const auto g = p.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      m[i] = b1_ * m[i] + (1.0 - b1_) * gi;
      v[i] = b2_ * v[i] + (1.0 - b2_) * gi * gi;
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      double wi = w[i];
      if (decay) wi -= rate * wd_ * wi;
      w[i] = static_cast<float>(wi - rate * update);
    }
  }
}

double clip_grad_norm(ParamStore<float>& params, const std::vector<std::string>& names, double max_norm) {
  double ss = 0.0;
  for (const auto& name : names) {
    const auto& p = params.at(name);
    for (float g : p.grad()) ss += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(ss);
  if (max_norm > 0.0 && norm > max_norm) {
    const auto factor = static_cast<float>(max_norm / (norm + 1e-12));
    for (const auto& name : names) {
      auto& p = params.at(name);
      if (!p.has_grad()) continue;
      for (auto& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

}  // namespace trmqe
