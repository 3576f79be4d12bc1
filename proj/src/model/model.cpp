// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>

#include "trmqe/errors.hpp"
#include "trmqe/model.hpp"

namespace trmqe {

using ag::Shape;
using ag::Tensor;

namespace {

constexpr std::uint32_t kTokens = 0, kCls = 1, kSep = 2, kEnd = 3;

void add_layer(auto& params, const std::string& prefix, std::size_t d, std::size_t ffn) {
  params.add(prefix + "attn_norm.gain", Shape{d});
  params.add(prefix + "attn.wq", Shape{d, d});
  params.add(prefix + "attn.wk", Shape{d, d});
  params.add(prefix + "attn.wv", Shape{d, d});
  params.add(prefix + "attn.wo", Shape{d, d});
  params.add(prefix + "ffn_norm.gain", Shape{d});
  params.add(prefix + "ffn.w1", Shape{d, ffn});
  params.add(prefix + "ffn.b1", Shape{ffn});
  params.add(prefix + "ffn.w2", Shape{ffn, d});
  params.add(prefix + "ffn.b2", Shape{d});
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

double truncated_normal(std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> n(0.0, 1.0);
  double v;
  do {
    v = n(rng);
  } while (std::abs(v) > 2.0);
  return v * stddev;
}

}  // namespace

std::string shared_layer_prefix(std::size_t layer) { return "block.layer" + std::to_string(layer) + "."; }
std::string stack_layer_prefix(std::size_t layer) { return "stack.layer" + std::to_string(layer) + "."; }

// ---- ParamStore -----------------------------------------------------------

template <typename T>
Tensor<T>& ParamStore<T>::add(const std::string& name, Shape shape) {
  auto [it, inserted] = params_.emplace(name, Tensor<T>::zeros(std::move(shape), true));
  if (!inserted) throw ConfigError("duplicate parameter", name);
  return it->second;
}

template <typename T>
Tensor<T>& ParamStore<T>::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("missing parameter", name);
  return it->second;
}

template <typename T>
const Tensor<T>& ParamStore<T>::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("missing parameter", name);
  return it->second;
}

template <typename T>
std::vector<std::string> ParamStore<T>::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

template <typename T>
std::size_t count_trainable(const ParamStore<T>& params, const std::vector<std::string>& freeze_spec) {
  std::size_t total = 0;
  for (const auto& [name, t] : params.entries()) {
    const bool frozen = std::any_of(freeze_spec.begin(), freeze_spec.end(),
                                    [&](const std::string& p) { return !p.empty() && glob_match(p, name); });
    if (!frozen) total += t.numel();
  }
  return total;
}

// ---- packing --------------------------------------------------------------

template <typename T>
PackedBatch<T> pack_batch(std::span<const SequencePair> pairs, const TrmConfig& config) {
  PackedBatch<T> batch;
  const std::size_t din = config.input_dim;
  std::size_t token_rows = 0;
  std::vector<std::pair<std::size_t, std::size_t>> kept;
  kept.reserve(pairs.size());
  for (const auto& p : pairs) {
    for (const FloatMatrix* m : {p.source, p.translation}) {
      if (m == nullptr) throw ContractError("pack_batch: null embedding matrix");
      if (m->rows > 0 && m->cols != din) {
        throw DimensionError("pack_batch: embedding width " + std::to_string(m->cols) +
                             " does not match input_dim " + std::to_string(din));
      }
    }
    std::size_t s = p.source->rows, t = p.translation->rows;
    const std::size_t budget = config.max_seq_len - 3;
    if (s + t > budget) {
      ++batch.truncated;
      s = std::min(s, budget);
      t = budget - s;
    }
    kept.emplace_back(s, t);
    token_rows += s + t;
  }

  std::vector<T> tokens;
  tokens.reserve(token_rows * din);
  batch.offsets.push_back(0);
  std::size_t next_token = 0;
  auto push_tokens = [&](const FloatMatrix& m, std::size_t count, std::size_t& pos) {
    for (std::size_t r = 0; r < count; ++r) {
      for (float v : m.row(r)) tokens.push_back(static_cast<T>(v));
      batch.layout.push_back({kTokens, next_token++});
      batch.positions.push_back(pos++);
    }
  };
  auto push_marker = [&](std::uint32_t which, std::size_t& pos) {
    batch.layout.push_back({which, 0});
    batch.positions.push_back(pos++);
  };
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    std::size_t pos = 0;
    push_marker(kCls, pos);
    push_tokens(*pairs[i].source, kept[i].first, pos);
    push_marker(kSep, pos);
    push_tokens(*pairs[i].translation, kept[i].second, pos);
    push_marker(kEnd, pos);
    batch.offsets.push_back(batch.layout.size());
  }
  batch.tokens = Tensor<T>(Shape{token_rows, din}, std::move(tokens));
  return batch;
}

// ---- model ----------------------------------------------------------------

template <typename T>
std::vector<QHeadOutput> ForwardResult<T>::head_outputs(std::size_t step) const {
  const auto& s = steps.at(step);
  const std::size_t b = s.quality.numel();
  std::vector<QHeadOutput> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    out[i].q_halt = static_cast<double>(s.q_logits.data()[2 * i]);
    out[i].q_continue = static_cast<double>(s.q_logits.data()[2 * i + 1]);
    out[i].quality = static_cast<double>(s.quality.data()[i]);
  }
  return out;
}

template <typename T>
TrmModel<T>::TrmModel(TrmConfig config) : config_(std::move(config)) {
  config_.validate();
  const std::size_t d = config_.hidden_dim, ffn = config_.ffn_mult * d;
  params_.add("embedding.proj.weight", Shape{config_.input_dim, d});
  params_.add("embedding.proj.bias", Shape{d});
  params_.add("embedding.cls", Shape{d});
  params_.add("embedding.sep", Shape{d});
  params_.add("embedding.end", Shape{d});
  if (config_.architecture == Architecture::trm) {
    for (std::size_t l = 0; l < TrmConfig::layers_per_cycle; ++l) add_layer(params_, shared_layer_prefix(l), d, ffn);
  } else {
    for (std::size_t l = 0; l < config_.standard_depth; ++l) add_layer(params_, stack_layer_prefix(l), d, ffn);
  }
  params_.add("head.norm.gain", Shape{d});
  params_.add("head.q.weight", Shape{d, 2});
  params_.add("head.q.bias", Shape{2});
  params_.add("head.reg.weight", Shape{d, 1});
  params_.add("head.reg.bias", Shape{1});
  initialize(config_.seed);
}

template <typename T>
void TrmModel<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  // std::map iteration order is sorted by name, so draws are reproducible.
  for (auto& [name, t] : params_.entries()) {
    auto d = t.mutable_data();
    if (ends_with(name, ".gain")) {
      std::fill(d.begin(), d.end(), T(1));
    } else if (ends_with(name, ".bias") || ends_with(name, ".b1") || ends_with(name, ".b2") ||
               ends_with(name, "attn.wo") || ends_with(name, "ffn.w2")) {
      std::fill(d.begin(), d.end(), T(0));
    } else if (name == "embedding.proj.weight") {
      // Unit-variance projection of unit-variance inputs, comparable to the position signal.
      const double sd = 1.0 / std::sqrt(static_cast<double>(config_.input_dim));
      for (auto& v : d) v = static_cast<T>(truncated_normal(rng, sd));
    } else if (ends_with(name, "attn.wq") || ends_with(name, "attn.wk") || ends_with(name, "attn.wv") ||
               ends_with(name, "ffn.w1")) {
      // Fan-in scaling. With 0.02 the query/key product starts near zero and
      // attention stays uniform for many epochs at small widths.
      const double sd = 1.0 / std::sqrt(static_cast<double>(t.shape()[0]));
      for (auto& v : d) v = static_cast<T>(truncated_normal(rng, sd));
    } else {
      for (auto& v : d) v = static_cast<T>(truncated_normal(rng, 0.02));
    }
  }
}

template <typename T>
void TrmModel<T>::randomize(std::uint64_t seed, double stddev) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, stddev);
  for (auto& [name, t] : params_.entries()) {
    auto d = t.mutable_data();
    if (ends_with(name, ".gain")) {
      for (auto& v : d) v = static_cast<T>(1.0 + n(rng));
    } else {
      for (auto& v : d) v = static_cast<T>(n(rng));
    }
  }
}

template <typename T>
Tensor<T> TrmModel<T>::assemble(const PackedBatch<T>& batch) const {
  const std::size_t d = config_.hidden_dim;
  Tensor<T> projected = ag::add_row(ag::matmul(batch.tokens, params_.at("embedding.proj.weight")),
                                    params_.at("embedding.proj.bias"));
  Tensor<T> x = ag::gather_rows<T>(
      {projected, params_.at("embedding.cls"), params_.at("embedding.sep"), params_.at("embedding.end")},
      batch.layout);
  std::vector<T> pe(batch.total_rows() * d);
  for (std::size_t r = 0; r < batch.total_rows(); ++r) {
    const double pos = static_cast<double>(batch.positions[r]);
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pe[r * d + i] = static_cast<T>(std::sin(angle));
      if (i + 1 < d) pe[r * d + i + 1] = static_cast<T>(std::cos(angle));
    }
  }
  return ag::add(x, Tensor<T>(Shape{batch.total_rows(), d}, std::move(pe)));
}

template <typename T>
Tensor<T> TrmModel<T>::layer_forward(const Tensor<T>& x, const std::string& prefix,
                                     const std::vector<std::size_t>& offsets,
                                     const ForwardOptions& opts) const {
  const T eps = static_cast<T>(config_.norm_eps);
  const T rate = opts.training ? static_cast<T>(config_.dropout) : T(0);
  if (rate > T(0) && opts.rng == nullptr) throw ContractError("training with dropout requires an rng");
  auto p = [&](const char* field) -> const Tensor<T>& { return params_.at(prefix + field); };

  Tensor<T> h = ag::rms_norm(x, p("attn_norm.gain"), eps);
  Tensor<T> attn = ag::segment_attention(ag::matmul(h, p("attn.wq")), ag::matmul(h, p("attn.wk")),
                                         ag::matmul(h, p("attn.wv")), offsets, config_.n_heads);
  attn = ag::matmul(attn, p("attn.wo"));
  if (rate > T(0)) attn = ag::dropout(attn, rate, *opts.rng);
  Tensor<T> y = ag::add(x, attn);

  h = ag::rms_norm(y, p("ffn_norm.gain"), eps);
  Tensor<T> f = ag::gelu(ag::add_row(ag::matmul(h, p("ffn.w1")), p("ffn.b1")));
  f = ag::add_row(ag::matmul(f, p("ffn.w2")), p("ffn.b2"));
  if (rate > T(0)) f = ag::dropout(f, rate, *opts.rng);
  return ag::add(y, f);
}

template <typename T>
Tensor<T> TrmModel<T>::shared_block_forward(const Tensor<T>& x, const std::vector<std::size_t>& offsets,
                                            const ForwardOptions& opts, std::size_t& layer_counter) const {
  if (config_.architecture != Architecture::trm) throw ConfigError("model has no shared block", "architecture");
  Tensor<T> h = x;
  for (std::size_t l = 0; l < TrmConfig::layers_per_cycle; ++l) {
    h = layer_forward(h, shared_layer_prefix(l), offsets, opts);
    ++layer_counter;
  }
  return h;
}

template <typename T>
StepOutput<T> TrmModel<T>::read_head(const Tensor<T>& state, const std::vector<std::size_t>& offsets) const {
  std::vector<ag::RowRef> first;
  first.reserve(offsets.size() - 1);
  for (std::size_t i = 0; i + 1 < offsets.size(); ++i) first.push_back({0, offsets[i]});
  Tensor<T> x0 = ag::rms_norm(ag::gather_rows<T>({state}, first), params_.at("head.norm.gain"),
                              static_cast<T>(config_.norm_eps));
  StepOutput<T> out;
  out.q_logits = ag::add_row(ag::matmul(x0, params_.at("head.q.weight")), params_.at("head.q.bias"));
  if (config_.head_type == HeadType::halting) {
    out.quality = ag::sigmoid(ag::slice_cols(out.q_logits, 0, 1));
  } else {
    out.quality = ag::sigmoid(ag::add_row(ag::matmul(x0, params_.at("head.reg.weight")),
                                          params_.at("head.reg.bias")));
  }
  return out;
}

template <typename T>
void TrmModel<T>::check_finite(const Tensor<T>& x, std::size_t step, std::size_t cycle) const {
  for (T v : x.data()) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite activation at external step " + std::to_string(step + 1) + ", cycle " +
                         std::to_string(cycle + 1));
    }
  }
}

template <typename T>
ForwardResult<T> TrmModel<T>::forward(const PackedBatch<T>& batch, const ForwardOptions& opts) const {
  if (batch.batch_size() == 0) throw ContractError("forward on an empty batch");
  ForwardResult<T> result;
  const Tensor<T> input = assemble(batch);
  Tensor<T> state = input;
  for (std::size_t step = 0; step < config_.external_steps; ++step) {
    if (step > 0) state = ag::add(state, input);
    if (config_.architecture == Architecture::trm) {
      for (std::size_t c = 0; c < config_.l_cycles; ++c) {
        state = shared_block_forward(state, batch.offsets, opts, result.layer_applications);
        check_finite(state, step, c);
      }
    } else {
      for (std::size_t l = 0; l < config_.standard_depth; ++l) {
        state = layer_forward(state, stack_layer_prefix(l), batch.offsets, opts);
        ++result.layer_applications;
        check_finite(state, step, l);
      }
    }
    result.steps.push_back(read_head(state, batch.offsets));
  }
  result.quality = result.steps.back().quality;
  return result;
}

template <typename T>
ForwardResult<T> TrmModel<T>::forward(const FloatMatrix& source, const FloatMatrix& translation,
                                      const ForwardOptions& opts) const {
  const SequencePair pair{&source, &translation};
  return forward(pack_batch<T>(std::span<const SequencePair>(&pair, 1), config_), opts);
}

template <typename T>
TrmModel<T> unshared_from_shared(const TrmModel<T>& shared, std::size_t depth) {
  if (shared.config().architecture != Architecture::trm) {
    throw ConfigError("source model must be weight-shared", "architecture");
  }
  TrmConfig cfg = shared.config();
  cfg.architecture = Architecture::standard;
  cfg.standard_depth = depth;
  TrmModel<T> out(cfg);
  for (auto& [name, t] : out.params().entries()) {
    std::string src = name;
    if (name.rfind("stack.layer", 0) == 0) {
      const std::size_t dot = name.find('.', 11);
      const std::size_t layer = std::stoul(name.substr(11, dot - 11));
      src = shared_layer_prefix(layer % TrmConfig::layers_per_cycle) + name.substr(dot + 1);
    }
    const auto from = shared.params().at(src).data();
    std::copy(from.begin(), from.end(), t.mutable_data().begin());
  }
  return out;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class TrmModel<float>;
template class TrmModel<double>;
template struct ForwardResult<float>;
template struct ForwardResult<double>;
template std::size_t count_trainable(const ParamStore<float>&, const std::vector<std::string>&);
template std::size_t count_trainable(const ParamStore<double>&, const std::vector<std::string>&);
template PackedBatch<float> pack_batch(std::span<const SequencePair>, const TrmConfig&);
template PackedBatch<double> pack_batch(std::span<const SequencePair>, const TrmConfig&);
template TrmModel<float> unshared_from_shared(const TrmModel<float>&, std::size_t);
template TrmModel<double> unshared_from_shared(const TrmModel<double>&, std::size_t);

}  // namespace trmqe
