// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0
//
// TRM-QE: a weight-shared 2-layer transformer block applied L times per
// external refinement step over projected frozen token embeddings. The
// first sequence position carries a 2-logit (q_halt, q_continue) head and
// sigmoid(q_halt) is the quality score. A standard unshared stack with the
// same layer arithmetic serves as the no-sharing baseline.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trmqe/matrix.hpp"
#include "trmqe/tensor.hpp"

namespace trmqe {

enum class HeadType { halting, decoupled };
enum class Architecture { trm, standard };

std::string to_string(HeadType h);
std::string to_string(Architecture a);
HeadType parse_head_type(const std::string& s);
Architecture parse_architecture(const std::string& s);

struct TrmConfig {
  static constexpr std::size_t layers_per_cycle = 2;

  std::size_t input_dim = 512;
  std::size_t hidden_dim = 512;
  std::size_t n_heads = 8;
  std::size_t ffn_mult = 4;
  std::size_t l_cycles = 6;
  std::size_t external_steps = 1;
  HeadType head_type = HeadType::halting;
  Architecture architecture = Architecture::trm;
  std::size_t standard_depth = 8;  // unshared baseline only
  std::size_t max_seq_len = 512;
  double dropout = 0.1;
  double norm_eps = 1e-6;
  std::uint64_t seed = 0;

  // Layer applications per external step.
  std::size_t effective_layers() const {
    return architecture == Architecture::trm ? layers_per_cycle * l_cycles : standard_depth;
  }

  // Throws ConfigError naming the offending field.
  void validate() const;

  bool operator==(const TrmConfig&) const = default;
};

nlohmann::ordered_json config_to_json(const TrmConfig& c);
TrmConfig config_from_json(const nlohmann::json& j);

// ---- parameters -----------------------------------------------------------

// Shell-style glob over parameter names ('*' and '?').
bool glob_match(std::string_view pattern, std::string_view name);

template <typename T>
class ParamStore {
 public:
  // Copies own their storage; a copied model can train without touching the original.
  ParamStore() = default;
  ParamStore(const ParamStore& other) { copy_from(other); }
  ParamStore& operator=(const ParamStore& other) {
    if (this != &other) {
      params_.clear();
      copy_from(other);
    }
    return *this;
  }
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  ag::Tensor<T>& add(const std::string& name, ag::Shape shape);
  ag::Tensor<T>& at(const std::string& name);
  const ag::Tensor<T>& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::vector<std::string> names() const;
  const std::map<std::string, ag::Tensor<T>>& entries() const { return params_; }
  std::map<std::string, ag::Tensor<T>>& entries() { return params_; }
  std::size_t size() const { return params_.size(); }

  void zero_grad();

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, t] : params_) {
      auto& dst = out.add(name, t.shape());
      auto d = dst.mutable_data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<U>(t.data()[i]);
    }
    return out;
  }

 private:
  void copy_from(const ParamStore& other) {
    for (const auto& [name, t] : other.params_) {
      auto copy = t.detach();
      copy.set_requires_grad(t.requires_grad());
      params_.emplace(name, std::move(copy));
    }
  }

  std::map<std::string, ag::Tensor<T>> params_;
};

// Element count over parameters matched by no freeze pattern.
template <typename T>
std::size_t count_trainable(const ParamStore<T>& params, const std::vector<std::string>& freeze_spec = {});

// ---- inputs ---------------------------------------------------------------

struct SequencePair {
  const FloatMatrix* source = nullptr;
  const FloatMatrix* translation = nullptr;
};

// Several assembled sequences stacked row-wise. Row r of the assembled input is
// gathered from {projected tokens, CLS, SEP, END} via `layout[r]`.
template <typename T>
struct PackedBatch {
  ag::Tensor<T> tokens;                  // [token rows × input_dim], constant
  std::vector<ag::RowRef> layout;        // one entry per assembled row
  std::vector<std::size_t> offsets;      // segment boundaries, size = batch + 1
  std::vector<std::size_t> positions;    // per assembled row, position within its sequence
  std::size_t truncated = 0;             // examples whose translation tail was cut

  std::size_t batch_size() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::size_t total_rows() const { return layout.size(); }
};

// Sequences longer than max_seq_len lose their translation tail (then source tail).
template <typename T>
PackedBatch<T> pack_batch(std::span<const SequencePair> pairs, const TrmConfig& config);

// ---- model ----------------------------------------------------------------

template <typename T>
struct StepOutput {
  ag::Tensor<T> q_logits;  // [B×2]: q_halt, q_continue
  ag::Tensor<T> quality;   // [B×1]
};

struct QHeadOutput {
  double q_halt = 0.0;
  double q_continue = 0.0;
  double quality = 0.0;
};

template <typename T>
struct ForwardResult {
  ag::Tensor<T> quality;  // final-step quality, [B×1]
  std::vector<StepOutput<T>> steps;
  std::size_t layer_applications = 0;

  std::vector<QHeadOutput> head_outputs(std::size_t step) const;
};

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout > 0
};

template <typename T>
class TrmModel {
 public:
  explicit TrmModel(TrmConfig config);

  const TrmConfig& config() const { return config_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  // Truncated-normal init (σ=0.02), zeroed residual output matrices, unit gains.
  void initialize(std::uint64_t seed);
  // Dense N(0, stddev) everywhere, gains included; used by gradient/equivalence tests.
  void randomize(std::uint64_t seed, double stddev);

  // [CLS] ⧺ P(source) ⧺ [SEP] ⧺ P(translation) ⧺ [END] plus sinusoidal positions.
  ag::Tensor<T> assemble(const PackedBatch<T>& batch) const;

  // Two pre-norm layers with the shared weights; increments `layer_counter` per layer.
  ag::Tensor<T> shared_block_forward(const ag::Tensor<T>& x, const std::vector<std::size_t>& offsets,
                                     const ForwardOptions& opts, std::size_t& layer_counter) const;

  ForwardResult<T> forward(const PackedBatch<T>& batch, const ForwardOptions& opts = {}) const;

  // Shorthand for a single source/translation pair.
  ForwardResult<T> forward(const FloatMatrix& source, const FloatMatrix& translation,
                           const ForwardOptions& opts = {}) const;

  template <typename U>
  TrmModel<U> cast() const {
    TrmModel<U> out(config_);
    out.params() = params_.template cast<U>();
    return out;
  }

 private:
  ag::Tensor<T> layer_forward(const ag::Tensor<T>& x, const std::string& prefix,
                              const std::vector<std::size_t>& offsets, const ForwardOptions& opts) const;
  StepOutput<T> read_head(const ag::Tensor<T>& state, const std::vector<std::size_t>& offsets) const;
  void check_finite(const ag::Tensor<T>& x, std::size_t step, std::size_t cycle) const;

  TrmConfig config_;
  ParamStore<T> params_;
};

// Unshared model whose layer i copies shared layer (i mod 2); depth 2L reproduces L cycles.
template <typename T>
TrmModel<T> unshared_from_shared(const TrmModel<T>& shared, std::size_t depth);

// Parameter-name prefix of one transformer layer.
std::string shared_layer_prefix(std::size_t layer);
std::string stack_layer_prefix(std::size_t layer);

}  // namespace trmqe
