// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint layout:
//   "TRMCKPT1" · u64 header length · UTF-8 JSON header · f32 blobs
// The header holds the model config, free-form metadata, and a manifest of
// {name, shape, offset, role} entries; offsets are byte positions relative to
// the first blob. All integers and floats are little-endian.

#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "trmqe/model.hpp"

namespace trmqe {

inline constexpr char kCheckpointMagic[8] = {'T', 'R', 'M', 'C', 'K', 'P', 'T', '1'};

struct Checkpoint {
  TrmConfig config;
  ParamStore<float> params;
  nlohmann::json metadata = nlohmann::json::object();
  // Non-trainable tensors that travel with the model (e.g. an input projector).
  std::map<std::string, ag::Tensor32> extras;

  TrmModel<float> make_model() const;
};

void write_checkpoint(const std::filesystem::path& path, const TrmModel<float>& model,
                      const nlohmann::json& metadata = nlohmann::json::object(),
                      const std::map<std::string, ag::Tensor32>& extras = {});

Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace trmqe
