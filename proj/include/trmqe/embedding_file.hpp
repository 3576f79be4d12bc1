// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-token embedding container shared with the offline extractor.
//
//   "TRMQEMB1" · u32 version (1) · u32 D_in · u64 example count
//   · u32-length-prefixed UTF-8 JSON metadata
//   · per example: u32-length-prefixed pair_id · f32 da_z · u32 s · u32 t
//     · s·D_in f32 source rows · t·D_in f32 translation rows
//
// Everything is little-endian.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trmqe/dataset.hpp"
#include "trmqe/matrix.hpp"

namespace trmqe {

inline constexpr char kEmbeddingMagic[8] = {'T', 'R', 'M', 'Q', 'E', 'M', 'B', '1'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;

struct EmbeddedExample {
  std::string pair_id;
  float da_z = 0.0f;
  FloatMatrix source;       // s × D_in
  FloatMatrix translation;  // t × D_in
  std::string encoder_id;

  double target01() const { return sigmoid(static_cast<double>(da_z)); }
  bool operator==(const EmbeddedExample&) const = default;
};

struct EmbeddingHeader {
  std::uint32_t version = kEmbeddingVersion;
  std::uint32_t input_dim = 0;
  std::uint64_t count = 0;
  nlohmann::json metadata = nlohmann::json::object();

  std::string encoder_id() const { return metadata.value("encoder_id", std::string{}); }
};

// Streams examples; throws FormatError on a bad header and CorruptionError
// (with the record index) on damaged or missing records.
class EmbeddingReader {
 public:
  explicit EmbeddingReader(const std::filesystem::path& path);

  const EmbeddingHeader& header() const { return header_; }
  std::optional<EmbeddedExample> next();
  std::size_t index() const { return index_; }

 private:
  std::filesystem::path path_;
  std::ifstream is_;
  EmbeddingHeader header_;
  std::size_t index_ = 0;
};

class EmbeddingWriter {
 public:
  EmbeddingWriter(const std::filesystem::path& path, std::uint32_t input_dim, std::uint64_t count,
                  const nlohmann::json& metadata);
  void write(const EmbeddedExample& example);
  // Verifies the declared count was written.
  void close();

 private:
  std::ofstream os_;
  std::uint32_t input_dim_;
  std::uint64_t declared_;
  std::uint64_t written_ = 0;
};

void write_embedding_file(const std::filesystem::path& path, std::uint32_t input_dim,
                          const nlohmann::json& metadata, std::span<const EmbeddedExample> examples);

struct EmbeddingFile {
  EmbeddingHeader header;
  std::vector<EmbeddedExample> examples;
};

EmbeddingFile read_embedding_file(const std::filesystem::path& path);

}  // namespace trmqe
