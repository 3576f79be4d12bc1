// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0

#include "trmqe/embedding_file.hpp"

#include <cmath>

#include "trmqe/detail/binary_io.hpp"
#include "trmqe/errors.hpp"

namespace trmqe {

namespace {

constexpr std::size_t kMaxMetadataBytes = 1u << 26;
constexpr std::size_t kMaxPairIdBytes = 1u << 12;

}  // namespace

EmbeddingReader::EmbeddingReader(const std::filesystem::path& path) : path_(path), is_(path, std::ios::binary) {
  if (!is_) throw Error("cannot open embedding file: " + path.string());
  detail::ByteReader r(is_);
  try {
    if (r.raw(8) != std::string_view(kEmbeddingMagic, 8)) {
      throw FormatError("bad magic in " + path.string() + " (not a TRMQEMB1 file)");
    }
    header_.version = r.u32();
    if (header_.version != kEmbeddingVersion) {
      throw FormatError("unsupported embedding file version " + std::to_string(header_.version) + " in " +
                        path.string());
    }
    header_.input_dim = r.u32();
    if (header_.input_dim == 0) throw FormatError("embedding width is zero in " + path.string());
    header_.count = r.u64();
    const std::string meta = r.str(kMaxMetadataBytes);
    try {
      header_.metadata = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("embedding metadata is not valid JSON: " + std::string(e.what()));
    }
    if (!header_.metadata.is_object()) throw FormatError("embedding metadata must be a JSON object");
  } catch (const detail::ByteReader::ShortRead&) {
    throw FormatError("embedding file header truncated: " + path.string());
  }
}

std::optional<EmbeddedExample> EmbeddingReader::next() {
  if (index_ == header_.count) {
    if (is_.peek() != std::char_traits<char>::eof()) {
      throw CorruptionError("trailing bytes after the declared " + std::to_string(header_.count) + " records in " +
                                path_.string(),
                            index_);
    }
    return std::nullopt;
  }
  const std::size_t idx = index_;
  auto corrupt = [&](const std::string& what) {
    return CorruptionError("record " + std::to_string(idx) + " in " + path_.string() + ": " + what, idx);
  };
  detail::ByteReader r(is_);
  EmbeddedExample ex;
  try {
    ex.pair_id = r.str(kMaxPairIdBytes);
    ex.da_z = r.f32();
    if (!std::isfinite(ex.da_z)) throw corrupt("da_z is not finite");
    const std::uint32_t s = r.u32(), t = r.u32();
    // Bound the allocation by what is left in the file before trusting the counts.
    const auto here = is_.tellg();
    is_.seekg(0, std::ios::end);
    const auto remaining = static_cast<std::uint64_t>(is_.tellg() - here);
    is_.seekg(here);
    const std::uint64_t need = (static_cast<std::uint64_t>(s) + t) * header_.input_dim * 4;
    if (need > remaining) throw corrupt("truncated (needs " + std::to_string(need) + " bytes, " +
                                        std::to_string(remaining) + " remain)");
    ex.source = FloatMatrix(s, header_.input_dim);
    ex.translation = FloatMatrix(t, header_.input_dim);
    r.f32s(ex.source.data);
    r.f32s(ex.translation.data);
  } catch (const detail::ByteReader::ShortRead&) {
    throw corrupt("truncated");
  }
  for (const auto* m : {&ex.source, &ex.translation}) {
    for (float v : m->data) {
      if (!std::isfinite(v)) throw corrupt("non-finite embedding value");
    }
  }
  ex.encoder_id = header_.encoder_id();
  ++index_;
  return ex;
}

EmbeddingWriter::EmbeddingWriter(const std::filesystem::path& path, std::uint32_t input_dim, std::uint64_t count,
                                 const nlohmann::json& metadata)
    : os_(path, std::ios::binary | std::ios::trunc), input_dim_(input_dim), declared_(count) {
  if (!os_) throw Error("cannot open embedding file for writing: " + path.string());
  if (input_dim == 0) throw ContractError("embedding width must be positive");
  detail::ByteWriter w(os_);
  w.raw(std::string_view(kEmbeddingMagic, 8));
  w.u32(kEmbeddingVersion);
  w.u32(input_dim);
  w.u64(count);
  w.str(metadata.dump());
}

void EmbeddingWriter::write(const EmbeddedExample& ex) {
  if (written_ == declared_) throw ContractError("more records written than declared");
  for (const auto* m : {&ex.source, &ex.translation}) {
    if (m->rows > 0 && m->cols != input_dim_) {
      throw DimensionError("record width " + std::to_string(m->cols) + " does not match file width " +
                           std::to_string(input_dim_));
    }
    for (float v : m->data) {
      if (!std::isfinite(v)) throw NumericError("refusing to write a non-finite embedding value");
    }
  }
  if (!std::isfinite(ex.da_z)) throw NumericError("refusing to write a non-finite da_z");
  detail::ByteWriter w(os_);
  w.str(ex.pair_id);
  w.f32(ex.da_z);
  w.u32(static_cast<std::uint32_t>(ex.source.rows));
  w.u32(static_cast<std::uint32_t>(ex.translation.rows));
  w.f32s(ex.source.data);
  w.f32s(ex.translation.data);
  ++written_;
}

void EmbeddingWriter::close() {
  os_.close();
  if (!os_) throw Error("failed writing embedding file");
  if (written_ != declared_) {
    throw ContractError("declared " + std::to_string(declared_) + " records but wrote " + std::to_string(written_));
  }
}

void write_embedding_file(const std::filesystem::path& path, std::uint32_t input_dim, const nlohmann::json& metadata,
                          std::span<const EmbeddedExample> examples) {
  EmbeddingWriter w(path, input_dim, examples.size(), metadata);
  for (const auto& ex : examples) w.write(ex);
  w.close();
}

EmbeddingFile read_embedding_file(const std::filesystem::path& path) {
  EmbeddingReader reader(path);
  EmbeddingFile out;
  out.header = reader.header();
  out.examples.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(out.header.count, 1u << 20)));
  while (auto ex = reader.next()) out.examples.push_back(std::move(*ex));
  return out;
}

}  // namespace trmqe
