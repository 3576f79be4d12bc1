// Copyright 2026 The TRM-QE Authors
// SPDX-License-Identifier: Apache-2.0

#include "trmqe/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "trmqe/detail/binary_io.hpp"
#include "trmqe/errors.hpp"

namespace trmqe {

namespace {

constexpr std::uint64_t kMaxHeaderBytes = 1ull << 28;

}  // namespace

TrmModel<float> Checkpoint::make_model() const {
  TrmModel<float> model(config);
  auto& dst = model.params();
  if (dst.names() != params.names()) {
    throw FormatError("checkpoint parameter manifest does not match its model config");
  }
  for (const auto& [name, t] : params.entries()) {
    auto& d = dst.at(name);
    if (d.shape() != t.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + ag::shape_str(t.shape()) +
                        ", config expects " + ag::shape_str(d.shape()));
    }
    std::copy(t.data().begin(), t.data().end(), d.mutable_data().begin());
  }
  return model;
}

void write_checkpoint(const std::filesystem::path& path, const TrmModel<float>& model,
                      const nlohmann::json& metadata, const std::map<std::string, ag::Tensor32>& extras) {
  nlohmann::ordered_json header;
  header["config"] = config_to_json(model.config());
  header["metadata"] = metadata;
  auto& manifest = header["tensors"] = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  auto add_entry = [&](const std::string& name, const ag::Tensor32& t, const char* role) {
    manifest.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"role", role}});
    offset += 4ull * t.numel();
  };
  for (const auto& [name, t] : model.params().entries()) add_entry(name, t, "param");
  for (const auto& [name, t] : extras) add_entry(name, t, "extra");

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open checkpoint for writing: " + path.string());
  detail::ByteWriter w(os);
  w.raw(std::string_view(kCheckpointMagic, 8));
  const std::string text = header.dump();
  w.u64(text.size());
  w.raw(text);
  for (const auto& [_, t] : model.params().entries()) w.f32s(t.data());
  for (const auto& [_, t] : extras) w.f32s(t.data());
  if (!os) throw Error("failed writing checkpoint: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint: " + path.string());
  detail::ByteReader r(is);
  try {
    if (r.raw(8) != std::string_view(kCheckpointMagic, 8)) {
      throw FormatError("bad checkpoint magic in " + path.string());
    }
    const std::uint64_t len = r.u64();
    if (len > kMaxHeaderBytes) throw FormatError("checkpoint header length out of range");
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(r.raw(len));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    Checkpoint ck;
    ck.config = config_from_json(header.at("config"));
    ck.metadata = header.value("metadata", nlohmann::json::object());
    std::uint64_t expected_offset = 0;
    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<ag::Shape>();
      if (entry.at("offset").get<std::uint64_t>() != expected_offset) {
        throw FormatError("checkpoint manifest offset mismatch at '" + name + "'");
      }
      const std::size_t n = ag::shape_numel(shape);
      std::vector<float> data(n);
      r.f32s(data);
      expected_offset += 4ull * n;
      ag::Tensor32 t(shape, std::move(data), entry.at("role") == "param");
      if (entry.at("role") == "param") {
        auto& dst = ck.params.add(name, shape);
        std::copy(t.data().begin(), t.data().end(), dst.mutable_data().begin());
      } else {
        ck.extras.emplace(name, std::move(t));
      }
    }
    if (!r.at_eof()) throw FormatError("trailing bytes after checkpoint tensors");
    return ck;
  } catch (const detail::ByteReader::ShortRead&) {
    throw FormatError("checkpoint truncated: " + path.string());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what());
  }
}

}  // namespace trmqe
