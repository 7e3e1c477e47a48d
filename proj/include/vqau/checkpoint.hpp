// Copyright 2026 The vqau Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Checkpoint files.
//
//   "VQCK" | u32 version | u64 header length | JSON header | tensor records
//
// The JSON header carries the architecture, provenance, the step count and a tensor
// index {name, offset, rows, cols}; offsets are relative to the first byte
// after the header. Each tensor is a VQAU feature record (rows = n_frames,
// cols = dim).

#ifndef VQAU_CHECKPOINT_HPP_
#define VQAU_CHECKPOINT_HPP_

#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqau/io.hpp"

namespace vqau {

struct Checkpoint {
  nlohmann::json arch;
  nlohmann::json meta = nlohmann::json::object();  // provenance (config hash, seed, ...)
  long step = 0;
  std::map<std::string, Matf> tensors;

  const Matf& tensor(const std::string& name) const {
    auto it = tensors.find(name);
    require<FormatError>(it != tensors.end(), "checkpoint: missing tensor '", name, "'");
    return it->second;
  }
};

inline std::string encode_checkpoint(const Checkpoint& ck) {
  std::string payload;
  nlohmann::json index = nlohmann::json::array();
  for (const auto& [name, m] : ck.tensors) {
    index.push_back({{"name", name}, {"offset", payload.size()}, {"rows", m.rows()}, {"cols", m.cols()}});
    FeatureSequence rec;
    rec.frames = m;
    rec.frame_rate_hz = 0.0f;
    payload += io::encode(rec);
  }
  nlohmann::json header = {{"format", "vqau-checkpoint"},
                           {"version", std::string(kVersion)},
                           {"arch", ck.arch},
                           {"meta", ck.meta},
                           {"step", ck.step},
                           {"tensors", std::move(index)}};
  const std::string text = header.dump();
  std::string out("VQCK", 4);
  io::detail::put_u32(out, 1);
  const std::uint64_t len = text.size();
  io::detail::put_u32(out, static_cast<std::uint32_t>(len & 0xffffffffULL));
  io::detail::put_u32(out, static_cast<std::uint32_t>(len >> 32));
  out += text;
  out += payload;
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view data) {
  require<FormatError>(data.size() >= 16 && std::memcmp(data.data(), "VQCK", 4) == 0,
                       "checkpoint: bad magic");
  require<FormatError>(io::detail::get_u32(data, 4) == 1, "checkpoint: unsupported version");
  const std::uint64_t len = io::detail::get_u32(data, 8) |
                            (static_cast<std::uint64_t>(io::detail::get_u32(data, 12)) << 32);
  require<FormatError>(len <= data.size() - 16, "checkpoint: truncated header");
  Checkpoint ck;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(data.substr(16, len));
    ck.arch = header.at("arch");
    ck.step = header.at("step");
    ck.meta = header.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  const std::string_view payload = data.substr(16 + len);
  for (const auto& entry : header.at("tensors")) {
    std::size_t pos = entry.at("offset").get<std::size_t>();
    require<FormatError>(pos <= payload.size(), "checkpoint: tensor offset out of range");
    auto rec = io::decode_features(payload, &pos);
    require<FormatError>(rec.frames.rows() == entry.at("rows").get<Index>() &&
                             rec.frames.cols() == entry.at("cols").get<Index>(),
                         "checkpoint: tensor shape disagrees with index");
    ck.tensors.emplace(entry.at("name").get<std::string>(), std::move(rec.frames));
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  io::atomic_write(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  require<FormatError>(std::filesystem::exists(path), "checkpoint not found: ", path.string());
  return decode_checkpoint(io::read_file(path));
}

}  // namespace vqau

#endif  // VQAU_CHECKPOINT_HPP_
