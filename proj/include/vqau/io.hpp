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

// Binary feature/code container ("VQAU" files) and atomic file writes.
//
// Layout, all fields little-endian:
//
//   offset  size  field
//   0       4     magic "VQAU"
//   4       4     version (u32, = 1)
//   8       4     kind (u32, 0 = f32 features, 1 = u32 code indices)
//   12      4     n_frames (u32)
//   16      4     dim (u32, = 1 for codes)
//   20      4     frame_rate_hz (f32)
//   24      ...   payload, row-major
//
// A record is self-delimiting, so several records can be concatenated
// (checkpoints rely on that).

#ifndef VQAU_IO_HPP_
#define VQAU_IO_HPP_

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "vqau/common.hpp"

namespace vqau {

/// Time-major matrix of frames for one utterance.
struct FeatureSequence {
  Matf frames;
  float frame_rate_hz = 100.0f;

  Index n_frames() const { return frames.rows(); }
  Index dim() const { return frames.cols(); }
  bool operator==(const FeatureSequence&) const = default;
};

/// Discrete unit indices at the code frame rate.
struct CodeSequence {
  std::vector<std::uint32_t> indices;
  float frame_rate_hz = 50.0f;

  std::size_t size() const { return indices.size(); }
  bool operator==(const CodeSequence&) const = default;
};

namespace io {

inline constexpr char kMagic[4] = {'V', 'Q', 'A', 'U'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint32_t kKindFeatures = 0;
inline constexpr std::uint32_t kKindCodes = 1;
inline constexpr std::size_t kHeaderBytes = 24;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline std::uint32_t get_u32(std::string_view in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}

inline float get_f32(std::string_view in, std::size_t pos) {
  return std::bit_cast<float>(get_u32(in, pos));
}

struct Header {
  std::uint32_t kind = 0;
  std::uint32_t n_frames = 0;
  std::uint32_t dim = 0;
  float frame_rate_hz = 0.0f;
  std::size_t payload_bytes = 0;
};

inline std::string encode_header(std::uint32_t kind, std::uint64_t n_frames, std::uint64_t dim,
                                 float frame_rate_hz) {
  require<FormatError>(n_frames <= 0xffffffffULL && dim <= 0xffffffffULL,
                       "VQAU: dimension overflow (", n_frames, " x ", dim, ")");
  std::string out;
  out.reserve(kHeaderBytes);
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, kind);
  put_u32(out, static_cast<std::uint32_t>(n_frames));
  put_u32(out, static_cast<std::uint32_t>(dim));
  put_f32(out, frame_rate_hz);
  return out;
}

inline Header decode_header(std::string_view in, std::size_t pos) {
  require<FormatError>(in.size() >= pos && in.size() - pos >= kHeaderBytes,
                       "VQAU: truncated header");
  require<FormatError>(std::memcmp(in.data() + pos, kMagic, 4) == 0, "VQAU: bad magic");
  const std::uint32_t version = get_u32(in, pos + 4);
  require<FormatError>(version == kVersion, "VQAU: unsupported version ", version);
  Header h;
  h.kind = get_u32(in, pos + 8);
  h.n_frames = get_u32(in, pos + 12);
  h.dim = get_u32(in, pos + 16);
  h.frame_rate_hz = get_f32(in, pos + 20);
  require<FormatError>(h.kind == kKindFeatures || h.kind == kKindCodes, "VQAU: unknown kind ",
                       h.kind);
  if (h.kind == kKindCodes) require<FormatError>(h.dim == 1, "VQAU: code records must have dim 1");
  const unsigned __int128 bytes =
      static_cast<unsigned __int128>(h.n_frames) * h.dim * 4u;
  require<FormatError>(bytes <= static_cast<unsigned __int128>(in.size() - pos - kHeaderBytes),
                       "VQAU: truncated payload");
  h.payload_bytes = static_cast<std::size_t>(bytes);
  return h;
}

}  // namespace detail

inline std::string encode(const FeatureSequence& seq) {
  std::string out = detail::encode_header(kKindFeatures, static_cast<std::uint64_t>(seq.n_frames()),
                                          static_cast<std::uint64_t>(seq.dim()), seq.frame_rate_hz);
  out.reserve(out.size() + static_cast<std::size_t>(seq.frames.size()) * 4);
  for (Index i = 0; i < seq.frames.size(); ++i) detail::put_f32(out, seq.frames.data()[i]);
  return out;
}

inline std::string encode(const CodeSequence& seq) {
  std::string out = detail::encode_header(kKindCodes, seq.indices.size(), 1, seq.frame_rate_hz);
  for (std::uint32_t v : seq.indices) detail::put_u32(out, v);
  return out;
}

/// Decodes a feature record starting at `*pos`; advances `*pos` past it.
inline FeatureSequence decode_features(std::string_view in, std::size_t* pos) {
  const auto h = detail::decode_header(in, *pos);
  require<FormatError>(h.kind == kKindFeatures, "VQAU: expected a feature record");
  FeatureSequence seq;
  seq.frame_rate_hz = h.frame_rate_hz;
  seq.frames.resize(h.n_frames, h.dim);
  std::size_t p = *pos + kHeaderBytes;
  for (Index i = 0; i < seq.frames.size(); ++i, p += 4) seq.frames.data()[i] = detail::get_f32(in, p);
  *pos = p;
  return seq;
}

inline CodeSequence decode_codes(std::string_view in, std::size_t* pos) {
  const auto h = detail::decode_header(in, *pos);
  require<FormatError>(h.kind == kKindCodes, "VQAU: expected a code record");
  CodeSequence seq;
  seq.frame_rate_hz = h.frame_rate_hz;
  seq.indices.resize(h.n_frames);
  std::size_t p = *pos + kHeaderBytes;
  for (auto& v : seq.indices) {
    v = detail::get_u32(in, p);
    p += 4;
  }
  *pos = p;
  return seq;
}

/// Record kind stored at the start of `in`.
inline std::uint32_t peek_kind(std::string_view in) { return detail::decode_header(in, 0).kind; }

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require<FormatError>(static_cast<bool>(f), "cannot open ", path.string());
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return data;
}

/// Writes to a sibling temp file and renames it into place, so readers never
/// observe a partially written artifact.
inline void atomic_write(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    require<FormatError>(static_cast<bool>(f), "cannot write ", tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    require<FormatError>(static_cast<bool>(f), "short write to ", tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw FormatError(str_cat("cannot rename into ", path.string(), ": ", ec.message()));
  }
}

inline void write_features(const std::filesystem::path& path, const FeatureSequence& seq) {
  atomic_write(path, encode(seq));
}

inline void write_codes(const std::filesystem::path& path, const CodeSequence& seq) {
  atomic_write(path, encode(seq));
}

inline FeatureSequence read_features(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  std::size_t pos = 0;
  auto seq = decode_features(data, &pos);
  require<FormatError>(pos == data.size(), "VQAU: trailing bytes in ", path.string());
  return seq;
}

inline CodeSequence read_codes(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  std::size_t pos = 0;
  auto seq = decode_codes(data, &pos);
  require<FormatError>(pos == data.size(), "VQAU: trailing bytes in ", path.string());
  return seq;
}

}  // namespace io
}  // namespace vqau

#endif  // VQAU_IO_HPP_
