#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "pargan/tensor.hpp"

// Binary tensor archive:
//   "PGTA" | u32 version | u64 count
//   per tensor: u32 name_len | name (UTF-8) | u8 dtype | u32 ndim | u64 dims[ndim] | payload
// All integers and the float32 payload are little-endian; payload is row-major.

namespace pargan {

inline constexpr std::uint32_t kArchiveVersion = 1;
inline constexpr std::uint8_t kDtypeFloat32 = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

namespace detail {

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    U out;
    auto* s = reinterpret_cast<unsigned char*>(&v);
    auto* d = reinterpret_cast<unsigned char*>(&out);
    for (std::size_t i = 0; i < sizeof(U); ++i) d[i] = s[sizeof(U) - 1 - i];
    return out;
  }
}

template <typename U>
void put(std::ostream& out, U v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& in, const std::string& where) {
  U v;
  in.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!in) throw Error(ErrorCode::io, "truncated tensor archive '" + where + "'");
  return to_little(v);
}

}  // namespace detail

inline void write_tensor_archive(std::ostream& out, const NamedTensors& tensors) {
  out.write("PGTA", 4);
  detail::put<std::uint32_t>(out, kArchiveVersion);
  detail::put<std::uint64_t>(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put<std::uint8_t>(out, kDtypeFloat32);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    for (float v : t.values()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      detail::put<std::uint32_t>(out, bits);
    }
  }
}

inline NamedTensors read_tensor_archive(std::istream& in, const std::string& where = "<stream>") {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "PGTA", 4) != 0) throw Error(ErrorCode::io, "'" + where + "' is not a tensor archive");
  const auto version = detail::get<std::uint32_t>(in, where);
  if (version != kArchiveVersion) {
    throw Error(ErrorCode::io, "unsupported tensor archive version " + std::to_string(version));
  }
  const auto count = detail::get<std::uint64_t>(in, where);
  NamedTensors out;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto len = detail::get<std::uint32_t>(in, where);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto dtype = detail::get<std::uint8_t>(in, where);
    if (dtype != kDtypeFloat32) throw Error(ErrorCode::io, "unsupported dtype tag in '" + where + "'");
    const auto ndim = detail::get<std::uint32_t>(in, where);
    Shape shape;
    for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<int>(detail::get<std::uint64_t>(in, where)));
    Tensor<float> t(shape);
    for (auto& v : t.values()) {
      const auto bits = detail::get<std::uint32_t>(in, where);
      std::memcpy(&v, &bits, sizeof v);
    }
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

/// Writes to a sibling temporary file and renames it into place.
inline void save_tensor_archive(const std::filesystem::path& path, const NamedTensors& tensors) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write '" + tmp.string() + "'");
    write_tensor_archive(out, tensors);
    out.flush();
    if (!out) throw Error(ErrorCode::io, "failed writing '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline NamedTensors load_tensor_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot read tensor archive '" + path.string() + "'");
  return read_tensor_archive(in, path.string());
}

}  // namespace pargan
