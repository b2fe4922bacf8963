#ifndef FASTADV_DATA_IDX_HPP
#define FASTADV_DATA_IDX_HPP

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "fastadv/core/error.hpp"
#include "fastadv/core/tensor.hpp"

namespace fastadv {

// IDX layout: u32 magic (0x0000 08 <ndims>), ndims x u32 sizes, then
// row-major unsigned bytes. All header words are big-endian.
inline constexpr std::uint32_t idx_images_magic = 0x00000803;
inline constexpr std::uint32_t idx_labels_magic = 0x00000801;

struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> bytes;

  std::uint32_t magic() const { return 0x00000800u | static_cast<std::uint32_t>(dims.size()); }
};

namespace detail {
inline std::uint32_t read_be32(std::span<const std::uint8_t> s, std::size_t at) {
  return (std::uint32_t{s[at]} << 24) | (std::uint32_t{s[at + 1]} << 16) | (std::uint32_t{s[at + 2]} << 8) |
         std::uint32_t{s[at + 3]};
}
inline void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}
}  // namespace detail

inline IdxArray parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FormatError("idx: truncated header");
  const std::uint32_t magic = detail::read_be32(bytes, 0);
  if (magic != idx_images_magic && magic != idx_labels_magic) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", magic);
    throw FormatError(std::string("idx: bad magic ") + buf);
  }
  const std::size_t ndims = magic & 0xffu;
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header) throw FormatError("idx: truncated dimension list");
  IdxArray out;
  std::size_t expected = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    const std::uint32_t d = detail::read_be32(bytes, 4 + 4 * i);
    out.dims.push_back(d);
    expected *= d;
  }
  const std::size_t payload = bytes.size() - header;
  if (payload < expected) {
    throw FormatError("idx: truncated payload (" + std::to_string(payload) + " of " + std::to_string(expected) +
                      " bytes)");
  }
  if (payload > expected) {
    throw FormatError("idx: " + std::to_string(payload - expected) + " bytes beyond declared dimensions");
  }
  out.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return out;
}

inline std::vector<std::uint8_t> serialize_idx(const IdxArray& a) {
  std::vector<std::uint8_t> out;
  out.reserve(4 + 4 * a.dims.size() + a.bytes.size());
  detail::write_be32(out, a.magic());
  for (std::uint32_t d : a.dims) detail::write_be32(out, d);
  out.insert(out.end(), a.bytes.begin(), a.bytes.end());
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// Image stream -> [n, 1, rows, cols] scaled into [0, 1].
template <typename T>
Tensor<T> idx_images(const IdxArray& a) {
  if (a.dims.size() != 3) throw FormatError("idx: image stream must have 3 dimensions");
  if (a.dims[0] == 0 || a.dims[1] == 0 || a.dims[2] == 0) throw FormatError("idx: empty image stream");
  std::vector<T> values(a.bytes.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<T>(a.bytes[i]) / static_cast<T>(255);
  return Tensor<T>({a.dims[0], 1, a.dims[1], a.dims[2]}, std::move(values));
}

inline std::vector<int> idx_labels(const IdxArray& a) {
  if (a.dims.size() != 1) throw FormatError("idx: label stream must have 1 dimension");
  return std::vector<int>(a.bytes.begin(), a.bytes.end());
}

}  // namespace fastadv

#endif  // FASTADV_DATA_IDX_HPP
