#ifndef FASTADV_IO_CHECKPOINT_HPP
#define FASTADV_IO_CHECKPOINT_HPP

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fastadv/core/error.hpp"
#include "fastadv/data/idx.hpp"
#include "fastadv/nn/model.hpp"

namespace fastadv {

/// Parameters of one model plus a JSON state blob.
///
/// Layout (little-endian):
///   "FADVCKPT" | u32 version | u32 len + descriptor | u32 len + state json |
///   u32 count | count x (u32 len + name | u32 rank | rank x u64 dim | u64 offset | u64 count) |
///   u64 payload length (floats) | float32 payload
struct Checkpoint {
  static constexpr std::uint32_t version = 1;

  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset = 0;
    std::uint64_t count = 0;
  };

  std::string descriptor;
  nlohmann::ordered_json state = nlohmann::ordered_json::object();
  std::vector<Entry> manifest;
  std::vector<float> payload;
};

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'F', 'A', 'D', 'V', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(const std::string& s) {
    le<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  void need(std::size_t n) const {
    if (n > in_.size() - pos_) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  template <typename U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  std::string str() {
    const auto n = le<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Snapshot of a model's parameters, stored as float32.
template <typename T>
Checkpoint make_checkpoint(const Model<T>& model, nlohmann::ordered_json state = nlohmann::ordered_json::object()) {
  Checkpoint c;
  c.descriptor = model.architecture().descriptor();
  c.state = std::move(state);
  for (const auto& p : model.parameters()) {
    c.manifest.push_back({p.name, p.value.shape(), c.payload.size(), p.value.size()});
    for (T v : p.value.data()) c.payload.push_back(static_cast<float>(v));
  }
  return c;
}

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  detail::Writer w;
  w.bytes(detail::kCheckpointMagic, 8);
  w.le<std::uint32_t>(Checkpoint::version);
  w.str(c.descriptor);
  w.str(c.state.dump());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(c.manifest.size()));
  for (const auto& e : c.manifest) {
    w.str(e.name);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) w.le<std::uint64_t>(d);
    w.le<std::uint64_t>(e.offset);
    w.le<std::uint64_t>(e.count);
  }
  w.le<std::uint64_t>(c.payload.size());
  for (float f : c.payload) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    w.le<std::uint32_t>(bits);
  }
  return std::move(w.out);
}

/// Parses and validates a checkpoint. Throws FormatError on a bad magic,
/// unknown version, truncation, trailing bytes, or a manifest whose ranges
/// overlap or fall outside the payload.
inline Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::Reader r(bytes);
  const auto magic = r.take(8);
  if (std::memcmp(magic.data(), detail::kCheckpointMagic, 8) != 0) throw FormatError("not a checkpoint (bad magic)");
  const auto v = r.le<std::uint32_t>();
  if (v != Checkpoint::version) throw FormatError("unsupported checkpoint version " + std::to_string(v));
  Checkpoint c;
  c.descriptor = r.str();
  try {
    c.state = nlohmann::ordered_json::parse(r.str());
  } catch (const nlohmann::json::exception&) {
    throw FormatError("checkpoint state is not valid JSON");
  }
  const auto n = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    Checkpoint::Entry e;
    e.name = r.str();
    const auto rank = r.le<std::uint32_t>();
    if (rank > 8) throw FormatError("checkpoint entry '" + e.name + "' has rank " + std::to_string(rank));
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(static_cast<std::size_t>(r.le<std::uint64_t>()));
    e.offset = r.le<std::uint64_t>();
    e.count = r.le<std::uint64_t>();
    if (numel(e.shape) != e.count) throw FormatError("checkpoint entry '" + e.name + "' count does not match its shape");
    c.manifest.push_back(std::move(e));
  }
  const auto len = r.le<std::uint64_t>();
  if (len > r.remaining() / 4) throw FormatError("checkpoint payload truncated");
  c.payload.resize(len);
  for (auto& f : c.payload) {
    const auto bits = r.le<std::uint32_t>();
    std::memcpy(&f, &bits, 4);
  }
  if (r.remaining() != 0) throw FormatError("checkpoint has " + std::to_string(r.remaining()) + " trailing bytes");
  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
  for (const auto& e : c.manifest) {
    if (e.offset > len || e.count > len - e.offset) throw FormatError("checkpoint entry '" + e.name + "' out of range");
    ranges.emplace_back(e.offset, e.offset + e.count);
  }
  std::sort(ranges.begin(), ranges.end());
  for (std::size_t i = 1; i < ranges.size(); ++i) {
    if (ranges[i].first < ranges[i - 1].second) throw FormatError("checkpoint entries overlap");
  }
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(c);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_checkpoint(bytes);
}

/// Copies the checkpoint into `model`. The architecture descriptor and every
/// parameter name and shape must match.
template <typename T>
void restore(const Checkpoint& c, Model<T>& model) {
  const auto want = model.architecture().descriptor();
  if (c.descriptor != want) {
    throw ShapeError("checkpoint architecture '" + c.descriptor + "' does not match model '" + want + "'");
  }
  auto& params = model.parameters();
  if (params.size() != c.manifest.size()) throw ShapeError("checkpoint has a different parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = c.manifest[i];
    if (e.name != params[i].name || e.shape != params[i].value.shape()) {
      throw ShapeError("checkpoint entry '" + e.name + "' does not match parameter '" + params[i].name + "'");
    }
    auto dst = params[i].value.data();
    for (std::size_t k = 0; k < e.count; ++k) dst[k] = static_cast<T>(c.payload[e.offset + k]);
  }
}

}  // namespace fastadv

#endif  // FASTADV_IO_CHECKPOINT_HPP
