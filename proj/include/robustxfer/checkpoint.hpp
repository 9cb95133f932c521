#pragma once

// Checkpoint layout, all integers little-endian:
//
//   magic        4 bytes  "RXCK"
//   version      u32      kCheckpointVersion
//   arch         u32 length + UTF-8 JSON of ArchSpec
//   provenance   f64 epsilon_l2, u64 seed, u32 epochs
//   tensors      u32 count, then per tensor:
//                  u16 name length + name, u8 rank, u32 dims[rank],
//                  float32 values (row-major)
//   checksum     u32 CRC-32 of every preceding byte

#include <filesystem>

#include "bytes.hpp"
#include "classifier.hpp"

namespace rx {

inline constexpr char kCheckpointMagic[4] = {'R', 'X', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> encode_checkpoint(const Classifier& c) {
  ByteWriter w;
  w.bytes(std::string_view(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  const std::string arch = nlohmann::json(c.arch()).dump();
  w.u32(static_cast<std::uint32_t>(arch.size()));
  w.bytes(arch);
  w.f64(c.provenance().epsilon_l2);
  w.u64(c.provenance().seed);
  w.u32(static_cast<std::uint32_t>(c.provenance().epochs));
  w.u32(static_cast<std::uint32_t>(c.params().size()));
  for (const auto& p : c.params()) {
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.bytes(p.name);
    w.u8(static_cast<std::uint8_t>(p.value.rank()));
    for (auto d : p.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : p.value.values()) w.f32(v);
  }
  w.u32(crc32_of(w.data()));
  return std::move(w.data());
}

namespace detail {

inline bool checksum_ok(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) return false;
  ByteReader tail(bytes.last(4));
  return crc32_of(bytes.first(bytes.size() - 4)) == tail.u32();
}

}  // namespace detail

// Errors are distinguished by kind(): "bad-magic", "unsupported-version",
// "truncated", "checksum", "corrupt".
inline Classifier decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "truncated");
  if (r.bytes(4) != std::string_view(kCheckpointMagic, 4)) throw FormatError("bad-magic", "checkpoint: bad magic bytes");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported-version", detail::cat("checkpoint: unsupported format version ", version,
                                                         " (this build reads version ", kCheckpointVersion, ")"));
  try {
    ArchSpec arch;
    try {
      arch = nlohmann::json::parse(r.bytes(r.u32())).get<ArchSpec>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("corrupt", std::string("checkpoint: architecture record unreadable: ") + e.what());
    }
    Provenance prov;
    prov.epsilon_l2 = r.f64();
    prov.seed = r.u64();
    prov.epochs = static_cast<int>(r.u32());
    const std::uint32_t count = r.u32();
    std::vector<NamedTensor> params;
    for (std::uint32_t i = 0; i < count; ++i) {
      NamedTensor t;
      t.name = r.bytes(r.u16());
      Shape shape(r.u8());
      for (auto& d : shape) d = r.u32();
      if (static_cast<std::size_t>(numel(shape)) * 4 > r.remaining())
        throw FormatError("truncated", "checkpoint: tensor " + t.name + " payload runs past end of file");
      std::vector<float> v(static_cast<std::size_t>(numel(shape)));
      for (auto& x : v) x = r.f32();
      t.value = Tensor<float>(std::move(shape), std::move(v));
      params.push_back(std::move(t));
    }
    const std::size_t body = r.pos();
    const std::uint32_t stored = r.u32();
    if (r.remaining() != 0) throw FormatError("corrupt", "checkpoint: trailing bytes after checksum");
    if (crc32_of(bytes.first(body)) != stored) throw FormatError("checksum", "checkpoint: checksum mismatch");
    return Classifier(std::move(arch), std::move(params), prov);
  } catch (const Error& e) {
    // A damaged payload usually surfaces as a structural error first; report
    // it as a checksum failure unless the file simply ends early.
    if (e.kind() == "truncated" || e.kind() == "checksum" || detail::checksum_ok(bytes)) throw;
    throw FormatError("checksum", std::string("checkpoint: checksum mismatch (") + e.what() + ")");
  }
}

inline void save_checkpoint(const Classifier& c, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(c));
}

inline Classifier load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace rx
