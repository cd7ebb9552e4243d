#pragma once

// Flat tensor container:
//   "TPNC" | u16 version | u32 entry count |
//   entries { u32 name length | name (UTF-8) | u8 dtype (0 = f32) | u32 rank | i64 dims... | f32 payload } |
//   u32 CRC32 of every preceding byte
// All integers and floats little-endian.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tpn/encoders.hpp"
#include "tpn/generator.hpp"
#include "tpn/tensor.hpp"

namespace tpn {

inline constexpr uint16_t kCheckpointVersion = 1;

using TensorEntries = std::vector<std::pair<std::string, Tensor>>;

std::vector<uint8_t> encode_checkpoint(const TensorEntries& entries);
// Throws IntegrityError on truncation or CRC mismatch, VersionError on an
// unknown version and FormatError on a bad magic or dtype.
TensorEntries decode_checkpoint(const std::vector<uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& path, const TensorEntries& entries);
TensorEntries read_checkpoint(const std::filesystem::path& path);

// Everything the pipeline trains. Configurations travel as "config.*" scalar
// entries next to the weights.
struct ModelBundle {
  GeneratorState state;
  std::optional<LatentEncoder> phi;
  std::optional<OffsetNet> psi;
};

void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_checkpoint(const std::filesystem::path& path);

TensorEntries bundle_entries(const ModelBundle& bundle);
ModelBundle bundle_from_entries(const TensorEntries& entries);

}  // namespace tpn
