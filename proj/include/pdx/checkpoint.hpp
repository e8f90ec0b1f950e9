#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "pdx/errors.hpp"
#include "pdx/tensor.hpp"

namespace pdx {

enum class StorageType : std::uint8_t { f64 = 0, f32 = 1 };

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

/// Binary layout, little-endian:
///   "PDX1" | u16 version | u32 meta length | meta JSON | u32 count |
///   count x (u32 name length | name | u8 dtype | u8 rank | u32 dims[rank] | values) |
///   u32 CRC32 of every preceding byte.
/// The metadata records the storage type under "storage".
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const NamedTensor& get(const std::string& name) const;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> checkpoint_bytes(const Checkpoint& ckpt, StorageType storage = StorageType::f64);
Checkpoint checkpoint_parse(const std::vector<std::uint8_t>& bytes);

void checkpoint_save(const Checkpoint& ckpt, const std::filesystem::path& path, StorageType storage = StorageType::f64);
/// Throws CorruptionError on bad magic, version, CRC, truncation, unknown
/// dtype or duplicate names.
Checkpoint checkpoint_load(const std::filesystem::path& path);

/// Every parameter of a store as named tensors, in store order.
std::vector<NamedTensor> tensors_from(const ParamStore& store);
/// Copies checkpoint values into a store; names and shapes must match exactly.
void load_into(ParamStore& store, const Checkpoint& ckpt);

}  // namespace pdx
