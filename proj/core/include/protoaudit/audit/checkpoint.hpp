#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "protoaudit/protonet/model.hpp"

namespace protoaudit::audit {

using protonet::ProtoNetModel;

inline constexpr char kCheckpointMagic[4] = {'P', 'R', 'P', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointMetadata {
  std::int32_t x = 0;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;

  friend bool operator==(const CheckpointMetadata&, const CheckpointMetadata&) = default;
};

struct Checkpoint {
  ProtoNetModel model;
  CheckpointMetadata metadata;
};

/// PRP1 layout, all integers little-endian:
///   magic "PRP1" | u32 version | u32 length + architecture text |
///   u32 tensor count, then per tensor: u32 name length + name, u32 rank,
///   u32 dims, f32 payload |
///   u32 prototype count, then per prototype: i32 owner, u8 has_source,
///   u64 image id, u32 h, u32 w, f64 distance |
///   i32 x | u64 seed | u64 epoch
std::vector<std::uint8_t> serialize_checkpoint(const ProtoNetModel& model,
                                               const CheckpointMetadata& metadata);

/// Throws CheckpointError on bad magic, version mismatch, truncation,
/// trailing bytes or tensors that do not fit the architecture.
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const ProtoNetModel& model, const CheckpointMetadata& metadata,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace protoaudit::audit
