#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tta/network.hpp"

namespace tta {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary checkpoint layout (all integers and floats little-endian):
///
///   "TTCK" | u32 version | u32 layer count
///   per layer: u8 kind | u32 name length | name bytes | u32 tensor count
///              per tensor: u8 rank | u32 extents[rank] | f32 payload
///   optional:  "THTE" | u32 count | f32 importance[count]
///
/// Tensor order per kind: Conv3d {weight, bias}; BatchNorm {weight, bias,
/// running_mean, running_var}; Concat {skip source index as one f32}.
std::vector<std::uint8_t> serialize_checkpoint(const Network& net);
Network deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Network& net, const std::filesystem::path& path);
Network load_checkpoint(const std::filesystem::path& path);

}  // namespace tta
