#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tta/tensor.hpp"

namespace tta {

struct Dims {
  std::size_t d = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t count() const { return d * h * w; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

/// Dense 3-D grid, width fastest, with isotropic voxel size in millimetres.
template <typename T>
struct Grid {
  Dims dims;
  float voxel_size_mm = 0.6f;
  std::vector<T> values;

  Grid() = default;
  explicit Grid(Dims extent, float voxel_mm = 0.6f, T fill = T{})
      : dims(extent), voxel_size_mm(voxel_mm), values(extent.count(), fill) {}

  std::size_t size() const { return values.size(); }
  std::size_t index(std::size_t d, std::size_t h, std::size_t w) const { return (d * dims.h + h) * dims.w + w; }
  T& at(std::size_t d, std::size_t h, std::size_t w) { return values[index(d, h, w)]; }
  const T& at(std::size_t d, std::size_t h, std::size_t w) const { return values[index(d, h, w)]; }

  friend bool operator==(const Grid&, const Grid&) = default;
};

using Volume = Grid<float>;
using LabelMap = Grid<std::uint8_t>;

/// Stacks volumes of equal extent into a (N, 1, D, H, W) tensor.
Tensor to_batch(std::span<const Volume> volumes);
Tensor to_batch(const Volume& volume);

inline constexpr std::uint32_t kVolumeFileVersion = 1;

/// Volume file layout: "TVOL" | u32 version | u8 dtype (0 = f32 intensity,
/// 1 = u8 labels) | u32 dims[3] (D, H, W) | f32 voxel size mm | payload,
/// little-endian, width fastest.
void save_volume(const Volume& v, const std::filesystem::path& path);
void save_label_map(const LabelMap& labels, const std::filesystem::path& path);
Volume load_volume(const std::filesystem::path& path);
LabelMap load_label_map(const std::filesystem::path& path);

std::vector<std::uint8_t> serialize_volume(const Volume& v);
std::vector<std::uint8_t> serialize_label_map(const LabelMap& labels);
Volume deserialize_volume(std::span<const std::uint8_t> bytes);
LabelMap deserialize_label_map(std::span<const std::uint8_t> bytes);

}  // namespace tta
