#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tta {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense float32 tensor, row-major with the last axis fastest.
/// 5-D tensors are laid out as (batch, channel, depth, height, width).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  /// Element access for 5-D tensors.
  float& at(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w);
  float at(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w) const;

  void fill(float v);
  bool all_finite() const;
  /// Reinterprets the data with a new shape of equal element count.
  Tensor reshaped(Shape shape) const;

  /// Contiguous slice of the batch axis [first, first + count).
  Tensor batch_slice(std::size_t first, std::size_t count) const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Spatial extents (D, H, W) of a 5-D tensor.
struct Spatial {
  std::size_t d = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t count() const { return d * h * w; }
  friend bool operator==(const Spatial&, const Spatial&) = default;
};

Spatial spatial_of(const Tensor& t);

/// Concatenates 5-D tensors along the batch axis.
Tensor concat_batch(std::span<const Tensor> parts);

}  // namespace tta
