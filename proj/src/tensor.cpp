#include "tta/tensor.hpp"

#include <cmath>
#include <sstream>

#include "tta/error.hpp"

namespace tta {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return shape.empty() ? 0 : n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_to_string(shape_));
  }
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_to_string(shape_));
  }
  return shape_[axis];
}

float& Tensor::at(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w) {
  return data_[(((n * shape_[1] + c) * shape_[2] + d) * shape_[3] + h) * shape_[4] + w];
}

float Tensor::at(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w) const {
  return data_[(((n * shape_[1] + c) * shape_[2] + d) * shape_[3] + h) * shape_[4] + w];
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::batch_slice(std::size_t first, std::size_t count) const {
  if (shape_.empty() || first + count > shape_[0]) {
    throw ShapeError("batch slice out of range for shape " + shape_to_string(shape_));
  }
  const std::size_t per = shape_[0] ? data_.size() / shape_[0] : 0;
  Shape s = shape_;
  s[0] = count;
  return Tensor(std::move(s), std::vector<float>(data_.begin() + first * per, data_.begin() + (first + count) * per));
}

Spatial spatial_of(const Tensor& t) {
  if (t.rank() != 5) throw ShapeError("expected a 5-D tensor, got shape " + shape_to_string(t.shape()));
  return {t.extent(2), t.extent(3), t.extent(4)};
}

Tensor concat_batch(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_batch of zero tensors");
  Shape shape = parts.front().shape();
  std::size_t batch = 0;
  std::vector<float> values;
  for (const Tensor& p : parts) {
    if (p.rank() != shape.size() || !std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1)) {
      throw ShapeError("concat_batch shape mismatch: " + shape_to_string(p.shape()) + " vs " +
                       shape_to_string(shape));
    }
    batch += p.extent(0);
    values.insert(values.end(), p.values().begin(), p.values().end());
  }
  shape[0] = batch;
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace tta
