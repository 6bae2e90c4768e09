#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ttnlab {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major float32 array. A default-constructed tensor is empty
/// (rank 0, no data) and only serves as a placeholder.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }
  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }
  const std::vector<float>& storage() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  /// NCHW element access; only valid for rank-4 tensors.
  float& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  float at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  /// Copies the samples listed in `rows` (indices along axis 0).
  Tensor gather(std::span<const std::size_t> rows) const;

  /// Contiguous slice [begin, end) along axis 0.
  Tensor slice(std::size_t begin, std::size_t end) const;

  bool all_finite() const noexcept;

  /// Bitwise equality of shape and payload.
  bool identical(const Tensor& other) const noexcept;

 private:
  Shape shape_;
  std::vector<float> data_;
};

}  // namespace ttnlab
