#include "ttnlab/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "ttnlab/error.hpp"

namespace ttnlab {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

namespace {
void check_dims(const Shape& shape) {
  for (auto d : shape)
    require(d >= 1, ErrorKind::shape_mismatch, "tensor dimension must be >= 1, got " + shape_string(shape));
}
}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  require(shape_numel(shape_) == data_.size(), ErrorKind::shape_mismatch,
          "payload of " + std::to_string(data_.size()) + " floats does not match shape " + shape_string(shape_));
}

Tensor Tensor::reshaped(Shape shape) const {
  require(shape_numel(shape) == numel(), ErrorKind::shape_mismatch,
          "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::gather(std::span<const std::size_t> rows) const {
  require(rank() >= 1, ErrorKind::shape_mismatch, "gather on empty tensor");
  require(!rows.empty(), ErrorKind::invalid_argument, "gather with no rows");
  const std::size_t stride = numel() / shape_[0];
  Shape out_shape = shape_;
  out_shape[0] = rows.size();
  std::vector<float> out(rows.size() * stride);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < shape_[0], ErrorKind::invalid_argument, "gather row out of range");
    std::memcpy(out.data() + i * stride, data_.data() + rows[i] * stride, stride * sizeof(float));
  }
  return Tensor(std::move(out_shape), std::move(out));
}

Tensor Tensor::slice(std::size_t begin, std::size_t end) const {
  require(rank() >= 1 && begin < end && end <= shape_[0], ErrorKind::invalid_argument, "bad slice range");
  const std::size_t stride = numel() / shape_[0];
  Shape out_shape = shape_;
  out_shape[0] = end - begin;
  std::vector<float> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                         data_.begin() + static_cast<std::ptrdiff_t>(end * stride));
  return Tensor(std::move(out_shape), std::move(out));
}

bool Tensor::all_finite() const noexcept {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

bool Tensor::identical(const Tensor& other) const noexcept {
  return shape_ == other.shape_ && data_.size() == other.data_.size() &&
         (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0);
}

}  // namespace ttnlab
