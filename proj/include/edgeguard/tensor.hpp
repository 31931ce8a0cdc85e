#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace edgeguard {

// Dense row-major float32 array. The last dimension is contiguous.
//
// A default-constructed tensor is a rank-0 scalar holding one zero. Every
// dimension of a non-scalar tensor is >= 1 and product(shape) == size().
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor();
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  // [C,H,W] accessors; no bounds checking beyond debug asserts.
  float& at(std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  float at(std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }

  // Same data, different shape. Element count must match.
  Tensor reshaped(Shape shape) const;

  void fill(float value) noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

std::size_t shape_product(const Tensor::Shape& shape) noexcept;
std::string shape_string(const Tensor::Shape& shape);

// Bit-level equality, distinguishing -0.0 from 0.0 and comparing NaN payloads.
bool bit_identical(const Tensor& a, const Tensor& b) noexcept;

}  // namespace edgeguard
