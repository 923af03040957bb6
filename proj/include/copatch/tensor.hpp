#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "copatch/error.hpp"

namespace copatch {

/// Dense row-major tensor. The shape is never empty and every dimension is
/// at least 1, so `size() == product(shape)` always holds.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, T fill = T{})
      : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(element_count(shape_), fill);
  }

  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != element_count(shape_)) {
      throw ValidationError("tensor data length " + std::to_string(data_.size()) +
                            " does not match shape product " +
                            std::to_string(element_count(shape_)));
    }
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t ndim() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& values() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 2-D access; valid for tensors with ndim() >= 2 (trailing dims folded).
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : data_.size() / shape_[0]; }

  /// Contiguous view of the i-th slice along the leading dimension.
  std::span<const T> row(std::size_t i) const {
    const std::size_t n = cols();
    return std::span<const T>(data_).subspan(i * n, n);
  }
  std::span<T> row(std::size_t i) {
    const std::size_t n = cols();
    return std::span<T>(data_).subspan(i * n, n);
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>{});
  }

 private:
  static void check_shape(const std::vector<std::size_t>& shape) {
    if (shape.empty()) throw ValidationError("tensor shape must not be empty");
    for (auto d : shape) {
      if (d == 0) throw ValidationError("tensor dimensions must be >= 1");
    }
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

using TensorF32 = Tensor<float>;
/// {0,1} masks stored one byte per pixel.
using Bitmap = Tensor<std::uint8_t>;
/// Label grids; 0 is background.
using LabelGrid = Tensor<std::uint32_t>;
/// In-memory float grid (similarity maps); never serialized directly.
using MapGrid = Tensor<double>;

}  // namespace copatch
