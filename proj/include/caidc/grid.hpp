#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "caidc/error.hpp"

namespace caidc {

/// Dense row-major 2D matrix.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  bool same_shape(const auto& other) const noexcept {
    return rows_ == other.rows() && cols_ == other.cols();
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Image = Grid<double>;
using Mask = Grid<std::uint8_t>;

struct PixelIndex {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const PixelIndex&, const PixelIndex&) = default;
};

inline std::size_t count(const Mask& mask) {
  std::size_t n = 0;
  for (auto v : mask.data()) n += v != 0;
  return n;
}

}  // namespace caidc
