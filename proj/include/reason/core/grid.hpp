#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace reason {

/// Dense row-major 2-D array.
template <typename T> class Grid {
public:
  Grid() = default;
  Grid(int rows, int cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {
    if (rows < 0 || cols < 0)
      throw std::invalid_argument("Grid: negative extent");
  }
  Grid(int rows, int cols, std::vector<T> data) : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != static_cast<std::size_t>(rows) * cols)
      throw std::invalid_argument("Grid: data size does not match extents");
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T &operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  const T &operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  T &operator[](std::size_t i) { return data_[i]; }
  const T &operator[](std::size_t i) const { return data_[i]; }

  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  const std::vector<T> &values() const { return data_; }

  bool same_shape(const Grid &other) const { return rows_ == other.rows_ && cols_ == other.cols_; }
  template <typename U> bool same_shape(const Grid<U> &other) const {
    return rows_ == other.rows() && cols_ == other.cols();
  }

  friend bool operator==(const Grid &a, const Grid &b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

using GridF = Grid<double>;
using GridU8 = Grid<std::uint8_t>;

} // namespace reason
