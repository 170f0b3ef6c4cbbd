#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sense/error.hpp"

namespace sense {

// Dense row-major H x W x C raster.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(std::size_t height, std::size_t width, std::size_t channels = 1, T fill = T{})
      : height_(height), width_(width), channels_(channels),
        data_(height * width * channels, fill) {}

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t pixels() const noexcept { return height_ * width_; }
  bool empty() const noexcept { return data_.empty(); }

  T& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return data_[(y * width_ + x) * channels_ + c];
  }
  const T& at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return data_[(y * width_ + x) * channels_ + c];
  }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  template <typename U>
  bool same_extent(const Grid<U>& other) const noexcept {
    return height_ == other.height() && width_ == other.width();
  }

  bool operator==(const Grid& other) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<T> data_;
};

template <typename T, typename U>
void require_same_extent(const Grid<T>& a, const Grid<U>& b, const char* what) {
  if (!a.same_extent(b)) {
    throw Error(ErrorKind::shape_mismatch,
                std::string(what) + ": grid extents differ (" + std::to_string(a.height()) + "x" +
                    std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                    std::to_string(b.width()) + ")");
  }
}

template <typename T>
Grid<T> extract_channel(const Grid<T>& grid, std::size_t channel) {
  if (channel >= grid.channels()) throw Error(ErrorKind::invalid_argument, "channel out of range");
  Grid<T> out(grid.height(), grid.width(), 1);
  for (std::size_t y = 0; y < grid.height(); ++y) {
    for (std::size_t x = 0; x < grid.width(); ++x) out.at(y, x) = grid.at(y, x, channel);
  }
  return out;
}

}  // namespace sense
