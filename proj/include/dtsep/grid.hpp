#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dtsep/error.hpp"

namespace dtsep {

/// Dense bins x frames array stored frame-major: the bins of one frame are
/// contiguous, so a run of consecutive frames is one contiguous block.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(std::size_t bins, std::size_t frames, T fill = T{})
      : bins_(bins), frames_(frames), data_(bins * frames, fill) {}

  std::size_t bins() const noexcept { return bins_; }
  std::size_t frames() const noexcept { return frames_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t bin, std::size_t frame) {
    return data_[frame * bins_ + bin];
  }
  const T& operator()(std::size_t bin, std::size_t frame) const {
    return data_[frame * bins_ + bin];
  }

  std::span<T> frame(std::size_t t) {
    return {data_.data() + t * bins_, bins_};
  }
  std::span<const T> frame(std::size_t t) const {
    return {data_.data() + t * bins_, bins_};
  }

  /// Contiguous view over frames [start, start + count).
  std::span<const T> frames_view(std::size_t start, std::size_t count) const {
    if (start + count > frames_) {
      throw Error(ErrorKind::ShapeMismatch,
                  "frame range [" + std::to_string(start) + ", " +
                      std::to_string(start + count) + ") exceeds " +
                      std::to_string(frames_) + " frames");
    }
    return {data_.data() + start * bins_, count * bins_};
  }

  /// Copy of frames [start, start + count) as a new grid.
  Grid slice(std::size_t start, std::size_t count) const {
    auto view = frames_view(start, count);
    Grid out(bins_, count);
    std::copy(view.begin(), view.end(), out.data_.begin());
    return out;
  }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  bool same_shape(const Grid& other) const noexcept {
    return bins_ == other.bins_ && frames_ == other.frames_;
  }

  template <typename U>
  bool same_shape(const Grid<U>& other) const noexcept {
    return bins_ == other.bins() && frames_ == other.frames();
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t bins_ = 0;
  std::size_t frames_ = 0;
  std::vector<T> data_;
};

}  // namespace dtsep
