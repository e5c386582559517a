#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "dtsep/error.hpp"
#include "dtsep/grid.hpp"
#include "dtsep/stft.hpp"

namespace dtsep {

/// Magnitude and phase planes normalised to [0, 1]. Magnitude is |S| / mag_scale,
/// phase is (angle(S) mod 2pi) / 2pi.
struct MagPhaseGrid {
  Grid<double> mag;
  Grid<double> phase;
  double mag_scale = 1.0;

  std::size_t bins() const noexcept { return mag.bins(); }
  std::size_t frames() const noexcept { return mag.frames(); }
};

struct WindowGeometry {
  int width = 20;
  int train_hop = 10;

  void validate() const {
    if (width < 1) throw Error(ErrorKind::InvalidArgument, "window width must be >= 1");
    if (train_hop < 1 || train_hop > width) {
      throw Error(ErrorKind::InvalidArgument,
                  "training hop must lie in [1, width], got " + std::to_string(train_hop));
    }
  }

  friend bool operator==(const WindowGeometry&, const WindowGeometry&) = default;
};

struct TrainingPair {
  Eigen::VectorXd input;   // [mag | phase] of the mixture window
  Eigen::VectorXd target;  // [mag1 | phase1 | mag2 | phase2]
};

inline std::size_t input_size(std::size_t bins, std::size_t width) { return 2 * bins * width; }
inline std::size_t output_size(std::size_t bins, std::size_t width) { return 4 * bins * width; }

/// Phase of z mapped to [0, 1). angle(0) is taken as 0.
inline double normalized_phase(Complex z) {
  double a = std::atan2(z.imag(), z.real());
  if (a < 0.0) a += 2.0 * std::numbers::pi;
  double p = a / (2.0 * std::numbers::pi);
  if (p >= 1.0) p = 0.0;
  return p + 0.0;  // folds -0.0
}

/// Splits S into normalised magnitude/phase planes. Without a scale the
/// grid's own max |S| is used (1 for an all-zero grid); with a supplied scale
/// magnitudes are clamped to [0, 1].
inline MagPhaseGrid split_normalize(const ComplexSpectrogram& spec,
                                    std::optional<double> scale = std::nullopt) {
  const auto& s = spec.data;
  if (scale && !(*scale > 0.0 && std::isfinite(*scale))) {
    throw Error(ErrorKind::InvalidArgument, "magnitude scale must be positive and finite");
  }
  double mag_scale = 1.0;
  if (scale) {
    mag_scale = *scale;
  } else {
    double peak = 0.0;
    for (const Complex& z : s.data()) peak = std::max(peak, std::abs(z));
    if (peak > 0.0) mag_scale = peak;
  }

  MagPhaseGrid g{Grid<double>(s.bins(), s.frames()), Grid<double>(s.bins(), s.frames()), mag_scale};
  auto src = s.data();
  auto mag = g.mag.data();
  auto phase = g.phase.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    double m = std::abs(src[i]) / mag_scale;
    if (scale) m = std::clamp(m, 0.0, 1.0);
    mag[i] = m;
    phase[i] = normalized_phase(src[i]);
  }
  return g;
}

inline std::size_t window_count(std::size_t frames, std::size_t width, std::size_t hop) {
  if (frames < width || width == 0 || hop == 0) return 0;
  return (frames - width) / hop + 1;
}

namespace detail {

inline void require_window(const Grid<double>& g, std::size_t bins, std::size_t width,
                           const char* what) {
  if (g.bins() != bins || g.frames() != width) {
    throw Error(ErrorKind::ShapeMismatch, std::string(what) + " window is " +
                                              std::to_string(g.bins()) + "x" +
                                              std::to_string(g.frames()) + ", expected " +
                                              std::to_string(bins) + "x" + std::to_string(width));
  }
}

inline void append_block(Eigen::VectorXd& out, Eigen::Index& pos, std::span<const double> block) {
  std::copy(block.begin(), block.end(), out.data() + pos);
  pos += static_cast<Eigen::Index>(block.size());
}

}  // namespace detail

/// Frame-major flattening (each frame's bins in ascending frequency), magnitude
/// block followed by phase block.
inline Eigen::VectorXd pack_input(const Grid<double>& mag, const Grid<double>& phase) {
  detail::require_window(phase, mag.bins(), mag.frames(), "phase");
  Eigen::VectorXd v(static_cast<Eigen::Index>(input_size(mag.bins(), mag.frames())));
  Eigen::Index pos = 0;
  detail::append_block(v, pos, mag.data());
  detail::append_block(v, pos, phase.data());
  return v;
}

/// Writes the input vector for the window starting at `start` directly from a
/// full-length grid (the window is a contiguous block in frame-major storage).
inline void pack_input_at(const MagPhaseGrid& grid, std::size_t start, std::size_t width,
                          Eigen::VectorXd& out) {
  out.resize(static_cast<Eigen::Index>(input_size(grid.bins(), width)));
  Eigen::Index pos = 0;
  detail::append_block(out, pos, grid.mag.frames_view(start, width));
  detail::append_block(out, pos, grid.phase.frames_view(start, width));
}

/// Target layout [mag1 | phase1 | mag2 | phase2].
inline Eigen::VectorXd pack_target(const Grid<double>& mag1, const Grid<double>& phase1,
                                   const Grid<double>& mag2, const Grid<double>& phase2) {
  const std::size_t bins = mag1.bins(), width = mag1.frames();
  detail::require_window(phase1, bins, width, "source-1 phase");
  detail::require_window(mag2, bins, width, "source-2 magnitude");
  detail::require_window(phase2, bins, width, "source-2 phase");
  Eigen::VectorXd v(static_cast<Eigen::Index>(output_size(bins, width)));
  Eigen::Index pos = 0;
  for (const auto* g : {&mag1, &phase1, &mag2, &phase2}) detail::append_block(v, pos, g->data());
  return v;
}

/// Inverse of pack_target: returns {mag1, phase1, mag2, phase2}.
inline std::array<Grid<double>, 4> unpack_output(const Eigen::Ref<const Eigen::VectorXd>& v,
                                                 std::size_t bins, std::size_t width) {
  if (static_cast<std::size_t>(v.size()) != output_size(bins, width)) {
    throw Error(ErrorKind::ShapeMismatch, "output vector has length " + std::to_string(v.size()) +
                                              ", expected " +
                                              std::to_string(output_size(bins, width)));
  }
  std::array<Grid<double>, 4> blocks;
  const std::size_t block = bins * width;
  for (std::size_t b = 0; b < 4; ++b) {
    blocks[b] = Grid<double>(bins, width);
    std::copy(v.data() + b * block, v.data() + (b + 1) * block, blocks[b].data().begin());
  }
  return blocks;
}

/// Cuts aligned mixture/source grids into windows of geom.width frames
/// starting every `hop` frames.
inline std::vector<TrainingPair> extract_windows(const MagPhaseGrid& mixture,
                                                 const MagPhaseGrid& source1,
                                                 const MagPhaseGrid& source2,
                                                 const WindowGeometry& geom, std::size_t hop) {
  geom.validate();
  if (hop == 0) throw Error(ErrorKind::InvalidArgument, "window hop must be >= 1");
  for (const auto* g : {&source1, &source2}) {
    if (!g->mag.same_shape(mixture.mag) || !g->phase.same_shape(mixture.mag)) {
      throw Error(ErrorKind::ShapeMismatch, "mixture and source grids differ in shape");
    }
  }
  if (!mixture.phase.same_shape(mixture.mag)) {
    throw Error(ErrorKind::ShapeMismatch, "mixture magnitude and phase differ in shape");
  }
  const auto width = static_cast<std::size_t>(geom.width);
  if (mixture.frames() < width) {
    throw Error(ErrorKind::InvalidArgument, "spectrogram has " + std::to_string(mixture.frames()) +
                                                " frames, fewer than the window width " +
                                                std::to_string(width));
  }
  const std::size_t count = window_count(mixture.frames(), width, hop);
  const std::size_t block = mixture.bins() * width;
  std::vector<TrainingPair> pairs(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t start = i * hop;
    pack_input_at(mixture, start, width, pairs[i].input);
    auto& target = pairs[i].target;
    target.resize(static_cast<Eigen::Index>(4 * block));
    Eigen::Index pos = 0;
    detail::append_block(target, pos, source1.mag.frames_view(start, width));
    detail::append_block(target, pos, source1.phase.frames_view(start, width));
    detail::append_block(target, pos, source2.mag.frames_view(start, width));
    detail::append_block(target, pos, source2.phase.frames_view(start, width));
  }
  return pairs;
}

}  // namespace dtsep
