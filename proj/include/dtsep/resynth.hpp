#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "dtsep/audio_io.hpp"
#include "dtsep/dataset.hpp"
#include "dtsep/error.hpp"
#include "dtsep/grid.hpp"
#include "dtsep/mlp.hpp"
#include "dtsep/stft.hpp"

namespace dtsep {

/// Overlapping window predictions for one source, indexed (frame t, bin f,
/// window index w). The prediction for frame t made by the window starting
/// at frame s lives at w = t - s.
class PredictionStack {
 public:
  PredictionStack() = default;
  PredictionStack(std::size_t frames, std::size_t bins, std::size_t width)
      : frames_(frames), bins_(bins), width_(width),
        mag_(frames * bins * width, 0.0), theta_(frames * bins * width, 0.0),
        valid_(frames * bins * width, 0), count_(bins, frames, 0) {}

  std::size_t frames() const noexcept { return frames_; }
  std::size_t bins() const noexcept { return bins_; }
  std::size_t width() const noexcept { return width_; }

  /// Stores one prediction. Magnitude must be >= 0; theta is in radians.
  void set(std::size_t t, std::size_t f, std::size_t w, double mag, double theta) {
    const std::size_t i = index(t, f, w);
    if (!valid_[i]) {
      valid_[i] = 1;
      ++count_(f, t);
    }
    mag_[i] = mag;
    theta_[i] = theta;
  }

  bool has(std::size_t t, std::size_t f, std::size_t w) const { return valid_[index(t, f, w)] != 0; }
  double mag(std::size_t t, std::size_t f, std::size_t w) const { return mag_[index(t, f, w)]; }
  double theta(std::size_t t, std::size_t f, std::size_t w) const { return theta_[index(t, f, w)]; }
  int count(std::size_t t, std::size_t f) const { return count_(f, t); }
  const Grid<int>& counts() const noexcept { return count_; }

 private:
  std::size_t index(std::size_t t, std::size_t f, std::size_t w) const {
    return (t * bins_ + f) * width_ + w;
  }

  std::size_t frames_ = 0, bins_ = 0, width_ = 0;
  std::vector<double> mag_, theta_;
  std::vector<std::uint8_t> valid_;
  Grid<int> count_;
};

/// Raw network outputs, one column per sliding window (units x windows).
using RawOutputs = Eigen::MatrixXd;

/// Runs the model on every hop-1 window of the mixture grid.
inline RawOutputs infer_windows(const Mlp& model, const MagPhaseGrid& mixture,
                                const WindowGeometry& geom) {
  geom.validate();
  const auto width = static_cast<std::size_t>(geom.width);
  const std::size_t bins = mixture.bins();
  if (mixture.frames() < width) {
    throw Error(ErrorKind::InvalidArgument, "mixture has " + std::to_string(mixture.frames()) +
                                                " frames, fewer than the window width " +
                                                std::to_string(width));
  }
  if (model.input_size() != input_size(bins, width) ||
      model.output_size() != output_size(bins, width)) {
    throw Error(ErrorKind::ShapeMismatch,
                "model is " + std::to_string(model.input_size()) + "->" +
                    std::to_string(model.output_size()) + " but the window geometry needs " +
                    std::to_string(input_size(bins, width)) + "->" +
                    std::to_string(output_size(bins, width)));
  }
  const std::size_t windows = window_count(mixture.frames(), width, 1);
  RawOutputs out(static_cast<Eigen::Index>(model.output_size()), static_cast<Eigen::Index>(windows));
  Eigen::VectorXd input;
  for (std::size_t s = 0; s < windows; ++s) {
    pack_input_at(mixture, s, width, input);
    out.col(static_cast<Eigen::Index>(s)) = model.forward(input);
  }
  return out;
}

/// Output gain adaptation: subtracts each unit's mean over all windows.
/// Returns the per-unit means that were removed.
inline Eigen::VectorXd gain_adapt(RawOutputs& outputs) {
  if (outputs.cols() == 0) throw Error(ErrorKind::InvalidArgument, "gain adaptation needs at least one window");
  Eigen::VectorXd mean = outputs.rowwise().sum() / static_cast<double>(outputs.cols());
  outputs.colwise() -= mean;
  return mean;
}

inline double wrap_two_pi(double theta) {
  double r = std::fmod(theta, 2.0 * std::numbers::pi);
  if (r < 0.0) r += 2.0 * std::numbers::pi;
  if (r >= 2.0 * std::numbers::pi) r = 0.0;
  return r;
}

/// Scatters windowed outputs into per-source stacks. Magnitudes are floored
/// at 0; normalised phases are remapped to radians in [0, 2pi).
inline std::array<PredictionStack, 2> build_stacks(const RawOutputs& outputs, std::size_t bins,
                                                   std::size_t width) {
  if (static_cast<std::size_t>(outputs.rows()) != output_size(bins, width)) {
    throw Error(ErrorKind::ShapeMismatch, "raw outputs have " + std::to_string(outputs.rows()) +
                                              " units, expected " +
                                              std::to_string(output_size(bins, width)));
  }
  const auto windows = static_cast<std::size_t>(outputs.cols());
  const std::size_t frames = windows + width - 1;
  std::array<PredictionStack, 2> stacks{PredictionStack(frames, bins, width),
                                        PredictionStack(frames, bins, width)};
  const std::size_t block = bins * width;
  for (std::size_t s = 0; s < windows; ++s) {
    const double* col = outputs.data() + s * outputs.rows();
    for (std::size_t src = 0; src < 2; ++src) {
      const double* mag = col + (2 * src) * block;
      const double* phase = col + (2 * src + 1) * block;
      for (std::size_t w = 0; w < width; ++w) {
        for (std::size_t f = 0; f < bins; ++f) {
          const std::size_t i = w * bins + f;
          stacks[src].set(s + w, f, w, std::max(mag[i], 0.0),
                          wrap_two_pi(phase[i] * 2.0 * std::numbers::pi));
        }
      }
    }
  }
  return stacks;
}

/// Sliding-window inference without gain adaptation.
inline std::array<PredictionStack, 2> sliding_infer(const Mlp& model, const MagPhaseGrid& mixture,
                                                    const WindowGeometry& geom) {
  return build_stacks(infer_windows(model, mixture, geom), mixture.bins(),
                      static_cast<std::size_t>(geom.width));
}

/// Mean of the available predictions per cell (the actual count replaces the
/// full window size at the edges).
inline Grid<double> aggregate_magnitude(const PredictionStack& stack) {
  Grid<double> out(stack.bins(), stack.frames(), 0.0);
  for (std::size_t t = 0; t < stack.frames(); ++t) {
    for (std::size_t f = 0; f < stack.bins(); ++f) {
      const int n = stack.count(t, f);
      if (n == 0) continue;
      double sum = 0.0;
      for (std::size_t w = 0; w < stack.width(); ++w)
        if (stack.has(t, f, w)) sum += stack.mag(t, f, w);
      out(f, t) = sum / n;
    }
  }
  return out;
}

constexpr double kDegenerateResultant = 1e-9;

struct CircularMean {
  Grid<double> theta_bar;      // radians in (-pi, pi]
  Grid<double> resultant_len;  // |sum of unit vectors| / count, in [0, 1]
  std::size_t degenerate = 0;  // cells whose resultant vanished; theta_bar set to 0
};

/// Direction of the summed unit vectors at each cell via four-quadrant atan2.
inline CircularMean circular_mean_phase(const PredictionStack& stack) {
  CircularMean cm{Grid<double>(stack.bins(), stack.frames(), 0.0),
                  Grid<double>(stack.bins(), stack.frames(), 0.0), 0};
  for (std::size_t t = 0; t < stack.frames(); ++t) {
    for (std::size_t f = 0; f < stack.bins(); ++f) {
      const int n = stack.count(t, f);
      if (n == 0) continue;
      double rx = 0.0, ry = 0.0;
      for (std::size_t w = 0; w < stack.width(); ++w) {
        if (!stack.has(t, f, w)) continue;
        const double th = wrap_two_pi(stack.theta(t, f, w));
        rx += std::cos(th);
        ry += std::sin(th);
      }
      const double len = std::hypot(rx, ry);
      if (len < kDegenerateResultant) {
        cm.theta_bar(f, t) = 0.0;
        ++cm.degenerate;
      } else {
        const double th = std::atan2(ry, rx);
        cm.theta_bar(f, t) = th == -std::numbers::pi ? std::numbers::pi : th;
      }
      cm.resultant_len(f, t) = std::min(len / n, 1.0);
    }
  }
  return cm;
}

/// S = scale * M * exp(i theta)
inline ComplexSpectrogram recombine(const Grid<double>& mag_bar, const Grid<double>& theta_bar,
                                    double mag_scale, const StftConfig& config, int sample_rate) {
  if (!mag_bar.same_shape(theta_bar)) {
    throw Error(ErrorKind::ShapeMismatch, "magnitude and phase estimates differ in shape");
  }
  ComplexSpectrogram spec{Grid<Complex>(mag_bar.bins(), mag_bar.frames()), config, sample_rate};
  auto m = mag_bar.data();
  auto th = theta_bar.data();
  auto out = spec.data.data();
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double r = mag_scale * m[i];
    out[i] = r == 0.0 ? Complex(0.0, 0.0) : Complex(r * std::cos(th[i]), r * std::sin(th[i]));
  }
  return spec;
}

struct NormalizationScales {
  double mixture = 1.0;
  std::array<double, 2> sources{1.0, 1.0};
};

/// Everything needed to run separation: network plus the analysis settings
/// and magnitude scales it was trained with.
struct TrainedSeparator {
  Mlp model;
  int sample_rate = 4000;
  StftConfig stft;
  WindowGeometry geometry;
  NormalizationScales scales;
};

struct AggregatedSpectra {
  Grid<double> mag_bar;
  Grid<double> theta_bar;
  Grid<double> resultant_len;
};

struct SeparationResult {
  std::array<AudioClip, 2> sources;
  std::array<AggregatedSpectra, 2> spectra;
  std::size_t windows = 0;
  std::size_t degenerate_cells = 0;
  bool gain_adapted = false;
};

/// End-to-end: STFT, normalise with the training scale, slide the network,
/// optionally gain-adapt, aggregate, recombine and overlap-add. Output clips
/// have the mixture's length; samples past the last full frame are zero.
inline SeparationResult separate(const TrainedSeparator& sep, const AudioClip& mixture,
                                 bool gain_adaptation) {
  if (mixture.sample_rate != sep.sample_rate) {
    throw Error(ErrorKind::RateMismatch, "mixture is at " + std::to_string(mixture.sample_rate) +
                                             " Hz, model expects " + std::to_string(sep.sample_rate) + " Hz");
  }
  const auto width = static_cast<std::size_t>(sep.geometry.width);
  const std::size_t needed = (width - 1) * static_cast<std::size_t>(sep.stft.hop) +
                             static_cast<std::size_t>(sep.stft.window_size);
  if (mixture.size() < needed) {
    throw Error(ErrorKind::InvalidArgument,
                "mixture has " + std::to_string(mixture.size()) + " samples; at least " +
                    std::to_string(needed) + " are needed for one " + std::to_string(width) +
                    "-frame window");
  }
  const auto spec = stft_forward(mixture, sep.stft);
  const auto grid = split_normalize(spec, sep.scales.mixture);
  RawOutputs raw = infer_windows(sep.model, grid, sep.geometry);
  if (gain_adaptation) gain_adapt(raw);
  const auto stacks = build_stacks(raw, grid.bins(), width);

  SeparationResult result;
  result.windows = static_cast<std::size_t>(raw.cols());
  result.gain_adapted = gain_adaptation;
  for (std::size_t s = 0; s < 2; ++s) {
    auto& agg = result.spectra[s];
    agg.mag_bar = aggregate_magnitude(stacks[s]);
    auto cm = circular_mean_phase(stacks[s]);
    agg.theta_bar = std::move(cm.theta_bar);
    agg.resultant_len = std::move(cm.resultant_len);
    result.degenerate_cells += cm.degenerate;
    const auto est = recombine(agg.mag_bar, agg.theta_bar, sep.scales.sources[s], sep.stft,
                               sep.sample_rate);
    auto clip = istft_overlap_add(est);
    clip.samples.resize(mixture.size(), 0.0);
    result.sources[s] = std::move(clip);
  }
  return result;
}

/// CSV dump of an aggregated estimate, one row per frame-bin cell:
/// frame,bin,mag_bar,theta_bar,resultant_len
inline void write_spectra_csv(const AggregatedSpectra& spectra, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open for writing: " + path.string());
  out.precision(10);
  out << "frame,bin,mag_bar,theta_bar,resultant_len\n";
  for (std::size_t t = 0; t < spectra.mag_bar.frames(); ++t)
    for (std::size_t f = 0; f < spectra.mag_bar.bins(); ++f)
      out << t << ',' << f << ',' << spectra.mag_bar(f, t) << ',' << spectra.theta_bar(f, t) << ','
          << spectra.resultant_len(f, t) << '\n';
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

}  // namespace dtsep
