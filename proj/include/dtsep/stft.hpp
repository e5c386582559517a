#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>
#include <vector>

#include "dtsep/audio_io.hpp"
#include "dtsep/error.hpp"
#include "dtsep/grid.hpp"

namespace dtsep {

enum class WindowType { Hann };

struct StftConfig {
  int window_size = 128;
  int hop = 1;
  WindowType window = WindowType::Hann;

  int bins() const noexcept { return window_size / 2 + 1; }

  void validate() const {
    if (window_size < 2 || window_size % 2 != 0) {
      throw Error(ErrorKind::InvalidArgument,
                  "STFT window size must be even and >= 2, got " + std::to_string(window_size));
    }
    if (hop < 1 || hop > window_size) {
      throw Error(ErrorKind::InvalidArgument, "STFT hop must lie in [1, window_size], got " +
                                                  std::to_string(hop));
    }
  }

  friend bool operator==(const StftConfig&, const StftConfig&) = default;
};

using Complex = std::complex<double>;

struct ComplexSpectrogram {
  Grid<Complex> data;  // bins x frames
  StftConfig config;
  int sample_rate = 0;

  std::size_t bins() const noexcept { return data.bins(); }
  std::size_t frames() const noexcept { return data.frames(); }
};

/// Periodic Hann window, w[n] = 0.5 (1 - cos(2 pi n / N)).
inline std::vector<double> hann(int window_size) {
  if (window_size < 2) {
    throw Error(ErrorKind::InvalidArgument, "Hann window needs at least 2 points");
  }
  std::vector<double> w(static_cast<std::size_t>(window_size));
  for (int n = 0; n < window_size; ++n) {
    w[static_cast<std::size_t>(n)] =
        0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * n / window_size));
  }
  return w;
}

inline std::vector<double> make_window(const StftConfig& config) {
  switch (config.window) {
    case WindowType::Hann: return hann(config.window_size);
  }
  throw Error(ErrorKind::InvalidArgument, "unknown window type");
}

inline std::size_t frame_count(std::size_t length, const StftConfig& config) {
  const auto n = static_cast<std::size_t>(config.window_size);
  if (length < n) return 0;
  return (length - n) / static_cast<std::size_t>(config.hop) + 1;
}

namespace detail {

// The FFTW planner is not re-entrant; executing an existing plan is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwPlanDeleter {
  void operator()(fftw_plan_s* p) const noexcept { fftw_destroy_plan(p); }
};
struct FftwFree {
  void operator()(void* p) const noexcept { fftw_free(p); }
};

using PlanPtr = std::unique_ptr<fftw_plan_s, FftwPlanDeleter>;
template <typename T>
using FftwBuffer = std::unique_ptr<T[], FftwFree>;

/// Real-input forward DFT of fixed size n (no scaling).
class RealForwardFft {
 public:
  explicit RealForwardFft(int n)
      : n_(n),
        in_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
        out_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
    std::lock_guard lock(fftw_planner_mutex());
    plan_.reset(fftw_plan_dft_r2c_1d(n, in_.get(), out_.get(), FFTW_ESTIMATE));
  }

  double* input() noexcept { return in_.get(); }
  void execute() noexcept { fftw_execute(plan_.get()); }
  Complex output(int k) const noexcept { return {out_[k][0], out_[k][1]}; }

 private:
  int n_;
  FftwBuffer<double> in_;
  FftwBuffer<fftw_complex> out_;
  PlanPtr plan_;
};

/// Full complex inverse DFT of size n (no scaling).
class ComplexInverseFft {
 public:
  explicit ComplexInverseFft(int n)
      : n_(n),
        in_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n))),
        out_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n))) {
    std::lock_guard lock(fftw_planner_mutex());
    plan_.reset(fftw_plan_dft_1d(n, in_.get(), out_.get(), FFTW_BACKWARD, FFTW_ESTIMATE));
  }

  void set_input(int k, Complex v) noexcept {
    in_[k][0] = v.real();
    in_[k][1] = v.imag();
  }
  void execute() noexcept { fftw_execute(plan_.get()); }
  double real(int k) const noexcept { return out_[k][0]; }
  double imag(int k) const noexcept { return out_[k][1]; }

 private:
  int n_;
  FftwBuffer<fftw_complex> in_;
  FftwBuffer<fftw_complex> out_;
  PlanPtr plan_;
};

}  // namespace detail

/// Windowed DFT of every frame that fits entirely inside the clip (no edge
/// padding). Frame t covers samples [t*hop, t*hop + window_size).
inline ComplexSpectrogram stft_forward(const AudioClip& clip, const StftConfig& config) {
  config.validate();
  const std::size_t frames = frame_count(clip.size(), config);
  if (frames == 0) {
    throw Error(ErrorKind::InvalidArgument,
                "clip of " + std::to_string(clip.size()) + " samples is shorter than one " +
                    std::to_string(config.window_size) + "-sample STFT window");
  }
  const int n = config.window_size;
  const auto window = make_window(config);
  ComplexSpectrogram spec{Grid<Complex>(static_cast<std::size_t>(config.bins()), frames), config,
                          clip.sample_rate};
  detail::RealForwardFft fft(n);
  double* in = fft.input();
  for (std::size_t t = 0; t < frames; ++t) {
    const double* x = clip.samples.data() + t * static_cast<std::size_t>(config.hop);
    for (int i = 0; i < n; ++i) in[i] = x[i] * window[static_cast<std::size_t>(i)];
    fft.execute();
    auto column = spec.data.frame(t);
    for (int k = 0; k < config.bins(); ++k) column[static_cast<std::size_t>(k)] = fft.output(k);
  }
  return spec;
}

struct IstftDiagnostics {
  double max_imag_residue = 0.0;  // largest |imag| of any inverse-DFT frame output
  std::size_t uncovered_samples = 0;  // samples whose window sum fell below the floor
};

constexpr double kWindowSumFloor = 1e-8;

/// Overlap-add inverse. Each frame is inverse-DFT'd from its Hermitian
/// extension, summed at its offset, and the sum is divided by the
/// accumulated analysis window. Output length is (frames-1)*hop + window_size.
inline AudioClip istft_overlap_add(const ComplexSpectrogram& spec, IstftDiagnostics* diag = nullptr) {
  const auto& config = spec.config;
  config.validate();
  if (spec.bins() != static_cast<std::size_t>(config.bins())) {
    throw Error(ErrorKind::ShapeMismatch, "spectrogram has " + std::to_string(spec.bins()) +
                                              " bins, expected " + std::to_string(config.bins()));
  }
  if (spec.frames() == 0) throw Error(ErrorKind::ShapeMismatch, "spectrogram has no frames");

  const int n = config.window_size;
  const int half = n / 2;
  const std::size_t hop = static_cast<std::size_t>(config.hop);
  const std::size_t length = (spec.frames() - 1) * hop + static_cast<std::size_t>(n);
  const auto window = make_window(config);

  std::vector<double> acc(length, 0.0), wsum(length, 0.0);
  detail::ComplexInverseFft ifft(n);
  const double inv_n = 1.0 / n;
  double max_imag = 0.0;
  for (std::size_t t = 0; t < spec.frames(); ++t) {
    auto column = spec.data.frame(t);
    // Bins 0 and N/2 of a real signal's spectrum are real.
    ifft.set_input(0, Complex(column[0].real(), 0.0));
    ifft.set_input(half, Complex(column[static_cast<std::size_t>(half)].real(), 0.0));
    for (int k = 1; k < half; ++k) {
      const Complex v = column[static_cast<std::size_t>(k)];
      ifft.set_input(k, v);
      ifft.set_input(n - k, std::conj(v));
    }
    ifft.execute();
    const std::size_t offset = t * hop;
    for (int i = 0; i < n; ++i) {
      acc[offset + static_cast<std::size_t>(i)] += ifft.real(i) * inv_n;
      wsum[offset + static_cast<std::size_t>(i)] += window[static_cast<std::size_t>(i)];
      max_imag = std::max(max_imag, std::abs(ifft.imag(i) * inv_n));
    }
  }

  AudioClip out;
  out.sample_rate = spec.sample_rate;
  out.samples.resize(length);
  std::size_t uncovered = 0;
  for (std::size_t i = 0; i < length; ++i) {
    if (wsum[i] < kWindowSumFloor) {
      out.samples[i] = 0.0;
      ++uncovered;
    } else {
      out.samples[i] = acc[i] / wsum[i];
    }
  }
  if (diag) {
    diag->max_imag_residue = max_imag;
    diag->uncovered_samples = uncovered;
  }
  return out;
}

}  // namespace dtsep
