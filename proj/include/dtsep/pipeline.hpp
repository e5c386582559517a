#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dtsep/audio_io.hpp"
#include "dtsep/bss_eval.hpp"
#include "dtsep/config.hpp"
#include "dtsep/dataset.hpp"
#include "dtsep/mlp.hpp"
#include "dtsep/oracle.hpp"
#include "dtsep/resynth.hpp"
#include "dtsep/stft.hpp"

namespace dtsep {

/// Mixture plus the equalized references it was summed from.
struct PreparedAudio {
  AudioClip mixture;
  std::array<AudioClip, 2> references;
};

/// Decimates both sources to `rate`, trims to a common length, equalizes and mixes.
inline PreparedAudio prepare_sources(const AudioClip& a, const AudioClip& b, int rate) {
  auto mixed = equalize_and_mix(decimate(a, rate), decimate(b, rate));
  return {std::move(mixed.mixture), {std::move(mixed.a_scaled), std::move(mixed.b_scaled)}};
}

/// Samples [start_s, start_s + seconds) clamped to the clip.
inline AudioClip time_span(const AudioClip& clip, double start_s, double seconds) {
  const auto begin = std::min(clip.size(), static_cast<std::size_t>(std::llround(start_s * clip.sample_rate)));
  const auto len = static_cast<std::size_t>(std::llround(seconds * clip.sample_rate));
  const auto end = std::min(clip.size(), begin + len);
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                     clip.samples.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

inline PreparedAudio time_span(const PreparedAudio& p, double start_s, double seconds) {
  return {time_span(p.mixture, start_s, seconds),
          {time_span(p.references[0], start_s, seconds), time_span(p.references[1], start_s, seconds)}};
}

inline PreparedAudio training_span(const PreparedAudio& p, const RunConfig& c) {
  return time_span(p, c.train_start_s, c.train_seconds);
}

inline PreparedAudio test_span(const PreparedAudio& p, const RunConfig& c) {
  return time_span(p, c.train_start_s + c.train_seconds, c.test_seconds);
}

/// Samples needed for one window of geom.width STFT frames.
inline std::size_t min_samples(const RunConfig& c) {
  return static_cast<std::size_t>(c.window.width - 1) * static_cast<std::size_t>(c.stft.hop) +
         static_cast<std::size_t>(c.stft.window_size);
}

struct TrainingSet {
  std::vector<TrainingPair> pairs;
  NormalizationScales scales;
};

/// One magnitude scale per role (mixture, source 1, source 2), each fitted on
/// its own training spectrogram.
inline TrainingSet build_training_set(const PreparedAudio& train, const RunConfig& c) {
  if (train.mixture.size() < min_samples(c)) {
    throw Error(ErrorKind::InvalidArgument,
                "training audio has " + std::to_string(train.mixture.size()) + " samples; at least " +
                    std::to_string(min_samples(c)) + " are needed for one training window");
  }
  const auto mix = split_normalize(stft_forward(train.mixture, c.stft));
  const auto s1 = split_normalize(stft_forward(train.references[0], c.stft));
  const auto s2 = split_normalize(stft_forward(train.references[1], c.stft));
  TrainingSet set;
  set.pairs = extract_windows(mix, s1, s2, c.window, static_cast<std::size_t>(c.window.train_hop));
  set.scales = {mix.mag_scale, {s1.mag_scale, s2.mag_scale}};
  return set;
}

inline TrainedSeparator make_separator(const RunConfig& c, const NormalizationScales& scales) {
  c.validate();
  return {Mlp::init(c.mlp_geometry, c.train.seed), c.sample_rate, c.stft, c.window, scales};
}

inline ModelMetadata separator_metadata(const TrainedSeparator& s) {
  return {{"sample_rate", s.sample_rate},
          {"stft.window_size", s.stft.window_size},
          {"stft.hop", s.stft.hop},
          {"window.width", s.geometry.width},
          {"window.train_hop", s.geometry.train_hop},
          {"scale.mixture", s.scales.mixture},
          {"scale.source1", s.scales.sources[0]},
          {"scale.source2", s.scales.sources[1]}};
}

inline void save_separator(const TrainedSeparator& s, const std::filesystem::path& path) {
  save_model(path, s.model, separator_metadata(s));
}

inline TrainedSeparator load_separator(const std::filesystem::path& path) {
  auto loaded = load_model(path);
  auto need = [&](const char* key) {
    auto it = loaded.metadata.find(key);
    if (it == loaded.metadata.end()) {
      throw Error(ErrorKind::UnsupportedFormat, path.string() + ": model metadata lacks '" + key + "'");
    }
    return it->second;
  };
  TrainedSeparator s;
  s.sample_rate = static_cast<int>(need("sample_rate"));
  s.stft.window_size = static_cast<int>(need("stft.window_size"));
  s.stft.hop = static_cast<int>(need("stft.hop"));
  s.geometry.width = static_cast<int>(need("window.width"));
  s.geometry.train_hop = static_cast<int>(need("window.train_hop"));
  s.scales.mixture = need("scale.mixture");
  s.scales.sources = {need("scale.source1"), need("scale.source2")};
  s.stft.validate();
  s.geometry.validate();
  const std::size_t in = input_size(static_cast<std::size_t>(s.stft.bins()), static_cast<std::size_t>(s.geometry.width));
  if (loaded.model.input_size() != in || loaded.model.output_size() != 2 * in) {
    throw Error(ErrorKind::ShapeMismatch,
                path.string() + ": network is " + std::to_string(loaded.model.input_size()) + "->" +
                    std::to_string(loaded.model.output_size()) + " but its STFT/window settings need " +
                    std::to_string(in) + "->" + std::to_string(2 * in));
  }
  s.model = std::move(loaded.model);
  return s;
}

/// Trains a fresh separator on the configured training span.
inline TrainedSeparator train_separator(const PreparedAudio& train, const RunConfig& c,
                                        const EpochCallback& on_epoch = {},
                                        std::vector<double>* loss_trace = nullptr,
                                        std::size_t* pair_count = nullptr) {
  c.validate();
  auto set = build_training_set(train, c);
  if (pair_count) *pair_count = set.pairs.size();
  auto sep = make_separator(c, set.scales);
  auto result = train_sgd(sep.model, set.pairs, c.train, on_epoch);
  if (loss_trace) *loss_trace = std::move(result.loss_trace);
  return sep;
}

struct CurvePoint {
  int epoch = 0;
  double loss = 0.0;
  SeparationMetrics metrics;
};

/// Training with held-out evaluation: after each epoch for which
/// `should_eval(epoch)` holds, separates the test mixture and records
/// voice-averaged metrics.
inline std::vector<CurvePoint> run_curve(const PreparedAudio& train, const PreparedAudio& test,
                                         const RunConfig& c, const std::function<bool(int)>& should_eval,
                                         const std::function<void(const CurvePoint&)>& on_point = {}) {
  c.validate();
  if (test.mixture.size() < min_samples(c)) {
    throw Error(ErrorKind::InvalidArgument, "held-out test span is too short for one window");
  }
  auto set = build_training_set(train, c);
  auto sep = make_separator(c, set.scales);
  std::vector<CurvePoint> points;
  auto hook = [&](const EpochReport& report, const Mlp& model) {
    if (!should_eval(report.epoch)) return;
    TrainedSeparator snapshot{model, sep.sample_rate, sep.stft, sep.geometry, sep.scales};
    const auto out = separate(snapshot, test.mixture, c.gain_adaptation);
    CurvePoint p{report.epoch, report.mean_loss, evaluate(out.sources, test.references)};
    points.push_back(p);
    if (on_point) on_point(p);
  };
  train_sgd(sep.model, set.pairs, c.train, hook);
  return points;
}

}  // namespace dtsep
