#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dtsep/audio_io.hpp"
#include "dtsep/error.hpp"

namespace dtsep {

/// Metric values are clamped to +/- this many dB in place of infinities.
constexpr double kMetricCapDb = 120.0;

struct Decomposition {
  std::vector<double> s_target;
  std::vector<double> e_interf;
  std::vector<double> e_artif;
};

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace detail

/// Gain-only BSS-EVAL decomposition of `estimate` against two references:
/// s_target is the projection onto the target reference, e_interf the rest
/// of the projection onto span{r1, r2}, e_artif the residual.
inline Decomposition decompose(std::span<const double> estimate,
                               const std::array<std::span<const double>, 2>& refs,
                               std::size_t target_index) {
  if (target_index > 1) throw Error(ErrorKind::InvalidArgument, "target index must be 0 or 1");
  const std::size_t n = estimate.size();
  if (refs[0].size() != n || refs[1].size() != n) {
    throw Error(ErrorKind::ShapeMismatch, "estimate and references differ in length");
  }
  const double g00 = detail::dot(refs[0], refs[0]);
  const double g11 = detail::dot(refs[1], refs[1]);
  const double g01 = detail::dot(refs[0], refs[1]);
  if (g00 == 0.0 || g11 == 0.0) {
    throw Error(ErrorKind::InvalidArgument, "a reference signal is identically zero");
  }
  const double det = g00 * g11 - g01 * g01;
  if (det <= 1e-12 * g00 * g11) {
    throw Error(ErrorKind::InvalidArgument, "reference signals are collinear");
  }
  const double b0 = detail::dot(estimate, refs[0]);
  const double b1 = detail::dot(estimate, refs[1]);
  // Coefficients of the projection onto span{r1, r2} (2x2 normal equations).
  const double c0 = (g11 * b0 - g01 * b1) / det;
  const double c1 = (g00 * b1 - g01 * b0) / det;
  const auto& target = refs[target_index];
  const double ct = (target_index == 0 ? b0 : b1) / (target_index == 0 ? g00 : g11);

  Decomposition d;
  d.s_target.resize(n);
  d.e_interf.resize(n);
  d.e_artif.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double joint = c0 * refs[0][i] + c1 * refs[1][i];
    d.s_target[i] = ct * target[i];
    d.e_interf[i] = joint - d.s_target[i];
    d.e_artif[i] = estimate[i] - d.s_target[i] - d.e_interf[i];
  }
  return d;
}

struct SourceMetrics {
  double sdr = 0.0;
  double sir = 0.0;
  double sar = 0.0;
};

/// 10 log10(num / den), clamped to [-cap, +cap].
inline double ratio_db(double num, double den) {
  if (den <= 0.0) return num > 0.0 ? kMetricCapDb : -kMetricCapDb;
  if (num <= 0.0) return -kMetricCapDb;
  return std::clamp(10.0 * std::log10(num / den), -kMetricCapDb, kMetricCapDb);
}

inline SourceMetrics metrics(const Decomposition& d) {
  double target = 0.0, interf = 0.0, artif = 0.0, distortion = 0.0, projected = 0.0;
  for (std::size_t i = 0; i < d.s_target.size(); ++i) {
    target += d.s_target[i] * d.s_target[i];
    interf += d.e_interf[i] * d.e_interf[i];
    artif += d.e_artif[i] * d.e_artif[i];
    const double e = d.e_interf[i] + d.e_artif[i];
    distortion += e * e;
    const double p = d.s_target[i] + d.e_interf[i];
    projected += p * p;
  }
  if (target == 0.0) return {-kMetricCapDb, -kMetricCapDb, -kMetricCapDb};
  return {ratio_db(target, distortion), ratio_db(target, interf), ratio_db(projected, artif)};
}

struct SeparationMetrics {
  std::array<SourceMetrics, 2> per_source;
  SourceMetrics mean;
};

/// Evaluates estimate k against reference k (k = 0, 1) over the whole
/// signal. Inputs are trimmed to the shortest length.
inline SeparationMetrics evaluate(const std::array<std::span<const double>, 2>& estimates,
                                  const std::array<std::span<const double>, 2>& references) {
  std::size_t n = std::numeric_limits<std::size_t>::max();
  for (const auto& s : estimates) n = std::min(n, s.size());
  for (const auto& s : references) n = std::min(n, s.size());
  if (n == 0) throw Error(ErrorKind::EmptyAudio, "cannot evaluate empty signals");
  const std::array<std::span<const double>, 2> refs{references[0].first(n), references[1].first(n)};
  SeparationMetrics m;
  for (std::size_t k = 0; k < 2; ++k) m.per_source[k] = metrics(decompose(estimates[k].first(n), refs, k));
  m.mean.sdr = 0.5 * (m.per_source[0].sdr + m.per_source[1].sdr);
  m.mean.sir = 0.5 * (m.per_source[0].sir + m.per_source[1].sir);
  m.mean.sar = 0.5 * (m.per_source[0].sar + m.per_source[1].sar);
  return m;
}

inline SeparationMetrics evaluate(const std::array<AudioClip, 2>& estimates,
                                  const std::array<AudioClip, 2>& references) {
  for (const auto* c : {&estimates[0], &estimates[1], &references[1]}) {
    if (c->sample_rate != references[0].sample_rate) {
      throw Error(ErrorKind::RateMismatch, "estimates and references have different sample rates");
    }
  }
  return evaluate({std::span<const double>(estimates[0].samples), std::span<const double>(estimates[1].samples)},
                  {std::span<const double>(references[0].samples), std::span<const double>(references[1].samples)});
}

inline nlohmann::json to_json(const SourceMetrics& m) {
  return {{"sdr", m.sdr}, {"sir", m.sir}, {"sar", m.sar}};
}

inline nlohmann::json to_json(const SeparationMetrics& m) {
  return {{"sources", {to_json(m.per_source[0]), to_json(m.per_source[1])}}, {"mean", to_json(m.mean)}};
}

inline std::string format_table(const SeparationMetrics& m) {
  std::string out = "source      SDR(dB)   SIR(dB)   SAR(dB)\n";
  char line[96];
  auto row = [&](const char* name, const SourceMetrics& s) {
    std::snprintf(line, sizeof(line), "%-9s %9.3f %9.3f %9.3f\n", name, s.sdr, s.sir, s.sar);
    out += line;
  };
  row("source1", m.per_source[0]);
  row("source2", m.per_source[1]);
  row("mean", m.mean);
  return out;
}

}  // namespace dtsep
