#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dtsep/error.hpp"

namespace dtsep {

/// Mono time-domain signal. Samples are nominally in [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 0;

  std::size_t size() const noexcept { return samples.size(); }
  double duration() const noexcept {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate
                           : 0.0;
  }
};

inline double rms(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

namespace detail {

inline std::uint16_t load_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t load_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void store_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void store_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void store_tag(std::vector<std::uint8_t>& out, const char (&tag)[5]) {
  out.insert(out.end(), tag, tag + 4);
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

}  // namespace detail

/// Reads a RIFF/WAVE file holding 16-bit PCM or 32-bit float samples.
/// Multichannel input is averaged to mono; 16-bit samples are scaled by 1/32768.
inline AudioClip read_wav(const std::filesystem::path& path) {
  using namespace detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorKind::FileNotFound, "cannot open WAV file: " + path.string());
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  auto bad = [&](const std::string& why) {
    return Error(ErrorKind::UnsupportedFormat, path.string() + ": " + why);
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw bad("not a RIFF/WAVE file");
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const std::uint8_t* data = nullptr;
  std::size_t data_size = 0;
  bool have_data = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    std::uint32_t chunk_size = load_u32(chunk + 4);
    std::size_t body = pos + 8;
    std::size_t available = std::min<std::size_t>(chunk_size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (available < 16) throw bad("truncated fmt chunk");
      format = load_u16(chunk + 8);
      channels = load_u16(chunk + 10);
      rate = load_u32(chunk + 12);
      bits = load_u16(chunk + 22);
      if (format == kFormatExtensible) {
        if (available < 26) throw bad("truncated WAVE_FORMAT_EXTENSIBLE chunk");
        // First two bytes of the sub-format GUID carry the format tag.
        format = load_u16(chunk + 8 + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = available;
      have_data = true;
    }
    pos = body + chunk_size + (chunk_size & 1u);
  }

  if (!have_fmt) throw bad("missing fmt chunk");
  if (!have_data) throw bad("missing data chunk");
  if (channels == 0) throw bad("zero channels");
  if (rate == 0) throw bad("zero sample rate");
  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool float32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !float32) {
    throw bad("unsupported encoding (format " + std::to_string(format) + ", " +
              std::to_string(bits) + " bits); need 16-bit PCM or 32-bit float");
  }

  const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
  const std::size_t frames = data_size / frame_bytes;
  if (frames == 0) {
    throw Error(ErrorKind::EmptyAudio, path.string() + ": WAV contains no samples");
  }

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const std::uint8_t* p = data + i * frame_bytes + c * (bits / 8);
      if (pcm16) {
        acc += static_cast<std::int16_t>(load_u16(p)) / 32768.0;
      } else {
        acc += static_cast<double>(std::bit_cast<float>(load_u32(p)));
      }
    }
    clip.samples[i] = acc / channels;
  }
  return clip;
}

struct WavWriteReport {
  std::size_t clipped = 0;  // samples outside [-1, 1] that were saturated
};

/// Writes 16-bit PCM mono. Round-trip error through read_wav is at most 1/32768.
inline WavWriteReport write_wav(const AudioClip& clip, const std::filesystem::path& path) {
  using namespace detail;
  if (clip.samples.empty()) {
    throw Error(ErrorKind::EmptyAudio, "refusing to write zero-length clip to " + path.string());
  }
  if (clip.sample_rate <= 0) {
    throw Error(ErrorKind::InvalidArgument, "clip has non-positive sample rate");
  }
  WavWriteReport report;
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  std::vector<std::uint8_t> out;
  out.reserve(44 + 2 * static_cast<std::size_t>(n));
  store_tag(out, "RIFF");
  store_u32(out, 36 + 2 * n);
  store_tag(out, "WAVE");
  store_tag(out, "fmt ");
  store_u32(out, 16);
  store_u16(out, kFormatPcm);
  store_u16(out, 1);
  store_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  store_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * 2);
  store_u16(out, 2);
  store_u16(out, 16);
  store_tag(out, "data");
  store_u32(out, 2 * n);
  for (double x : clip.samples) {
    if (!std::isfinite(x)) {
      throw Error(ErrorKind::NumericalFailure, "non-finite sample while writing " + path.string());
    }
    if (x > 1.0 || x < -1.0) ++report.clipped;
    long q = std::lround(x * 32768.0);
    q = std::clamp(q, -32768L, 32767L);
    store_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error(ErrorKind::Io, "cannot open for writing: " + path.string());
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) throw Error(ErrorKind::Io, "write failed: " + path.string());
  return report;
}

/// Number of taps of the anti-alias filter for integer decimation factors.
constexpr int kDecimationTaps = 127;

/// Anti-alias cutoff as a fraction of the target sample rate.
constexpr double kDecimationCutoff = 0.45;

/// Hann-windowed sinc low-pass. `cutoff` is in cycles/sample of the rate the
/// filter runs at; taps are normalised to the given DC gain.
inline std::vector<double> windowed_sinc(int taps, double cutoff, double dc_gain = 1.0) {
  std::vector<double> h(static_cast<std::size_t>(taps));
  const double centre = 0.5 * (taps - 1);
  for (int n = 0; n < taps; ++n) {
    const double x = n - centre;
    const double arg = 2.0 * cutoff * x;
    const double sinc = x == 0.0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
    const double w = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * n / (taps - 1)));
    h[static_cast<std::size_t>(n)] = 2.0 * cutoff * sinc * w;
  }
  const double sum = std::accumulate(h.begin(), h.end(), 0.0);
  for (double& v : h) v *= dc_gain / sum;
  return h;
}

/// Low-pass then resample to target_rate. Integer factors use a 127-tap
/// zero-phase FIR; other rational ratios go through a polyphase up/down path.
inline AudioClip decimate(const AudioClip& clip, int target_rate) {
  if (target_rate <= 0) {
    throw Error(ErrorKind::InvalidArgument, "target rate must be positive");
  }
  if (target_rate > clip.sample_rate) {
    throw Error(ErrorKind::InvalidArgument,
                "target rate " + std::to_string(target_rate) + " Hz exceeds input rate " +
                    std::to_string(clip.sample_rate) + " Hz");
  }
  if (target_rate == clip.sample_rate) return clip;
  if (clip.samples.empty()) throw Error(ErrorKind::EmptyAudio, "cannot decimate an empty clip");

  const int g = std::gcd(clip.sample_rate, target_rate);
  const long up = target_rate / g;
  const long down = clip.sample_rate / g;
  const long taps = up == 1 ? kDecimationTaps : (kDecimationTaps - 1) * up + 1;
  const double cutoff = kDecimationCutoff * target_rate / (static_cast<double>(clip.sample_rate) * up);
  const auto h = windowed_sinc(static_cast<int>(taps), cutoff, static_cast<double>(up));
  const long centre = (taps - 1) / 2;

  const auto in_len = static_cast<long>(clip.samples.size());
  const long up_len = in_len * up;
  const long out_len = (up_len + down - 1) / down;

  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<std::size_t>(out_len));
  for (long n = 0; n < out_len; ++n) {
    // Position on the upsampled grid; only every up-th sample is non-zero.
    const long j = n * down + centre;
    long k = j % up;  // first tap aligned with a non-zero upsampled sample
    double acc = 0.0;
    for (; k < taps; k += up) {
      const long src = (j - k) / up;
      if (src < 0) break;
      if (src < in_len) acc += h[static_cast<std::size_t>(k)] * clip.samples[static_cast<std::size_t>(src)];
    }
    out.samples[static_cast<std::size_t>(n)] = acc;
  }
  return out;
}

struct MixResult {
  AudioClip mixture;
  AudioClip a_scaled;
  AudioClip b_scaled;
};

/// Trims both clips to the shorter length, attenuates each to the smaller of
/// the two RMS values and sums them.
inline MixResult equalize_and_mix(const AudioClip& a, const AudioClip& b) {
  if (a.sample_rate != b.sample_rate) {
    throw Error(ErrorKind::RateMismatch, "cannot mix clips at " + std::to_string(a.sample_rate) +
                                             " Hz and " + std::to_string(b.sample_rate) + " Hz");
  }
  const std::size_t n = std::min(a.size(), b.size());
  if (n == 0) throw Error(ErrorKind::EmptyAudio, "cannot mix empty clips");
  std::span<const double> sa(a.samples.data(), n), sb(b.samples.data(), n);
  const double ra = rms(sa), rb = rms(sb);
  if (ra == 0.0 || rb == 0.0) {
    throw Error(ErrorKind::SilentInput, std::string("input ") + (ra == 0.0 ? "a" : "b") +
                                            " is silent (zero RMS); cannot equalize");
  }
  const double target = std::min(ra, rb);
  const double ga = target / ra, gb = target / rb;

  MixResult r;
  r.a_scaled.sample_rate = r.b_scaled.sample_rate = r.mixture.sample_rate = a.sample_rate;
  r.a_scaled.samples.resize(n);
  r.b_scaled.samples.resize(n);
  r.mixture.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    r.a_scaled.samples[i] = ga == 1.0 ? sa[i] : sa[i] * ga;
    r.b_scaled.samples[i] = gb == 1.0 ? sb[i] : sb[i] * gb;
    r.mixture.samples[i] = r.a_scaled.samples[i] + r.b_scaled.samples[i];
  }
  return r;
}

}  // namespace dtsep
