#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dtsep/stft.hpp"
#include "support/oracles.hpp"

using namespace dtsep;

namespace {

AudioClip random_clip(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  AudioClip c{std::vector<double>(n), 4000};
  for (auto& v : c.samples) v = u(rng);
  return c;
}

}  // namespace

TEST(Hann, EndpointsPeakAndSum) {
  const auto w = hann(128);
  EXPECT_EQ(w[0], 0.0);
  EXPECT_DOUBLE_EQ(w[64], 1.0);
  EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 64.0, 1e-12);
  for (int n : {2, 10, 64, 130}) {
    const auto v = hann(n);
    EXPECT_NEAR(std::accumulate(v.begin(), v.end(), 0.0), n / 2.0, 1e-12) << n;
  }
  EXPECT_THROW(hann(1), Error);
}

TEST(StftConfig, Validation) {
  EXPECT_NO_THROW((StftConfig{128, 1}.validate()));
  EXPECT_THROW((StftConfig{127, 1}.validate()), Error);
  EXPECT_THROW((StftConfig{128, 0}.validate()), Error);
  EXPECT_THROW((StftConfig{128, 129}.validate()), Error);
  EXPECT_EQ(StftConfig{}.bins(), 65);
}

TEST(StftForward, FrameCounts) {
  EXPECT_EQ(frame_count(128, StftConfig{}), 1u);
  EXPECT_EQ(frame_count(480000, StftConfig{}), 479873u);
  EXPECT_EQ(frame_count(40000, StftConfig{}), 39873u);
  EXPECT_EQ(frame_count(127, StftConfig{}), 0u);
  EXPECT_EQ(frame_count(1000, StftConfig{128, 4}), 219u);

  const auto spec = stft_forward(random_clip(128, 1), StftConfig{});
  EXPECT_EQ(spec.frames(), 1u);
  EXPECT_EQ(spec.bins(), 65u);
  EXPECT_THROW(stft_forward(random_clip(127, 1), StftConfig{}), Error);
}

TEST(StftForward, ZeroClipGivesZeroSpectrogram) {
  const auto spec = stft_forward(AudioClip{std::vector<double>(300, 0.0), 4000}, StftConfig{});
  for (const auto& z : spec.data.data()) EXPECT_EQ(std::abs(z), 0.0);
}

TEST(StftForward, MatchesDirectDft) {
  const StftConfig cfg{16, 3};
  const auto clip = random_clip(70, 5);
  const auto spec = stft_forward(clip, cfg);
  const auto w = hann(16);
  for (std::size_t t = 0; t < spec.frames(); ++t) {
    std::vector<double> frame(16);
    for (int i = 0; i < 16; ++i) frame[i] = clip.samples[t * 3 + i] * w[i];
    const auto ref = fixtures::direct_dft(frame);
    for (int k = 0; k < cfg.bins(); ++k) EXPECT_NEAR(std::abs(spec.data(k, t) - ref[k]), 0.0, 1e-12);
  }
}

TEST(StftForward, Linearity) {
  const auto clip = random_clip(600, 9);
  AudioClip scaled = clip;
  const double c = 0.37;
  for (auto& v : scaled.samples) v *= c;
  const auto a = stft_forward(clip, StftConfig{});
  const auto b = stft_forward(scaled, StftConfig{});
  for (std::size_t i = 0; i < a.data.size(); ++i)
    EXPECT_NEAR(std::abs(b.data.data()[i] - c * a.data.data()[i]), 0.0, 1e-13);
}

TEST(Istft, RoundTripInterior) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto clip = random_clip(1000, seed);
    IstftDiagnostics diag;
    const auto back = istft_overlap_add(stft_forward(clip, StftConfig{}), &diag);
    ASSERT_EQ(back.size(), 1000u);
    const double peak = *std::max_element(clip.samples.begin(), clip.samples.end(),
                                          [](double x, double y) { return std::abs(x) < std::abs(y); });
    for (std::size_t i = 127; i + 127 < clip.size(); ++i)
      EXPECT_LE(std::abs(back.samples[i] - clip.samples[i]), 1e-6 * std::abs(peak));
    EXPECT_LE(diag.max_imag_residue, 1e-12);
    EXPECT_EQ(diag.uncovered_samples, 1u);  // sample 0 sits on w[0] = 0
  }
}

TEST(Istft, RoundTripLargerHop) {
  const auto clip = random_clip(2000, 4);
  const StftConfig cfg{128, 4};
  const auto back = istft_overlap_add(stft_forward(clip, cfg));
  for (std::size_t i = 127; i + 127 < back.size(); ++i) EXPECT_NEAR(back.samples[i], clip.samples[i], 1e-9);
}

TEST(Istft, ZeroSpectrogramGivesZeroClip) {
  ComplexSpectrogram spec{Grid<Complex>(65, 10), StftConfig{}, 4000};
  const auto out = istft_overlap_add(spec);
  EXPECT_EQ(out.size(), 137u);
  for (double v : out.samples) EXPECT_EQ(v, 0.0);
}

TEST(Istft, SingleDcFrameMatchesDirectInverse) {
  // Without a synthesis window the frame's inverse DFT is c/N everywhere, and
  // normalising by the analysis-window sum divides by w[n].
  const int n = 128;
  const double c = 3.0;
  ComplexSpectrogram spec{Grid<Complex>(65, 1), StftConfig{}, 4000};
  spec.data(0, 0) = c;
  const auto out = istft_overlap_add(spec);

  std::vector<Complex> full(n, 0.0);
  full[0] = c;
  const auto frame = fixtures::direct_idft(full);
  const auto w = hann(n);
  EXPECT_EQ(out.samples[0], 0.0);
  for (int i = 1; i < n; ++i) {
    EXPECT_NEAR(frame[i].real(), c / n, 1e-15);
    EXPECT_NEAR(out.samples[i], frame[i].real() / w[i], 1e-9 * std::abs(frame[i].real() / w[i]));
  }
}

TEST(Istft, RejectsMalformedSpectrogram) {
  ComplexSpectrogram spec{Grid<Complex>(64, 3), StftConfig{}, 4000};
  EXPECT_THROW(istft_overlap_add(spec), Error);
}

TEST(Istft, RealOutputFromArbitrarySpectrogram) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g;
  ComplexSpectrogram spec{Grid<Complex>(65, 50), StftConfig{128, 2}, 4000};
  for (auto& z : spec.data.data()) z = Complex(g(rng), g(rng));
  IstftDiagnostics diag;
  istft_overlap_add(spec, &diag);
  EXPECT_LE(diag.max_imag_residue, 1e-12);
}

TEST(Istft, RoundTripPropertyRandomLengths) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> len(3 * 128, 1500);
  for (int trial = 0; trial < 10; ++trial) {
    const auto clip = random_clip(len(rng), 100 + trial);
    const auto back = istft_overlap_add(stft_forward(clip, StftConfig{}));
    const std::size_t covered = back.size();
    for (std::size_t i = 127; i + 127 < covered; ++i) ASSERT_NEAR(back.samples[i], clip.samples[i], 1e-6);
  }
}
