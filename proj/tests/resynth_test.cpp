#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "dtsep/resynth.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace dtsep;
constexpr double kPi = std::numbers::pi;

namespace {

double angle_diff(double a, double b) { return std::remainder(a - b, 2 * kPi); }

MagPhaseGrid flat_grid(std::size_t bins, std::size_t frames) {
  return {Grid<double>(bins, frames, 0.5), Grid<double>(bins, frames, 0.25), 1.0};
}

PredictionStack random_stack(std::mt19937_64& rng, std::vector<std::vector<double>>* mags = nullptr,
                             std::vector<std::vector<double>>* thetas = nullptr) {
  std::uniform_int_distribution<std::size_t> frames(1, 8), bins(1, 3), width(1, 5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PredictionStack s(frames(rng), bins(rng), width(rng));
  if (mags) mags->assign(s.frames() * s.bins(), {});
  if (thetas) thetas->assign(s.frames() * s.bins(), {});
  for (std::size_t t = 0; t < s.frames(); ++t)
    for (std::size_t f = 0; f < s.bins(); ++f)
      for (std::size_t w = 0; w < s.width(); ++w) {
        if (w > 0 && u(rng) < 0.3) continue;  // slot 0 always present so count >= 1
        const double m = u(rng), th = u(rng) * 2 * kPi;
        s.set(t, f, w, m, th);
        if (mags) (*mags)[t * s.bins() + f].push_back(m);
        if (thetas) (*thetas)[t * s.bins() + f].push_back(th);
      }
  return s;
}

PredictionStack cell_stack(const std::vector<double>& mags, const std::vector<double>& thetas) {
  PredictionStack s(1, 1, std::max(mags.size(), thetas.size()));
  for (std::size_t w = 0; w < thetas.size(); ++w) s.set(0, 0, w, w < mags.size() ? mags[w] : 0.0, thetas[w]);
  return s;
}

}  // namespace

TEST(SlidingInfer, CoverageCounts) {
  const std::size_t bins = 3, width = 4;
  const auto model = Mlp::init(std::vector<std::size_t>{2 * bins * width, 5, 4 * bins * width}, 1);
  const WindowGeometry geom{static_cast<int>(width), 1};

  auto one = sliding_infer(model, flat_grid(bins, width), geom);
  for (std::size_t t = 0; t < width; ++t) EXPECT_EQ(one[0].count(t, 0), 1);

  auto two = sliding_infer(model, flat_grid(bins, width + 1), geom);
  EXPECT_EQ(two[0].count(0, 0), 1);
  EXPECT_EQ(two[0].count(width, 0), 1);
  for (std::size_t t = 1; t < width; ++t) EXPECT_EQ(two[1].count(t, 2), 2);

  auto many = sliding_infer(model, flat_grid(bins, 30), geom);
  for (std::size_t t = width - 1; t + width <= 30; ++t) EXPECT_EQ(many[0].count(t, 1), static_cast<int>(width));
  EXPECT_EQ(many[0].frames(), 30u);
}

TEST(SlidingInfer, WindowIndexIsFrameMinusStart) {
  const std::size_t bins = 2, width = 3;
  auto model = Mlp::init(std::vector<std::size_t>{2 * bins * width, 4, 4 * bins * width}, 2);
  MagPhaseGrid g{Grid<double>(bins, 6), Grid<double>(bins, 6), 1.0};
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : g.mag.data()) v = u(rng);
  for (auto& v : g.phase.data()) v = u(rng);
  const auto stacks = sliding_infer(model, g, WindowGeometry{3, 1});
  for (std::size_t s = 0; s + width <= 6; ++s) {
    Eigen::VectorXd in;
    pack_input_at(g, s, width, in);
    const auto blocks = unpack_output(model.forward(in), bins, width);
    for (std::size_t w = 0; w < width; ++w)
      for (std::size_t f = 0; f < bins; ++f) {
        EXPECT_EQ(stacks[1].mag(s + w, f, w), blocks[2](f, w));
        EXPECT_NEAR(stacks[1].theta(s + w, f, w), blocks[3](f, w) * 2 * kPi, 1e-15);
      }
  }
}

TEST(SlidingInfer, GeometryMismatch) {
  const auto model = Mlp::init(std::vector<std::size_t>{10, 5, 20}, 1);
  EXPECT_THROW(sliding_infer(model, flat_grid(3, 10), WindowGeometry{4, 1}), Error);
  const auto ok = Mlp::init(std::vector<std::size_t>{24, 5, 48}, 1);
  EXPECT_THROW(sliding_infer(ok, flat_grid(3, 3), WindowGeometry{4, 1}), Error);
}

TEST(GainAdapt, Examples) {
  RawOutputs raw(2, 2);
  raw << 0.7, 0.7,   // constant unit
      0.2, 0.4;
  const auto mean = gain_adapt(raw);
  EXPECT_NEAR(mean(0), 0.7, 1e-15);
  EXPECT_EQ(raw(0, 0), 0.0);
  EXPECT_EQ(raw(0, 1), 0.0);
  EXPECT_NEAR(raw(1, 0), -0.1, 1e-15);
  EXPECT_NEAR(raw(1, 1), 0.1, 1e-15);
  RawOutputs none(3, 0);
  EXPECT_THROW(gain_adapt(none), Error);
}

TEST(GainAdapt, MagnitudeFloorAfterAdaptation) {
  // bins = width = 1: units are [mag1, phase1, mag2, phase2]
  RawOutputs raw(4, 2);
  raw << 0.2, 0.4, 0.5, 0.5, 0.3, 0.3, 0.9, 0.1;
  gain_adapt(raw);
  const auto stacks = build_stacks(raw, 1, 1);
  EXPECT_EQ(stacks[0].mag(0, 0, 0), 0.0);
  EXPECT_NEAR(stacks[0].mag(1, 0, 0), 0.1, 1e-15);
  // phase -0.4 cycles wraps to 0.6 cycles
  EXPECT_NEAR(stacks[1].theta(1, 0, 0), 0.6 * 2 * kPi, 1e-12);
}

TEST(GainAdapt, ZeroMeanPerUnitProperty) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    RawOutputs raw(16, 1 + trial * 7);
    for (Eigen::Index i = 0; i < raw.size(); ++i) raw.data()[i] = u(rng);
    gain_adapt(raw);
    for (Eigen::Index r = 0; r < raw.rows(); ++r) EXPECT_NEAR(raw.row(r).mean(), 0.0, 1e-9);
  }
}

TEST(AggregateMagnitude, Examples) {
  EXPECT_NEAR(aggregate_magnitude(cell_stack({0.2, 0.4}, {0, 0}))(0, 0), 0.3, 1e-15);
  EXPECT_EQ(aggregate_magnitude(cell_stack({0.7}, {0}))(0, 0), 0.7);
  EXPECT_NEAR(aggregate_magnitude(cell_stack(std::vector<double>(20, 0.35), std::vector<double>(20, 1.0)))(0, 0),
              0.35, 1e-15);
}

TEST(CircularMean, Examples) {
  auto quarter = circular_mean_phase(cell_stack({1, 1}, {0.0, kPi / 2}));
  EXPECT_NEAR(quarter.theta_bar(0, 0), kPi / 4, 1e-15);
  EXPECT_NEAR(quarter.resultant_len(0, 0), std::sqrt(2.0) / 2, 1e-15);
  EXPECT_EQ(quarter.degenerate, 0u);

  for (double th0 : {0.3, 2.0, 4.5, 6.2}) {
    auto same = circular_mean_phase(cell_stack({1, 1, 1}, {th0, th0, th0}));
    EXPECT_NEAR(angle_diff(same.theta_bar(0, 0), th0), 0.0, 1e-12);
    EXPECT_GT(same.theta_bar(0, 0), -kPi);
    EXPECT_LE(same.theta_bar(0, 0), kPi);
    EXPECT_NEAR(same.resultant_len(0, 0), 1.0, 1e-12);
  }

  auto antipodal = circular_mean_phase(cell_stack({1, 1}, {0.0, kPi}));
  EXPECT_EQ(antipodal.theta_bar(0, 0), 0.0);
  EXPECT_EQ(antipodal.degenerate, 1u);
  EXPECT_LT(antipodal.resultant_len(0, 0), 1e-9);
}

TEST(CircularMean, MatchesScalarOracle) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::vector<double>> mags, thetas;
    const auto s = random_stack(rng, &mags, &thetas);
    const auto m = aggregate_magnitude(s);
    const auto c = circular_mean_phase(s);
    for (std::size_t t = 0; t < s.frames(); ++t)
      for (std::size_t f = 0; f < s.bins(); ++f) {
        const auto ref = fixtures::scalar_aggregate(mags[t * s.bins() + f], thetas[t * s.bins() + f]);
        ASSERT_NEAR(m(f, t), ref.mean_mag, 1e-12);
        ASSERT_NEAR(c.theta_bar(f, t), ref.theta, 1e-12);
        ASSERT_NEAR(c.resultant_len(f, t), ref.resultant_len, 1e-12);
      }
  }
}

TEST(CircularMean, RotationEquivariance) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 2 * kPi);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> th(1 + trial % 5);
    for (auto& v : th) v = u(rng);
    const double delta = u(rng) * 3 - 2 * kPi;  // includes negative offsets
    auto rotated = th;
    for (auto& v : rotated) v += delta;
    const auto a = circular_mean_phase(cell_stack(std::vector<double>(th.size(), 1.0), th));
    const auto b = circular_mean_phase(cell_stack(std::vector<double>(th.size(), 1.0), rotated));
    if (a.resultant_len(0, 0) <= 1e-6) continue;
    EXPECT_NEAR(angle_diff(b.theta_bar(0, 0), a.theta_bar(0, 0) + delta), 0.0, 1e-9);
  }
}

TEST(CircularMean, PermutationInvariance) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> m(5), th(5);
    for (auto& v : m) v = u(rng);
    for (auto& v : th) v = 2 * kPi * u(rng);
    std::vector<std::size_t> idx{0, 1, 2, 3, 4};
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<double> pm, pth;
    for (auto i : idx) {
      pm.push_back(m[i]);
      pth.push_back(th[i]);
    }
    const auto a = cell_stack(m, th), b = cell_stack(pm, pth);
    EXPECT_NEAR(aggregate_magnitude(a)(0, 0), aggregate_magnitude(b)(0, 0), 1e-12);
    EXPECT_NEAR(angle_diff(circular_mean_phase(a).theta_bar(0, 0), circular_mean_phase(b).theta_bar(0, 0)), 0.0,
                1e-12);
  }
}

TEST(CircularMean, ResultantLengthRange) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = random_stack(rng);
    const auto c = circular_mean_phase(s);
    for (double r : c.resultant_len.data()) {
      ASSERT_GE(r, 0.0);
      ASSERT_LE(r, 1.0);
    }
  }
  const auto spread = circular_mean_phase(cell_stack({1, 1}, {1.0, 1.0 + 1e-3}));
  EXPECT_LT(spread.resultant_len(0, 0), 1.0 - 1e-9);
}

TEST(Recombine, Examples) {
  const StftConfig cfg{2, 1};
  auto cell = [&](double m, double th, double scale) {
    return recombine(Grid<double>(1, 1, m), Grid<double>(1, 1, th), scale, cfg, 4000).data(0, 0);
  };
  EXPECT_NEAR(std::abs(cell(1.0, kPi / 2, 1.0) - Complex(0, 1)), 0.0, 1e-12);
  EXPECT_EQ(cell(0.0, 1.234, 5.0), Complex(0, 0));
  EXPECT_NEAR(std::abs(cell(0.5, kPi, 4.0) - Complex(-2, 0)), 0.0, 1e-12);
  EXPECT_THROW(recombine(Grid<double>(1, 2), Grid<double>(1, 1), 1.0, cfg, 4000), Error);
}

namespace {

TrainedSeparator small_separator(std::uint64_t seed) {
  TrainedSeparator sep;
  sep.stft = StftConfig{16, 2};
  sep.geometry = WindowGeometry{4, 2};
  const std::size_t in = input_size(9, 4);
  sep.model = Mlp::init(std::vector<std::size_t>{in, 128, 2 * in}, seed);
  return sep;
}

}  // namespace

TEST(Separate, ZeroMixtureGivesSilenceWhenAdapted) {
  const auto sep = small_separator(3);
  const AudioClip silent{std::vector<double>(2000, 0.0), 4000};
  // every window sees the same input, so adapted outputs are all zero
  const auto out = separate(sep, silent, true);
  ASSERT_EQ(out.sources[0].size(), 2000u);
  for (const auto& s : out.sources) EXPECT_LT(rms(s.samples), 1e-12);
}

TEST(Separate, AdaptationToggleAndDeterminism) {
  const auto sep = small_separator(4);
  const auto clip = fixtures::synth_speaker(fixtures::kLowVoice, 1.0, 4000, 1);
  const auto on = separate(sep, clip, true), again = separate(sep, clip, true), off = separate(sep, clip, false);
  EXPECT_TRUE(on.gain_adapted);
  EXPECT_FALSE(off.gain_adapted);
  EXPECT_EQ(on.sources[0].samples, again.sources[0].samples);
  EXPECT_NE(on.sources[0].samples, off.sources[0].samples);
  for (const auto* r : {&on, &off})
    for (const auto& s : r->sources)
      for (double v : s.samples) ASSERT_TRUE(std::isfinite(v));
}

TEST(Separate, PreconditionErrors) {
  const auto sep = small_separator(5);
  EXPECT_THROW(separate(sep, AudioClip{std::vector<double>(20, 0.1), 4000}, true), Error);
  EXPECT_THROW(separate(sep, AudioClip{std::vector<double>(2000, 0.1), 8000}, true), Error);
}

TEST(Separate, IdentityModelSmokeExperiment) {
  // Train on a "mixture" that is source 1 alone (source 2 silent) and check
  // that the source-1 output follows the input.
  auto sep = small_separator(6);
  const auto clip = fixtures::synth_speaker(fixtures::kLowVoice, 8.0, 4000, 2);
  const AudioClip silence{std::vector<double>(clip.size(), 0.0), 4000};
  const auto mix = split_normalize(stft_forward(clip, sep.stft));
  const auto s2 = split_normalize(stft_forward(silence, sep.stft));
  const auto pairs = extract_windows(mix, mix, s2, sep.geometry, 2);
  train_sgd(sep.model, pairs, TrainConfig{0.1, 60, 1, true});
  sep.scales = {mix.mag_scale, {mix.mag_scale, s2.mag_scale}};

  const auto test = fixtures::synth_speaker(fixtures::kLowVoice, 2.0, 4000, 3);
  const auto out = separate(sep, test, false);
  const auto& y = out.sources[0].samples;
  double xy = 0, xx = 0, yy = 0;
  for (std::size_t i = 16; i + 16 < test.size(); ++i) {
    xy += test.samples[i] * y[i];
    xx += test.samples[i] * test.samples[i];
    yy += y[i] * y[i];
  }
  EXPECT_GT(xy / std::sqrt(xx * yy), 0.9);
}

TEST(Separate, CsvDump) {
  const auto sep = small_separator(7);
  const auto out = separate(sep, fixtures::synth_speaker(fixtures::kHighVoice, 0.5, 4000, 4), true);
  const auto path = std::filesystem::temp_directory_path() / "dtsep_spectra.csv";
  write_spectra_csv(out.spectra[0], path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "frame,bin,mag_bar,theta_bar,resultant_len");
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, out.spectra[0].mag_bar.size());
}
