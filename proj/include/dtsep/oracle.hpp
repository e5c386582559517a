#pragma once

#include <array>
#include <cstdint>
#include <utility>

#include "dtsep/audio_io.hpp"
#include "dtsep/error.hpp"
#include "dtsep/grid.hpp"
#include "dtsep/stft.hpp"

namespace dtsep {

using BinaryMask = Grid<std::uint8_t>;

/// mask1 = 1 where |S1| >= |S2| (ties go to source 1); mask2 = 1 - mask1.
inline std::pair<BinaryMask, BinaryMask> ideal_binary_mask(const ComplexSpectrogram& s1,
                                                           const ComplexSpectrogram& s2) {
  if (!s1.data.same_shape(s2.data)) {
    throw Error(ErrorKind::ShapeMismatch, "source spectrograms differ in shape");
  }
  BinaryMask m1(s1.bins(), s1.frames()), m2(s1.bins(), s1.frames());
  auto a = s1.data.data(), b = s2.data.data();
  auto o1 = m1.data(), o2 = m2.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool first = std::abs(a[i]) >= std::abs(b[i]);
    o1[i] = first ? 1 : 0;
    o2[i] = first ? 0 : 1;
  }
  return {std::move(m1), std::move(m2)};
}

inline ComplexSpectrogram apply_mask(const ComplexSpectrogram& mixture, const BinaryMask& mask) {
  if (!mixture.data.same_shape(mask)) {
    throw Error(ErrorKind::ShapeMismatch, "mask and mixture spectrogram differ in shape");
  }
  ComplexSpectrogram out = mixture;
  auto d = out.data.data();
  auto m = mask.data();
  for (std::size_t i = 0; i < d.size(); ++i)
    if (!m[i]) d[i] = Complex(0.0, 0.0);
  return out;
}

/// Oracle separation: masks from the reference spectrograms applied to the
/// mixture spectrogram, then overlap-add. Outputs have the mixture's length.
inline std::array<AudioClip, 2> ibm_separate(const AudioClip& mixture,
                                             const std::array<AudioClip, 2>& references,
                                             const StftConfig& config) {
  for (const auto& r : references) {
    if (r.sample_rate != mixture.sample_rate) {
      throw Error(ErrorKind::RateMismatch, "references and mixture have different sample rates");
    }
    if (r.size() != mixture.size()) {
      throw Error(ErrorKind::ShapeMismatch, "references and mixture differ in length");
    }
  }
  const auto mix = stft_forward(mixture, config);
  const auto [m1, m2] = ideal_binary_mask(stft_forward(references[0], config),
                                          stft_forward(references[1], config));
  std::array<AudioClip, 2> out{istft_overlap_add(apply_mask(mix, m1)),
                               istft_overlap_add(apply_mask(mix, m2))};
  for (auto& c : out) c.samples.resize(mixture.size(), 0.0);
  return out;
}

}  // namespace dtsep
