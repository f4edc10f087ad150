// SPDX-License-Identifier: Apache-2.0
//
// Synthetic tone-alphabet audio: a deterministic renderer and its exact
// inverse (the oracle transcriber).
#pragma once

#include <array>
#include <complex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mslb::codec {

inline constexpr int kSampleRate = 8000;
inline constexpr int kFrameLength = 64;
inline constexpr int kFramesPerSymbol = 4;
inline constexpr int kSamplesPerSymbol = kFrameLength * kFramesPerSymbol;
inline constexpr int kNumBins = kFrameLength / 2 + 1;  // 0..32
inline constexpr double kToneAmplitude = 0.5;
inline constexpr int kFirstToneBin = 2;

struct Waveform {
  std::vector<float> samples;
  int rate = kSampleRate;

  std::size_t frames() const { return samples.size() / kFrameLength; }
  std::span<const float> frame(std::size_t i) const {
    return std::span<const float>(samples).subspan(i * kFrameLength, kFrameLength);
  }
  bool operator==(const Waveform&) const = default;
};

/// Alphabet position of a renderable character; AlphabetError otherwise.
int symbol_index(char c);
/// Tone frequency of alphabet position i: (i + 2) * 125 Hz, i.e. DFT bin i + 2.
double symbol_frequency(int index);

/// 256 samples per character: a 0.5-amplitude sine at the character's
/// frequency, phase reset at every character.
Waveform render(std::string_view text);

/// Per 256-sample block: the strongest tone bin (2..17) of each 64-sample
/// frame, majority vote over the block's 4 frames (lowest bin on ties). A
/// block whose frames are all silent decodes as ' '.
std::string oracle_transcribe(const Waveform& wav);

/// |DFT| of one 64-sample frame, bins 0..32.
std::array<double, kNumBins> magnitude_spectrum(std::span<const float> frame);
/// log(1e-6 + |DFT|), bins 0..32: the semantic tokenizer's frame feature.
std::array<double, kNumBins> log_spectrum(std::span<const float> frame);

/// Throws FramingError unless the sample count is a positive multiple of `multiple`.
void check_framing(const Waveform& wav, int multiple);

}  // namespace mslb::codec
