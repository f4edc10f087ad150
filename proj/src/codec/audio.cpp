// SPDX-License-Identifier: Apache-2.0
#include "mslb/codec/audio.h"

#include <cmath>
#include <numbers>

#include "mslb/error.h"
#include "mslb/lm/vocab.h"

namespace mslb::codec {

namespace {

struct Twiddles {
  std::array<std::array<double, kFrameLength>, kNumBins> cos_table{};
  std::array<std::array<double, kFrameLength>, kNumBins> sin_table{};
  Twiddles() {
    for (int k = 0; k < kNumBins; ++k) {
      for (int n = 0; n < kFrameLength; ++n) {
        const double a = 2.0 * std::numbers::pi * k * n / kFrameLength;
        cos_table[k][n] = std::cos(a);
        sin_table[k][n] = std::sin(a);
      }
    }
  }
};

const Twiddles& twiddles() {
  static const Twiddles t;
  return t;
}

constexpr int kNumSymbols = static_cast<int>(lm::kSymbols.size());
constexpr double kSilenceFloor = 1e-9;

}  // namespace

int symbol_index(char c) {
  const auto p = lm::kSymbols.find(c);
  if (p == std::string_view::npos) throw AlphabetError(std::string("character '") + c + "' has no tone");
  return static_cast<int>(p);
}

double symbol_frequency(int index) { return (index + kFirstToneBin) * static_cast<double>(kSampleRate) / kFrameLength; }

Waveform render(std::string_view text) {
  Waveform w;
  w.samples.reserve(text.size() * kSamplesPerSymbol);
  for (const char c : text) {
    const double f = symbol_frequency(symbol_index(c));
    for (int n = 0; n < kSamplesPerSymbol; ++n) {
      w.samples.push_back(
          static_cast<float>(kToneAmplitude * std::sin(2.0 * std::numbers::pi * f * n / kSampleRate)));
    }
  }
  return w;
}

std::array<double, kNumBins> magnitude_spectrum(std::span<const float> frame) {
  if (frame.size() != kFrameLength) throw FramingError("spectrum needs a 64-sample frame");
  const auto& tw = twiddles();
  std::array<double, kNumBins> mag{};
  for (int k = 0; k < kNumBins; ++k) {
    double re = 0;
    double im = 0;
    for (int n = 0; n < kFrameLength; ++n) {
      re += frame[n] * tw.cos_table[k][n];
      im -= frame[n] * tw.sin_table[k][n];
    }
    mag[k] = std::hypot(re, im);
  }
  return mag;
}

std::array<double, kNumBins> log_spectrum(std::span<const float> frame) {
  auto mag = magnitude_spectrum(frame);
  for (auto& m : mag) m = std::log(1e-6 + m);
  return mag;
}

void check_framing(const Waveform& wav, int multiple) {
  if (wav.samples.empty() || wav.samples.size() % static_cast<std::size_t>(multiple) != 0) {
    throw FramingError("waveform of " + std::to_string(wav.samples.size()) + " samples is not a positive multiple of " +
                       std::to_string(multiple));
  }
}

std::string oracle_transcribe(const Waveform& wav) {
  check_framing(wav, kSamplesPerSymbol);
  std::string out;
  const std::size_t blocks = wav.samples.size() / kSamplesPerSymbol;
  for (std::size_t b = 0; b < blocks; ++b) {
    std::array<int, kNumSymbols> votes{};
    bool any_sound = false;
    for (int f = 0; f < kFramesPerSymbol; ++f) {
      const auto mag = magnitude_spectrum(wav.frame(b * kFramesPerSymbol + static_cast<std::size_t>(f)));
      int best = 0;
      for (int i = 1; i < kNumSymbols; ++i) {
        if (mag[i + kFirstToneBin] > mag[best + kFirstToneBin]) best = i;
      }
      if (mag[best + kFirstToneBin] > kSilenceFloor) {
        any_sound = true;
        ++votes[best];
      }
    }
    if (!any_sound) {
      out.push_back(' ');
      continue;
    }
    int winner = 0;
    for (int i = 1; i < kNumSymbols; ++i) {
      if (votes[i] > votes[winner]) winner = i;
    }
    out.push_back(lm::kSymbols[static_cast<std::size_t>(winner)]);
  }
  return out;
}

}  // namespace mslb::codec
