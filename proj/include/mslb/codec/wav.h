// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "mslb/codec/audio.h"

namespace mslb::codec {

/// 16-bit PCM mono RIFF/WAVE with the canonical 44-byte header. Samples are
/// clamped to [-1, 1] and scaled by 32767.
void write_wav(const std::filesystem::path& path, const Waveform& wav);
/// Reads what write_wav writes (16-bit PCM mono); FormatError otherwise.
Waveform read_wav(const std::filesystem::path& path);

}  // namespace mslb::codec
