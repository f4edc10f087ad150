// SPDX-License-Identifier: Apache-2.0
#include "mslb/codec/wav.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mslb/error.h"

namespace mslb::codec {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}
std::uint32_t get_u32(const std::string& s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[at + i]);
  return v;
}
std::uint16_t get_u16(const std::string& s, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(s[at]) | (static_cast<unsigned char>(s[at + 1]) << 8));
}

}  // namespace

void write_wav(const std::filesystem::path& path, const Waveform& wav) {
  const auto data_bytes = static_cast<std::uint32_t>(wav.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(wav.rate));
  put_u32(out, static_cast<std::uint32_t>(wav.rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_bytes);
  for (const float x : wav.samples) {
    const double c = std::clamp(static_cast<double>(x), -1.0, 1.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0))));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError("failed writing " + path.string());
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  const std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (s.size() < 44 || s.compare(0, 4, "RIFF") != 0 || s.compare(8, 8, "WAVEfmt ") != 0 ||
      s.compare(36, 4, "data") != 0) {
    throw FormatError(path.string() + " is not a canonical WAV file");
  }
  if (get_u16(s, 20) != 1 || get_u16(s, 22) != 1 || get_u16(s, 34) != 16) {
    throw FormatError(path.string() + " is not 16-bit PCM mono");
  }
  const std::uint32_t bytes = get_u32(s, 40);
  if (bytes % 2 != 0 || 44 + static_cast<std::size_t>(bytes) > s.size()) throw FormatError(path.string() + " is truncated");
  Waveform w;
  w.rate = static_cast<int>(get_u32(s, 24));
  w.samples.resize(bytes / 2);
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    const auto v = static_cast<std::int16_t>(get_u16(s, 44 + 2 * i));
    w.samples[i] = static_cast<float>(v / 32767.0);
  }
  return w;
}

}  // namespace mslb::codec
