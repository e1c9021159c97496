#pragma once

// 16-bit PCM mono 8 kHz WAV reader/writer. Anything else is rejected rather
// than converted.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dcsep/dsp.hpp"
#include "dcsep/error.hpp"

namespace dcsep {

namespace detail {

inline std::uint32_t read_u32(const std::vector<char>& b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[at + static_cast<std::size_t>(i)]);
  return v;
}

inline std::uint16_t read_u16(const std::vector<char>& b, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[at]) |
                                    (static_cast<unsigned char>(b[at + 1]) << 8));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

// Writes to a sibling temp file and renames over the destination so readers
// never observe a partially written file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

}  // namespace detail

inline Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open WAV file " + path.string());
  std::vector<char> b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0) {
    throw DataError(name + ": not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const std::uint32_t len = detail::read_u32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > b.size()) throw DataError(name + ": truncated chunk");
    if (std::memcmp(b.data() + pos, "fmt ", 4) == 0) {
      if (len < 16) throw DataError(name + ": short fmt chunk");
      const auto format = detail::read_u16(b, body);
      const auto channels = detail::read_u16(b, body + 2);
      const auto rate = detail::read_u32(b, body + 4);
      const auto bits = detail::read_u16(b, body + 14);
      if (format != 1) throw DataError(name + ": only PCM WAV is supported (format tag " + std::to_string(format) + ")");
      if (channels != 1) throw DataError(name + ": only mono is supported (" + std::to_string(channels) + " channels)");
      if (rate != kSampleRate) throw DataError(name + ": sample rate " + std::to_string(rate) + " Hz, expected 8000 Hz");
      if (bits != 16) throw DataError(name + ": only 16-bit samples are supported (" + std::to_string(bits) + " bits)");
      have_fmt = true;
    } else if (std::memcmp(b.data() + pos, "data", 4) == 0) {
      if (!have_fmt) throw DataError(name + ": data chunk before fmt chunk");
      Waveform w;
      w.samples.resize(len / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        const auto raw = static_cast<std::int16_t>(detail::read_u16(b, body + 2 * i));
        w.samples[i] = static_cast<double>(raw) / 32768.0;
      }
      if (w.samples.empty()) throw DataError(name + ": no samples");
      return w;
    }
    pos = body + len + (len & 1);
  }
  throw DataError(name + ": missing data chunk");
}

inline std::int16_t quantize_pcm16(double x) {
  const double v = std::round(std::clamp(x, -1.0, 1.0) * 32768.0);
  return static_cast<std::int16_t>(std::clamp(v, -32768.0, 32767.0));
}

inline void write_wav(const std::filesystem::path& path, const Waveform& w) {
  if (w.sample_rate != kSampleRate) throw DataError("refusing to write non-8 kHz audio");
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  detail::put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);
  detail::put_u16(out, 1);
  detail::put_u32(out, kSampleRate);
  detail::put_u32(out, kSampleRate * 2);
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  out += "data";
  detail::put_u32(out, data_bytes);
  for (double x : w.samples) detail::put_u16(out, static_cast<std::uint16_t>(quantize_pcm16(x)));
  detail::write_file_atomic(path, out);
}

}  // namespace dcsep
