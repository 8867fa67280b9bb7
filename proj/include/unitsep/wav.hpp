// Copyright 2026 unitsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "unitsep/common.hpp"

namespace unitsep {

// Time-domain mono signal. Samples are nominally in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration_s() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate
                           : 0.0;
  }
};

inline bool all_finite(const Waveform& w) {
  for (double s : w.samples) {
    if (!std::isfinite(s)) return false;
  }
  return true;
}

inline void require_valid(const Waveform& w, const char* what) {
  if (w.sample_rate <= 0) throw ShapeError(std::string(what) + ": sample_rate must be positive");
  if (w.samples.empty()) throw ShapeError(std::string(what) + ": empty waveform");
  if (!all_finite(w)) throw ShapeError(std::string(what) + ": non-finite sample");
}

namespace detail {

inline std::uint32_t rd_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t rd_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void wr_u32(std::ofstream& f, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  f.write(b, 4);
}
inline void wr_u16(std::ofstream& f, std::uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  f.write(b, 2);
}

}  // namespace detail

// Reads a RIFF/WAVE file. Only mono 16-bit PCM at 8 or 16 kHz is accepted;
// anything else is rejected with a distinct error. Samples are scaled by
// 1/32768.
inline Waveform load_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_wav: cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  if (f.bad()) throw IoError("load_wav: read failure on '" + path + "'");
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw FormatError("load_wav: '" + path + "' is not a RIFF/WAVE file");
  }

  bool have_fmt = false;
  std::uint16_t audio_format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::uint32_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
    const std::uint32_t len = detail::rd_u32(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) {
      throw FormatError("load_wav: truncated chunk in '" + path + "'");
    }
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (len < 16) throw FormatError("load_wav: malformed fmt chunk in '" + path + "'");
      audio_format = detail::rd_u16(bytes.data() + body);
      channels = detail::rd_u16(bytes.data() + body + 2);
      rate = detail::rd_u32(bytes.data() + body + 4);
      bits = detail::rd_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = len;
    }
    pos = body + len + (len & 1);  // chunks are word aligned
  }

  if (!have_fmt || data == nullptr) {
    throw FormatError("load_wav: missing fmt/data chunk in '" + path + "'");
  }
  if (audio_format != 1 || bits != 16) {
    throw FormatError("load_wav: unsupported encoding in '" + path +
                      "' (need 16-bit PCM)");
  }
  if (channels != 1) {
    throw FormatError("load_wav: '" + path + "' has " + std::to_string(channels) +
                      " channels (need mono)");
  }
  if (rate != 8000 && rate != 16000) {
    throw FormatError("load_wav: unsupported sample rate " + std::to_string(rate) +
                      " in '" + path + "' (need 8000 or 16000)");
  }

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  const std::size_t n = data_len / 2;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::int16_t s = static_cast<std::int16_t>(
        static_cast<std::uint16_t>(data[2 * i] | (data[2 * i + 1] << 8)));
    w.samples[i] = static_cast<double>(s) / 32768.0;
  }
  if (w.samples.empty()) throw FormatError("load_wav: empty data chunk in '" + path + "'");
  return w;
}

// Writes mono 16-bit PCM. Samples are clipped to [-1, 1 - 2^-15] before
// quantization so the positive rail maps to 32767.
inline void save_wav(const Waveform& w, const std::string& path) {
  require_valid(w, "save_wav");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_wav: cannot open '" + path + "' for writing");

  const std::uint32_t n = static_cast<std::uint32_t>(w.samples.size());
  const std::uint32_t data_bytes = n * 2;
  f.write("RIFF", 4);
  detail::wr_u32(f, 36 + data_bytes);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  detail::wr_u32(f, 16);
  detail::wr_u16(f, 1);  // PCM
  detail::wr_u16(f, 1);  // mono
  detail::wr_u32(f, static_cast<std::uint32_t>(w.sample_rate));
  detail::wr_u32(f, static_cast<std::uint32_t>(w.sample_rate) * 2);
  detail::wr_u16(f, 2);
  detail::wr_u16(f, 16);
  f.write("data", 4);
  detail::wr_u32(f, data_bytes);

  constexpr double kCeil = 1.0 - 1.0 / 32768.0;
  for (double s : w.samples) {
    const double c = std::clamp(s, -1.0, kCeil);
    const auto q = static_cast<std::int16_t>(std::lrint(c * 32768.0));
    char b[2] = {static_cast<char>(q & 0xff), static_cast<char>((q >> 8) & 0xff)};
    f.write(b, 2);
  }
  if (!f) throw IoError("save_wav: write failure on '" + path + "'");
}

}  // namespace unitsep
