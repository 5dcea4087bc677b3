#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mosbench/common.hpp"

namespace mosbench {

struct WavData {
  std::vector<double> samples;  // mono, in [-1, 1] for PCM sources
  int sample_rate = 0;
};

namespace wav_detail {

inline uint32_t read_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
inline uint16_t read_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace wav_detail

// PCM 16-bit and IEEE float32 RIFF/WAVE. Multichannel input is mixed down
// by channel average.
inline WavData read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MosError(ErrorCode::kIo, "cannot open wav file: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  using wav_detail::read_u16;
  using wav_detail::read_u32;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw MosError(ErrorCode::kIo, "not a RIFF/WAVE file: " + path);

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  size_t data_off = 0, data_len = 0;
  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
    const uint32_t len = read_u32(bytes.data() + pos + 4);
    const size_t body = pos + 8;
    if (std::memcmp(id, "fmt ", 4) == 0 && body + 16 <= bytes.size()) {
      format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
    } else if (std::memcmp(id, "data", 4) == 0) {
      data_off = body;
      data_len = std::min<size_t>(len, bytes.size() - body);
    }
    pos = body + len + (len & 1);  // chunks are word-aligned
  }
  if (rate == 0 || channels == 0 || data_off == 0)
    throw MosError(ErrorCode::kIo, "wav missing fmt/data chunk: " + path);

  WavData out;
  out.sample_rate = static_cast<int>(rate);
  if (format == 1 && bits == 16) {
    const size_t frames = data_len / (2 * channels);
    out.samples.resize(frames);
    for (size_t f = 0; f < frames; ++f) {
      double acc = 0.0;
      for (size_t c = 0; c < channels; ++c) {
        const unsigned char* p = bytes.data() + data_off + 2 * (f * channels + c);
        const int16_t v = static_cast<int16_t>(p[0] | (p[1] << 8));
        acc += v / 32768.0;
      }
      out.samples[f] = acc / channels;
    }
  } else if (format == 3 && bits == 32) {
    const size_t frames = data_len / (4 * channels);
    out.samples.resize(frames);
    for (size_t f = 0; f < frames; ++f) {
      double acc = 0.0;
      for (size_t c = 0; c < channels; ++c) {
        float v;
        std::memcpy(&v, bytes.data() + data_off + 4 * (f * channels + c), 4);
        acc += v;
      }
      out.samples[f] = acc / channels;
    }
  } else {
    throw MosError(ErrorCode::kIo,
                   "unsupported wav encoding (want PCM16 or float32): " + path);
  }
  return out;
}

inline void write_wav_pcm16(const std::string& path,
                            const std::vector<double>& samples, int rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MosError(ErrorCode::kIo, "cannot write wav file: " + path);
  const uint32_t data_len = static_cast<uint32_t>(samples.size() * 2);
  auto put_u32 = [&](uint32_t v) {
    char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8),
                 static_cast<char>(v >> 16), static_cast<char>(v >> 24)};
    out.write(b, 4);
  };
  auto put_u16 = [&](uint16_t v) {
    char b[2] = {static_cast<char>(v), static_cast<char>(v >> 8)};
    out.write(b, 2);
  };
  out.write("RIFF", 4);
  put_u32(36 + data_len);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(16);
  put_u16(1);  // PCM
  put_u16(1);  // mono
  put_u32(static_cast<uint32_t>(rate));
  put_u32(static_cast<uint32_t>(rate) * 2);
  put_u16(2);
  put_u16(16);
  out.write("data", 4);
  put_u32(data_len);
  for (double s : samples) {
    double c = std::max(-1.0, std::min(1.0, s));
    auto v = static_cast<int16_t>(std::lrint(c * 32767.0));
    put_u16(static_cast<uint16_t>(v));
  }
}

inline void write_wav_float32(const std::string& path,
                              const std::vector<double>& samples, int rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MosError(ErrorCode::kIo, "cannot write wav file: " + path);
  const uint32_t data_len = static_cast<uint32_t>(samples.size() * 4);
  auto put_u32 = [&](uint32_t v) {
    char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8),
                 static_cast<char>(v >> 16), static_cast<char>(v >> 24)};
    out.write(b, 4);
  };
  auto put_u16 = [&](uint16_t v) {
    char b[2] = {static_cast<char>(v), static_cast<char>(v >> 8)};
    out.write(b, 2);
  };
  out.write("RIFF", 4);
  put_u32(36 + data_len);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(16);
  put_u16(3);  // IEEE float
  put_u16(1);
  put_u32(static_cast<uint32_t>(rate));
  put_u32(static_cast<uint32_t>(rate) * 4);
  put_u16(4);
  put_u16(32);
  out.write("data", 4);
  put_u32(data_len);
  for (double s : samples) {
    const float v = static_cast<float>(s);
    char b[4];
    std::memcpy(b, &v, 4);
    out.write(b, 4);
  }
}

// Linear-interpolation resampler.
inline std::vector<double> resample_linear(const std::vector<double>& x,
                                           int from_rate, int to_rate) {
  if (from_rate == to_rate || x.empty()) return x;
  const auto n_out = static_cast<size_t>(std::llround(
      static_cast<double>(x.size()) * to_rate / from_rate));
  std::vector<double> out(n_out);
  const double step = static_cast<double>(from_rate) / to_rate;
  for (size_t i = 0; i < n_out; ++i) {
    const double t = i * step;
    const auto i0 = static_cast<size_t>(t);
    if (i0 + 1 >= x.size()) {
      out[i] = x.back();
    } else {
      const double frac = t - static_cast<double>(i0);
      out[i] = x[i0] * (1.0 - frac) + x[i0 + 1] * frac;
    }
  }
  return out;
}

}  // namespace mosbench
