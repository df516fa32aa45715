#pragma once

// Audio clips, PCM16 WAV I/O, framing, windowing and frame log-energy.

#include "medstate/core.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <vector>

namespace medstate {

inline constexpr int kCanonicalRate = 16000;
inline constexpr double kEnergyFloor = 1e-10;

struct AudioClip {
  std::vector<double> samples;
  int sample_rate = kCanonicalRate;
  RecordingMeta meta;

  std::size_t size() const { return samples.size(); }
  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

// num_frames x frame_length, rectangular frames.
struct FrameSet {
  Matrix frames;
  int frame_shift = 0;
  int frame_length = 0;
  int origin_rate = kCanonicalRate;

  Eigen::Index num_frames() const { return frames.rows(); }
};

inline int ms_to_samples(double ms, int rate) {
  return static_cast<int>(std::lround(ms * rate / 1000.0));
}

inline std::size_t frame_count(std::size_t num_samples, std::size_t frame_length,
                               std::size_t frame_shift) {
  if (num_samples < frame_length || frame_length == 0 || frame_shift == 0) return 0;
  return (num_samples - frame_length) / frame_shift + 1;
}

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

}  // namespace detail

// Quantize to PCM16 with rounding and clipping. Inverse of the 1/32768 scaling.
inline std::int16_t to_pcm16(double x) {
  double v = std::round(x * 32768.0);
  if (v > 32767.0) v = 32767.0;
  if (v < -32768.0) v = -32768.0;
  return static_cast<std::int16_t>(v);
}

inline std::vector<unsigned char> encode_wav(const AudioClip& clip) {
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  std::vector<unsigned char> out;
  out.reserve(44 + 2 * n);
  auto tag = [&](const char* s) { out.insert(out.end(), s, s + 4); };
  tag("RIFF");
  detail::put_u32(out, 36 + 2 * n);
  tag("WAVE");
  tag("fmt ");
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);  // PCM
  detail::put_u16(out, 1);  // mono
  detail::put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  detail::put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * 2);
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  tag("data");
  detail::put_u32(out, 2 * n);
  for (double s : clip.samples) detail::put_u16(out, static_cast<std::uint16_t>(to_pcm16(s)));
  return out;
}

inline AudioClip decode_wav(std::span<const unsigned char> bytes, const std::string& name = "<memory>") {
  auto bad = [&](const std::string& why) { fail(ErrorKind::kFormat, name + ": " + why); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    bad("not a RIFF/WAVE file");

  bool have_fmt = false;
  int rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = detail::read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) bad("truncated chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) bad("short fmt chunk");
      const unsigned char* f = bytes.data() + body;
      const auto format = detail::read_u16(f);
      const auto channels = detail::read_u16(f + 2);
      const auto bits = detail::read_u16(f + 14);
      if (format != 1) bad("unsupported encoding (only integer PCM is accepted)");
      if (channels != 1) bad("unsupported channel count " + std::to_string(channels));
      if (bits != 16) bad("unsupported sample width " + std::to_string(bits));
      rate = static_cast<int>(detail::read_u32(f + 4));
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) bad("data chunk before fmt chunk");
      AudioClip clip;
      clip.sample_rate = rate;
      clip.samples.resize(size / 2);
      const unsigned char* d = bytes.data() + body;
      for (std::size_t i = 0; i < clip.samples.size(); ++i)
        clip.samples[i] = static_cast<std::int16_t>(detail::read_u16(d + 2 * i)) / 32768.0;
      return clip;
    }
    pos = body + size + (size & 1);
  }
  fail(ErrorKind::kFormat, "no data chunk");
}

inline AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_wav(bytes, path.string());
}

inline void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  const auto bytes = encode_wav(clip);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Admission check for the pipeline: canonical rate, non-empty, finite samples in [-1, 1].
inline void validate_clip(const AudioClip& clip) {
  require(clip.sample_rate == kCanonicalRate, ErrorKind::kFormat,
          "sample rate " + std::to_string(clip.sample_rate) + " Hz is not supported (16000 Hz only)");
  require(!clip.samples.empty(), ErrorKind::kTooShort, "empty clip");
  for (double s : clip.samples)
    require(std::isfinite(s) && s >= -1.0 && s <= 1.0, ErrorKind::kFormat, "sample out of range");
}

inline FrameSet frame_samples(std::span<const double> samples, int rate, int frame_length, int frame_shift) {
  require(frame_length > 0 && frame_shift > 0, ErrorKind::kInvalidArgument, "frame sizes must be positive");
  const std::size_t n = frame_count(samples.size(), static_cast<std::size_t>(frame_length),
                                    static_cast<std::size_t>(frame_shift));
  require(n >= 1, ErrorKind::kTooShort, "clip too short for one frame");
  FrameSet fs;
  fs.frame_length = frame_length;
  fs.frame_shift = frame_shift;
  fs.origin_rate = rate;
  fs.frames.resize(static_cast<Eigen::Index>(n), frame_length);
  for (std::size_t t = 0; t < n; ++t)
    for (int j = 0; j < frame_length; ++j)
      fs.frames(static_cast<Eigen::Index>(t), j) = samples[t * frame_shift + j];
  return fs;
}

inline FrameSet frame_signal(const AudioClip& clip, double frame_ms, double shift_ms) {
  return frame_samples(clip.samples, clip.sample_rate, ms_to_samples(frame_ms, clip.sample_rate),
                       ms_to_samples(shift_ms, clip.sample_rate));
}

enum class WindowKind { kHamming, kHann };

inline std::vector<double> window_coefficients(std::size_t n, WindowKind kind) {
  std::vector<double> w(n, 1.0);
  if (n == 1) return w;
  const double a = kind == WindowKind::kHamming ? 0.54 : 0.5;
  for (std::size_t i = 0; i < n; ++i)
    w[i] = a - (1.0 - a) * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
  return w;
}

inline std::vector<double> apply_window(std::span<const double> frame, WindowKind kind) {
  require(!frame.empty(), ErrorKind::kInvalidArgument, "empty frame");
  const auto w = window_coefficients(frame.size(), kind);
  std::vector<double> out(frame.size());
  for (std::size_t i = 0; i < frame.size(); ++i) out[i] = frame[i] * w[i];
  return out;
}

inline double log_energy(std::span<const double> frame, double floor = kEnergyFloor) {
  require(!frame.empty(), ErrorKind::kInvalidArgument, "empty frame");
  double e = 0.0;
  for (double s : frame) e += s * s;
  return std::log(e + floor);
}

inline std::vector<double> frame_log_energies(const FrameSet& fs) {
  std::vector<double> out(static_cast<std::size_t>(fs.num_frames()));
  for (Eigen::Index t = 0; t < fs.num_frames(); ++t) {
    const auto row = fs.frames.row(t);
    out[static_cast<std::size_t>(t)] = log_energy(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
  }
  return out;
}

}  // namespace medstate
