#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "earlystop/common/error.hpp"
#include "earlystop/common/fileio.hpp"

namespace earlystop::dsp {

struct AudioClip {
  std::vector<float> samples;
  int sample_rate = 16000;
  std::optional<int> label;
  std::string source_id;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

namespace detail {

inline std::uint32_t le32(const std::string& b, std::size_t at) {
  return std::uint32_t(std::uint8_t(b[at])) | std::uint32_t(std::uint8_t(b[at + 1])) << 8 |
         std::uint32_t(std::uint8_t(b[at + 2])) << 16 | std::uint32_t(std::uint8_t(b[at + 3])) << 24;
}
inline std::uint16_t le16(const std::string& b, std::size_t at) {
  return std::uint16_t(std::uint8_t(b[at]) | std::uint8_t(b[at + 1]) << 8);
}
inline void put32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put16(std::string& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xFF));
  b.push_back(static_cast<char>(v >> 8));
}

}  // namespace detail

// Decode a RIFF/WAVE image: 16-bit PCM or 32-bit IEEE float, first channel only.
inline AudioClip decode_wav(const std::string& bytes, std::string source_id = {}) {
  using detail::le16;
  using detail::le32;
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0) {
    throw IoError(source_id + ": not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    const std::size_t size = le32(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size() && id != "data") throw IoError(source_id + ": truncated '" + id + "' chunk");
    if (id == "fmt ") {
      if (size < 16) throw IoError(source_id + ": short fmt chunk");
      format = le16(bytes, body);
      channels = le16(bytes, body + 2);
      rate = le32(bytes, body + 4);
      bits = le16(bytes, body + 14);
      if (format == 0xFFFE && size >= 26) format = le16(bytes, body + 24);  // WAVE_FORMAT_EXTENSIBLE
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw IoError(source_id + ": data chunk before fmt chunk");
      if (channels == 0 || rate == 0) throw IoError(source_id + ": invalid channel count or sample rate");
      const bool pcm16 = format == 1 && bits == 16;
      const bool f32 = format == 3 && bits == 32;
      if (!pcm16 && !f32) {
        throw IoError(source_id + ": unsupported WAV encoding (format " + std::to_string(format) + ", " +
                      std::to_string(bits) + " bits)");
      }
      const std::size_t stride = std::size_t{channels} * bits / 8;
      const std::size_t available = std::min(size, bytes.size() - body);
      AudioClip clip;
      clip.sample_rate = static_cast<int>(rate);
      clip.source_id = std::move(source_id);
      clip.samples.resize(available / stride);
      for (std::size_t i = 0; i < clip.samples.size(); ++i) {
        const std::size_t at = body + i * stride;
        if (pcm16) {
          clip.samples[i] = static_cast<float>(static_cast<std::int16_t>(le16(bytes, at)) / 32768.0);
        } else {
          clip.samples[i] = std::bit_cast<float>(le32(bytes, at));
        }
      }
      return clip;
    }
    pos = body + size + (size & 1);
  }
  throw IoError(source_id + ": no data chunk");
}

inline AudioClip read_wav(const std::filesystem::path& path) {
  return decode_wav(read_text_file(path), path.string());
}

// 16-bit PCM mono encoding.
inline std::string encode_wav_pcm16(const AudioClip& clip) {
  using detail::put16;
  using detail::put32;
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  std::string b;
  b.reserve(44 + 2 * n);
  b += "RIFF";
  put32(b, 36 + 2 * n);
  b += "WAVEfmt ";
  put32(b, 16);
  put16(b, 1);
  put16(b, 1);
  put32(b, static_cast<std::uint32_t>(clip.sample_rate));
  put32(b, static_cast<std::uint32_t>(clip.sample_rate) * 2);
  put16(b, 2);
  put16(b, 16);
  b += "data";
  put32(b, 2 * n);
  for (float s : clip.samples) {
    const double c = std::clamp(static_cast<double>(s), -1.0, 32767.0 / 32768.0);
    put16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32768.0))));
  }
  return b;
}

inline void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  write_file_atomic(path, encode_wav_pcm16(clip));
}

inline std::vector<float> resample_linear(const std::vector<float>& in, int from_rate, int to_rate) {
  if (from_rate == to_rate || in.empty()) return in;
  const auto out_len = static_cast<std::size_t>(
      std::llround(static_cast<double>(in.size()) * to_rate / static_cast<double>(from_rate)));
  std::vector<float> out(out_len);
  const double step = static_cast<double>(from_rate) / to_rate;
  for (std::size_t i = 0; i < out_len; ++i) {
    const double pos = i * step;
    const auto i0 = static_cast<std::size_t>(pos);
    if (i0 + 1 >= in.size()) {
      out[i] = in.back();
    } else {
      const double frac = pos - static_cast<double>(i0);
      out[i] = static_cast<float>(in[i0] * (1.0 - frac) + in[i0 + 1] * frac);
    }
  }
  return out;
}

struct IngestConfig {
  int sample_rate = 16000;
  std::size_t clip_samples = 32000;
  double min_seconds = 1.8;
  double max_seconds = 2.2;
};

// Resample to the working rate, check the nominal two-second duration, clamp
// to [-1, 1], then zero-pad the tail or centre-crop to exactly clip_samples.
inline AudioClip ingest(AudioClip clip, const IngestConfig& cfg = {}) {
  if (clip.sample_rate <= 0) throw DataError(clip.source_id + ": invalid sample rate");
  clip.samples = resample_linear(clip.samples, clip.sample_rate, cfg.sample_rate);
  clip.sample_rate = cfg.sample_rate;
  const double secs = clip.duration();
  if (secs < cfg.min_seconds || secs > cfg.max_seconds) {
    throw DataError(clip.source_id + ": clip lasts " + std::to_string(secs) + " s, outside [" +
                    std::to_string(cfg.min_seconds) + ", " + std::to_string(cfg.max_seconds) + "]");
  }
  for (auto& s : clip.samples) {
    if (!std::isfinite(s)) throw DataError(clip.source_id + ": non-finite sample");
    s = std::clamp(s, -1.0f, 1.0f);
  }
  if (clip.samples.size() > cfg.clip_samples) {
    const std::size_t off = (clip.samples.size() - cfg.clip_samples) / 2;
    clip.samples = std::vector<float>(clip.samples.begin() + static_cast<std::ptrdiff_t>(off),
                                      clip.samples.begin() + static_cast<std::ptrdiff_t>(off + cfg.clip_samples));
  } else {
    clip.samples.resize(cfg.clip_samples, 0.0f);
  }
  return clip;
}

}  // namespace earlystop::dsp
