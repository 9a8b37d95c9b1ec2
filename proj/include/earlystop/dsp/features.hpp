#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "earlystop/common/encoding.hpp"
#include "earlystop/common/error.hpp"
#include "earlystop/common/fileio.hpp"
#include "earlystop/dsp/audio.hpp"
#include "earlystop/dsp/mfcc.hpp"
#include "earlystop/dsp/pca.hpp"
#include "earlystop/dsp/wavelet.hpp"

namespace earlystop::dsp {

enum class FeatureKind { Mfcc, Wavelet };

inline std::string to_string(FeatureKind k) { return k == FeatureKind::Mfcc ? "mfcc" : "wavelet"; }

inline FeatureKind feature_kind_from_string(const std::string& s) {
  if (s == "mfcc") return FeatureKind::Mfcc;
  if (s == "wavelet") return FeatureKind::Wavelet;
  throw ConfigError("unknown feature kind '" + s + "'");
}

// Row-major T x F map.
struct FeatureMap {
  FeatureKind kind = FeatureKind::Mfcc;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;
  double frame_hop = 0.0;
  nlohmann::json meta = nlohmann::json::object();

  float at(std::size_t t, std::size_t f) const { return values[t * cols + f]; }

  void validate() const {
    if (values.size() != rows * cols) throw DimensionError(to_string(kind) + " map storage does not match its shape");
    for (float v : values)
      if (!std::isfinite(v)) throw NumericError(to_string(kind) + " map contains NaN or Inf");
  }
};

struct DspConfig {
  int sample_rate = 16000;
  std::size_t clip_samples = 32000;
  std::size_t frame_len = 512;
  std::size_t hop = 256;
  std::size_t nfft = 512;
  std::size_t n_mels = 40;
  std::size_t n_coeffs = 13;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-10;
  std::size_t wavelet_levels = 4;

  std::size_t frames() const { return frame_count(clip_samples, frame_len, hop); }
  std::size_t wavelet_stat_dim() const { return 4 * (wavelet_levels + 1); }

  void validate() const {
    if (nfft < frame_len) {
      throw ConfigError("nfft (" + std::to_string(nfft) + ") must be at least the frame length (" +
                        std::to_string(frame_len) + ")");
    }
    if (n_coeffs == 0 || n_coeffs > n_mels) throw ConfigError("coefficient count must lie in [1, n_mels]");
    if (n_coeffs > wavelet_stat_dim()) throw ConfigError("too few wavelet statistics for the coefficient count");
    if (!(log_floor > 0.0)) throw ConfigError("log floor must be positive");
    frames();
  }

  IngestConfig ingest_config() const {
    IngestConfig c;
    c.sample_rate = sample_rate;
    c.clip_samples = clip_samples;
    return c;
  }

  std::string hash() const;
};

inline void to_json(nlohmann::json& j, const DspConfig& c) {
  j = {{"sample_rate", c.sample_rate}, {"clip_samples", c.clip_samples}, {"frame_len", c.frame_len},
       {"hop", c.hop},                 {"nfft", c.nfft},                 {"n_mels", c.n_mels},
       {"n_coeffs", c.n_coeffs},       {"fmin", c.fmin},                 {"fmax", c.fmax},
       {"log_floor", c.log_floor},     {"wavelet_levels", c.wavelet_levels}};
}

inline void from_json(const nlohmann::json& j, DspConfig& c) {
  DspConfig d;
  c.sample_rate = j.value("sample_rate", d.sample_rate);
  c.clip_samples = j.value("clip_samples", d.clip_samples);
  c.frame_len = j.value("frame_len", d.frame_len);
  c.hop = j.value("hop", d.hop);
  c.nfft = j.value("nfft", d.nfft);
  c.n_mels = j.value("n_mels", d.n_mels);
  c.n_coeffs = j.value("n_coeffs", d.n_coeffs);
  c.fmin = j.value("fmin", d.fmin);
  c.fmax = j.value("fmax", d.fmax);
  c.log_floor = j.value("log_floor", d.log_floor);
  c.wavelet_levels = j.value("wavelet_levels", d.wavelet_levels);
}

inline std::string DspConfig::hash() const { return content_hash(nlohmann::json(*this).dump()); }

// Per-subband statistics in order d1..dL then aL; four values each.
inline std::vector<double> subband_statistics(const WaveletPyramid& p, double floor) {
  std::vector<double> out;
  auto add = [&](const std::vector<double>& c) {
    double sq = 0, sum = 0, abs_sum = 0, abs_max = 0;
    for (double v : c) {
      sq += v * v;
      sum += v;
      abs_sum += std::abs(v);
      abs_max = std::max(abs_max, std::abs(v));
    }
    const double n = static_cast<double>(c.size());
    const double mean = sum / n;
    const double var = std::max(0.0, sq / n - mean * mean);
    out.push_back(std::log(std::max(sq / n, floor)));
    out.push_back(std::log(std::max(var, floor)));
    out.push_back(std::log(std::max(abs_sum / n, floor)));
    out.push_back(std::log(std::max(abs_max, floor)));
  };
  for (const auto& d : p.details) add(d);
  add(p.approximation);
  return out;
}

// Owns the FFT plan and precomputed bases; one per thread.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(DspConfig config = {})
      : config_((config.validate(), config)),
        spectrum_(std::make_unique<PowerSpectrum>(config_.nfft)),
        filterbank_(mel_filterbank(config_.n_mels, config_.nfft, config_.sample_rate, config_.fmin, config_.fmax)),
        dct_(dct2_matrix(config_.n_coeffs, config_.n_mels)),
        wavelet_(WaveletSpec::coif1(config_.wavelet_levels)) {}

  const DspConfig& config() const { return config_; }
  const WaveletSpec& wavelet() const { return wavelet_; }
  const Matrix& filterbank() const { return filterbank_; }

  Matrix frames(const AudioClip& clip) const { return frame_and_window(clip.samples, config_.frame_len, config_.hop); }

  // Triangular filterbank energies of |X|^2, one row per frame.
  Matrix mel_energies(const AudioClip& clip) const {
    const auto fr = frames(clip);
    Matrix out(fr.size(), std::vector<double>(config_.n_mels, 0.0));
    for (std::size_t t = 0; t < fr.size(); ++t) {
      const auto power = (*spectrum_)(fr[t]);
      for (std::size_t m = 0; m < config_.n_mels; ++m) {
        double e = 0;
        for (std::size_t k = 0; k < power.size(); ++k) e += filterbank_[m][k] * power[k];
        out[t][m] = e;
      }
    }
    return out;
  }

  FeatureMap mfcc(const AudioClip& clip) const {
    const auto energies = mel_energies(clip);
    FeatureMap map = empty_map(FeatureKind::Mfcc, energies.size());
    std::vector<double> logs(config_.n_mels);
    for (std::size_t t = 0; t < energies.size(); ++t) {
      for (std::size_t m = 0; m < config_.n_mels; ++m) logs[m] = std::log(std::max(energies[t][m], config_.log_floor));
      for (std::size_t c = 0; c < config_.n_coeffs; ++c) {
        double s = 0;
        for (std::size_t m = 0; m < config_.n_mels; ++m) s += dct_[c][m] * logs[m];
        map.values[t * map.cols + c] = static_cast<float>(s);
      }
    }
    map.validate();
    return map;
  }

  // Raw per-frame subband statistics before projection.
  Matrix wavelet_statistics(const AudioClip& clip) const {
    const auto fr = frames(clip);
    Matrix out;
    out.reserve(fr.size());
    for (const auto& frame : fr) out.push_back(subband_statistics(dwt_analyze(frame, wavelet_), config_.log_floor));
    return out;
  }

  FeatureMap wavelet_map(const AudioClip& clip, const PcaModel& pca) const {
    if (!pca.fitted()) throw StateError("wavelet features need a fitted PCA model");
    if (pca.output_dim() != config_.n_coeffs || pca.input_dim() != config_.wavelet_stat_dim()) {
      throw DimensionError("PCA maps " + std::to_string(pca.input_dim()) + " -> " + std::to_string(pca.output_dim()) +
                           " but the pipeline needs " + std::to_string(config_.wavelet_stat_dim()) + " -> " +
                           std::to_string(config_.n_coeffs));
    }
    const auto stats = wavelet_statistics(clip);
    FeatureMap map = empty_map(FeatureKind::Wavelet, stats.size());
    for (std::size_t t = 0; t < stats.size(); ++t) {
      const auto z = pca.project(stats[t]);
      for (std::size_t c = 0; c < z.size(); ++c) map.values[t * map.cols + c] = static_cast<float>(z[c]);
    }
    map.validate();
    return map;
  }

 private:
  FeatureMap empty_map(FeatureKind kind, std::size_t rows) const {
    FeatureMap m;
    m.kind = kind;
    m.rows = rows;
    m.cols = config_.n_coeffs;
    m.values.assign(rows * m.cols, 0.0f);
    m.frame_hop = static_cast<double>(config_.hop) / config_.sample_rate;
    m.meta = {{"config", config_}};
    return m;
  }

  DspConfig config_;
  std::unique_ptr<PowerSpectrum> spectrum_;
  Matrix filterbank_;
  Matrix dct_;
  WaveletSpec wavelet_;
};

inline FeatureMap mfcc(const AudioClip& clip, const DspConfig& config) { return FeatureExtractor(config).mfcc(clip); }

inline FeatureMap wavelet_featuremap(const AudioClip& clip, const PcaModel& pca, const DspConfig& config) {
  return FeatureExtractor(config).wavelet_map(clip, pca);
}

// Cache document: one JSON header line, then one base64 line of float32 values.
inline std::string serialize_feature_map(const FeatureMap& map, const std::string& config_hash) {
  nlohmann::json header = {{"format", "earlystop-features"},
                           {"version", 1},
                           {"kind", to_string(map.kind)},
                           {"shape", {map.rows, map.cols}},
                           {"frame_hop", map.frame_hop},
                           {"config_hash", config_hash},
                           {"meta", map.meta}};
  return header.dump() + "\n" + floats_to_base64(map.values) + "\n";
}

struct CachedFeatures {
  FeatureMap map;
  std::string config_hash;
};

inline CachedFeatures parse_feature_map(const std::string& text) {
  const auto nl = text.find('\n');
  if (nl == std::string::npos) throw IoError("feature file has no header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("feature file header is not JSON: ") + e.what());
  }
  if (header.value("format", "") != "earlystop-features") throw IoError("not a feature file");
  CachedFeatures out;
  out.config_hash = header.value("config_hash", "");
  auto& m = out.map;
  m.kind = feature_kind_from_string(header.at("kind").get<std::string>());
  m.rows = header.at("shape").at(0).get<std::size_t>();
  m.cols = header.at("shape").at(1).get<std::size_t>();
  m.frame_hop = header.value("frame_hop", 0.0);
  m.meta = header.value("meta", nlohmann::json::object());
  std::string payload = text.substr(nl + 1);
  while (!payload.empty() && (payload.back() == '\n' || payload.back() == '\r')) payload.pop_back();
  m.values = base64_to_floats(payload);
  m.validate();
  return out;
}

inline void save_feature_map(const std::filesystem::path& path, const FeatureMap& map, const std::string& config_hash) {
  write_file_atomic(path, serialize_feature_map(map, config_hash));
}

// Returns nothing when the file is absent, unreadable, or was produced under a
// different configuration.
inline std::optional<FeatureMap> load_cached_feature_map(const std::filesystem::path& path,
                                                         const std::string& config_hash) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  try {
    auto cached = parse_feature_map(read_text_file(path));
    if (cached.config_hash != config_hash) return std::nullopt;
    return std::move(cached.map);
  } catch (const Error&) {
    return std::nullopt;
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

}  // namespace earlystop::dsp
