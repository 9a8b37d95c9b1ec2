#pragma once

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "earlystop/bmcnn/evaluate.hpp"
#include "earlystop/common/encoding.hpp"
#include "earlystop/dsp/dsp.hpp"
#include "earlystop/io/manifest.hpp"

namespace earlystop::io {

inline std::filesystem::path default_cache_dir(const std::filesystem::path& fallback) {
  if (const char* env = std::getenv("EARLYSTOP_CACHE_DIR"); env && *env) return env;
  return fallback;
}

struct FeatureSummary {
  std::size_t clips = 0;
  std::size_t computed = 0;
  std::size_t cache_hits = 0;
  std::vector<std::pair<std::string, std::string>> errors;  // (path, message)
  std::string config_hash;

  nlohmann::json to_json() const {
    nlohmann::json errs = nlohmann::json::array();
    for (const auto& [p, msg] : errors) errs.push_back({{"path", p}, {"error", msg}});
    return {{"clips", clips}, {"computed", computed}, {"cache_hits", cache_hits}, {"errors", errs}, {"config_hash", config_hash}};
  }
};

// Content-addressed feature cache. Entries live under
// <root>/<config hash>/<audio hash>.{mfcc,wavelet}; the config hash covers the
// DSP settings and the PCA projection, which is fitted on the train split and
// stored as <root>/pca/<key>.json.
class FeatureStore {
 public:
  FeatureStore(std::filesystem::path root, dsp::DspConfig config) : root_(std::move(root)), fx_(config) {}

  const std::filesystem::path& root() const { return root_; }
  const dsp::DspConfig& config() const { return fx_.config(); }

  static std::string audio_hash(const std::filesystem::path& p) { return content_hash(read_text_file(p)); }

  dsp::AudioClip load_audio(const Manifest& m, const ManifestRecord& r) const {
    auto clip = dsp::read_wav(m.resolve(r));
    clip.source_id = r.path;
    return dsp::ingest(std::move(clip), config().ingest_config());
  }

  // PCA fitted on every frame of the train split, reused when the same
  // configuration and train audio have been seen before.
  dsp::PcaModel pca(const Manifest& m, bool allow_fit = true) {
    if (pca_) return *pca_;
    const auto train = m.indices("train");
    if (train.empty()) throw DataError("PCA needs a nonempty train split");
    std::string key_src = config().hash();
    for (auto i : train) key_src += audio_hash(m.resolve(m.records[i]));
    const auto path = root_ / "pca" / (content_hash(key_src) + ".json");
    if (std::filesystem::exists(path)) {
      pca_ = nlohmann::json::parse(read_text_file(path)).get<dsp::PcaModel>();
      return *pca_;
    }
    if (!allow_fit) throw DataError("feature cache is stale or missing for this configuration; run `features` first");
    std::vector<std::vector<double>> rows;
    for (auto i : train) {
      const auto stats = fx_.wavelet_statistics(load_audio(m, m.records[i]));
      rows.insert(rows.end(), stats.begin(), stats.end());
    }
    pca_ = dsp::fit_pca(rows, config().n_coeffs);
    write_file_atomic(path, nlohmann::json(*pca_).dump());
    return *pca_;
  }

  std::string config_hash(const Manifest& m, bool allow_fit = true) {
    return content_hash(config().hash() + nlohmann::json(pca(m, allow_fit)).dump());
  }

  // Computes or reuses features for every record. Per-file failures are
  // collected instead of aborting the run.
  FeatureSummary build(const Manifest& m) {
    if (m.records.empty()) throw DataError("manifest is empty");
    FeatureSummary s;
    s.config_hash = config_hash(m);
    const auto proj = pca(m);
    for (const auto& r : m.records) {
      ++s.clips;
      try {
        const auto [mp, wp] = entry_paths(m, r, s.config_hash);
        if (dsp::load_cached_feature_map(mp, s.config_hash) && dsp::load_cached_feature_map(wp, s.config_hash)) {
          ++s.cache_hits;
          continue;
        }
        const auto clip = load_audio(m, r);
        dsp::save_feature_map(mp, fx_.mfcc(clip), s.config_hash);
        dsp::save_feature_map(wp, fx_.wavelet_map(clip, proj), s.config_hash);
        ++s.computed;
      } catch (const Error& e) {
        s.errors.emplace_back(r.path, e.what());
      }
    }
    return s;
  }

  // Cached features for one split; anything missing or built under another
  // configuration is a staleness error.
  std::vector<bmcnn::LabeledClip> load_split(const Manifest& m, const std::string& split) {
    const auto hash = config_hash(m, false);
    std::vector<bmcnn::LabeledClip> out;
    for (auto i : m.indices(split)) {
      const auto& r = m.records[i];
      const auto [mp, wp] = entry_paths(m, r, hash);
      auto a = dsp::load_cached_feature_map(mp, hash);
      auto b = dsp::load_cached_feature_map(wp, hash);
      if (!a || !b) throw DataError("feature cache is stale or missing for '" + r.path + "'; run `features` first");
      out.push_back({r.path, std::move(*a), std::move(*b), r.label_index()});
    }
    return out;
  }

 private:
  std::pair<std::filesystem::path, std::filesystem::path> entry_paths(const Manifest& m, const ManifestRecord& r,
                                                                      const std::string& hash) const {
    const auto h = audio_hash(m.resolve(r));
    const auto dir = root_ / hash;
    return {dir / (h + ".mfcc"), dir / (h + ".wavelet")};
  }

  std::filesystem::path root_;
  dsp::FeatureExtractor fx_;
  std::optional<dsp::PcaModel> pca_;
};

}  // namespace earlystop::io
