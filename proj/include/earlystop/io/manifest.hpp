#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <filesystem>
#include <random>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "earlystop/bmcnn/model.hpp"
#include "earlystop/common/fileio.hpp"

namespace earlystop::io {

inline const std::vector<std::string>& split_names() {
  static const std::vector<std::string> names{"train", "val", "test"};
  return names;
}

struct ManifestRecord {
  std::string path;   // as written; relative paths resolve against the manifest directory
  std::string label;  // low | mid | high, or empty when unknown
  std::string split;  // train | val | test, or empty before assignment
  std::string source;

  int label_index() const { return label.empty() ? -1 : bmcnn::class_index(label); }
  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

inline void to_json(nlohmann::json& j, const ManifestRecord& r) {
  j = {{"path", r.path}, {"label", r.label}, {"split", r.split}, {"source", r.source}};
}

inline void from_json(const nlohmann::json& j, ManifestRecord& r) {
  r.path = j.at("path").get<std::string>();
  r.label = j.contains("label") && !j.at("label").is_null() ? j.at("label").get<std::string>() : std::string();
  r.split = j.value("split", std::string());
  r.source = j.value("source", std::string());
}

struct Manifest {
  std::vector<ManifestRecord> records;
  std::filesystem::path base;  // directory relative paths are resolved against

  std::filesystem::path resolve(const ManifestRecord& r) const {
    const std::filesystem::path p(r.path);
    return p.is_absolute() || base.empty() ? p : base / p;
  }

  bool has_splits() const {
    return !records.empty() && std::all_of(records.begin(), records.end(), [](const auto& r) { return !r.split.empty(); });
  }

  std::vector<std::size_t> indices(const std::string& split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i].split == split) out.push_back(i);
    return out;
  }

  // Labels and split names must be known; with `check_paths`, every file must exist.
  void validate(bool check_paths = true) const {
    for (const auto& r : records) {
      if (r.path.empty()) throw DataError("manifest record without a path");
      try {
        (void)r.label_index();
      } catch (const LabelError&) {
        throw LabelError("manifest record '" + r.path + "' has unknown label '" + r.label + "'");
      }
      if (!r.split.empty() && std::find(split_names().begin(), split_names().end(), r.split) == split_names().end()) {
        throw DataError("manifest record '" + r.path + "' has unknown split '" + r.split + "'");
      }
      if (check_paths && !std::filesystem::exists(resolve(r))) throw IoError("manifest entry missing on disk: " + resolve(r).string());
    }
  }

  // Training commands need every split populated and labelled training data.
  void require_splits() const {
    if (records.empty()) throw DataError("manifest is empty");
    if (!has_splits()) throw DataError("manifest records lack split assignments");
    for (const auto& s : split_names())
      if (indices(s).empty()) throw DataError("split '" + s + "' is empty");
    for (const auto& r : records)
      if (r.split != "test" && r.label.empty()) throw DataError("'" + r.path + "' in split " + r.split + " has no label");
  }

  friend bool operator==(const Manifest& a, const Manifest& b) { return a.records == b.records; }
};

inline std::string to_jsonl(const Manifest& m) {
  std::ostringstream out;
  for (const auto& r : m.records) out << nlohmann::json(r).dump() << '\n';
  return out.str();
}

inline Manifest parse_manifest(const std::string& text, std::filesystem::path base = {}) {
  Manifest m;
  m.base = std::move(base);
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      m.records.push_back(nlohmann::json::parse(line).get<ManifestRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path, bool check_paths = true) {
  auto m = parse_manifest(read_text_file(path), path.parent_path());
  m.validate(check_paths);
  return m;
}

inline void save_manifest(const std::filesystem::path& path, const Manifest& m) { write_file_atomic(path, to_jsonl(m)); }

// Per class: shuffle, then the first 70% train, next 15% val, rest test,
// with rounding that keeps every split nonempty once a class has 3 clips.
inline void assign_stratified_splits(Manifest& m, std::uint64_t seed, std::array<double, 2> fractions = {0.70, 0.15}) {
  std::mt19937_64 rng(seed);
  for (const auto& name : bmcnn::class_names()) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < m.records.size(); ++i)
      if (m.records[i].label == name) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = idx.size();
    auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
    auto n_val = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
    if (n >= 3) {
      n_val = std::max<std::size_t>(n_val, 1);
      n_train = std::min(n_train, n - n_val - 1);
    }
    n_train = std::min(n_train, n);
    n_val = std::min(n_val, n - n_train);
    for (std::size_t k = 0; k < n; ++k) m.records[idx[k]].split = k < n_train ? "train" : k < n_train + n_val ? "val" : "test";
  }
}

// IDMT-Traffic style file names carry the recording site's speed limit as
// "<n>Kmh"; 30/50/70 km/h map to low/mid/high. Background recordings ("-BG")
// and other limits are skipped. Returns the built manifest without splits.
inline Manifest idmt_manifest(const std::filesystem::path& root) {
  static const std::regex speed(R"((\d+)[Kk]mh)");
  Manifest m;
  m.base = root;
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const auto name = f.filename().string();
    if (name.find("-BG") != std::string::npos) continue;
    std::smatch match;
    if (!std::regex_search(name, match, speed)) continue;
    const int kmh = std::stoi(match[1].str());
    const char* label = kmh == 30 ? "low" : kmh == 50 ? "mid" : kmh == 70 ? "high" : nullptr;
    if (!label) continue;
    m.records.push_back({std::filesystem::relative(f, root).generic_string(), label, "", "idmt"});
  }
  return m;
}

}  // namespace earlystop::io
