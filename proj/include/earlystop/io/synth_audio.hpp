#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>

#include "earlystop/dsp/audio.hpp"
#include "earlystop/harness/synthetic.hpp"
#include "earlystop/io/manifest.hpp"

namespace earlystop::io {

// Tone-plus-noise clips: one fundamental per class with decaying harmonics,
// an approaching-source envelope, and white noise. Classes are separable by
// their fundamentals, which sit in distinct mel bands.
struct SynthAudioSpec {
  std::size_t count = 300;
  int sample_rate = 16000;
  double seconds = 2.0;
  std::array<double, 3> fundamentals{120.0, 240.0, 480.0};
  std::size_t harmonics = 3;    // overtones above the fundamental, amplitude halving each
  double amplitude = 0.3;
  double envelope_floor = 0.25;  // relative loudness at the start of the clip
  double detune = 0.03;          // fundamental scaled by U(1 - d, 1 + d)
  double noise = 0.05;           // white noise standard deviation

  void validate() const {
    if (count == 0) throw ConfigError("synthetic dataset needs at least one clip");
    if (sample_rate <= 0 || !(seconds > 0.0)) throw ConfigError("sample rate and duration must be positive");
    for (double f : fundamentals)
      if (!(f > 0.0 && f * static_cast<double>(harmonics + 1) < sample_rate / 2.0)) {
        throw ConfigError("every harmonic must stay below the Nyquist frequency");
      }
    if (!(amplitude > 0.0 && amplitude <= 1.0)) throw ConfigError("amplitude must lie in (0, 1]");
    if (!(envelope_floor >= 0.0 && envelope_floor <= 1.0)) throw ConfigError("envelope floor must lie in [0, 1]");
    if (!(detune >= 0.0 && detune < 1.0)) throw ConfigError("detune must lie in [0, 1)");
    if (!(noise >= 0.0)) throw ConfigError("noise level must be non-negative");
  }
};

inline void to_json(nlohmann::json& j, const SynthAudioSpec& s) {
  j = {{"count", s.count},         {"sample_rate", s.sample_rate},       {"seconds", s.seconds},
       {"fundamentals", s.fundamentals}, {"harmonics", s.harmonics},    {"amplitude", s.amplitude},
       {"envelope_floor", s.envelope_floor}, {"detune", s.detune},       {"noise", s.noise}};
}

inline void from_json(const nlohmann::json& j, SynthAudioSpec& s) {
  SynthAudioSpec d;
  s.count = j.value("count", d.count);
  s.sample_rate = j.value("sample_rate", d.sample_rate);
  s.seconds = j.value("seconds", d.seconds);
  s.fundamentals = j.value("fundamentals", d.fundamentals);
  s.harmonics = j.value("harmonics", d.harmonics);
  s.amplitude = j.value("amplitude", d.amplitude);
  s.envelope_floor = j.value("envelope_floor", d.envelope_floor);
  s.detune = j.value("detune", d.detune);
  s.noise = j.value("noise", d.noise);
  s.validate();
}

inline dsp::AudioClip synth_clip(const SynthAudioSpec& spec, int label, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, spec.noise > 0.0 ? spec.noise : 1.0);
  const double f0 = spec.fundamentals.at(static_cast<std::size_t>(label)) * (1.0 + spec.detune * (2.0 * u(rng) - 1.0));
  std::vector<double> phase(spec.harmonics + 1);
  for (auto& p : phase) p = 2.0 * std::numbers::pi * u(rng);
  const double gain = spec.amplitude * (0.7 + 0.3 * u(rng));

  dsp::AudioClip clip;
  clip.sample_rate = spec.sample_rate;
  clip.label = label;
  const auto n = static_cast<std::size_t>(std::llround(spec.seconds * spec.sample_rate));
  clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / spec.sample_rate;
    const double env = spec.envelope_floor + (1.0 - spec.envelope_floor) * static_cast<double>(i) / static_cast<double>(n);
    double x = 0.0, a = 1.0;
    for (std::size_t h = 0; h <= spec.harmonics; ++h, a *= 0.5)
      x += a * std::sin(2.0 * std::numbers::pi * f0 * static_cast<double>(h + 1) * t + phase[h]);
    const double e = spec.noise > 0.0 ? gauss(rng) : 0.0;
    clip.samples[i] = static_cast<float>(gain * env * x / 2.0 + e);
  }
  return clip;
}

// Writes `audio/<label>_<index>.wav` under `out` plus `manifest.jsonl` with
// stratified splits. Clip i has label i mod 3 so the classes stay balanced.
inline Manifest write_synth_dataset(const std::filesystem::path& out, const SynthAudioSpec& spec, std::uint64_t seed) {
  spec.validate();
  Manifest m;
  m.base = out;
  char name[64];
  for (std::size_t i = 0; i < spec.count; ++i) {
    const int label = static_cast<int>(i % 3);
    const auto& cls = bmcnn::class_names()[static_cast<std::size_t>(label)];
    std::snprintf(name, sizeof name, "audio/%s_%05zu.wav", cls.c_str(), i);
    auto clip = synth_clip(spec, label, harness::derive_seed(seed, i));
    dsp::write_wav(out / name, clip);
    m.records.push_back({name, cls, "", "synthetic"});
  }
  assign_stratified_splits(m, harness::derive_seed(seed, spec.count));
  save_manifest(out / "manifest.jsonl", m);
  return m;
}

}  // namespace earlystop::io
