#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include "earlystop/bmcnn/train.hpp"
#include "earlystop/dqn/dqn.hpp"
#include "earlystop/dsp/dsp.hpp"
#include "earlystop/harness/harness.hpp"
#include "earlystop/io/synth_audio.hpp"

namespace earlystop::io {

inline constexpr const char* kVersion = "1.0.0";

// Everything a command needs; a copy lands in every output directory so the
// run can be repeated from it.
struct RunConfig {
  dsp::DspConfig dsp;
  bmcnn::Geometry geometry;
  bmcnn::TrainConfig classifier;
  stopenv::RewardConfig reward;
  dqn::AgentHyper agent;
  dqn::QNetConfig qnet;
  std::size_t episodes = 30000;  // total agent training episodes, split by the standard schedule
  std::optional<harness::PhaseSchedule> schedule;  // overrides `episodes` when set
  harness::SyntheticEnvSpec synthetic = harness::SyntheticEnvSpec::moderate();
  std::size_t synthetic_eval_episodes = 200;
  std::size_t eval_every = 0;
  SynthAudioSpec synth_audio;
  std::uint64_t seed = 0;
  bool label_free_state = false;

  harness::PhaseSchedule effective_schedule() const {
    return schedule ? *schedule : harness::PhaseSchedule::standard(episodes);
  }

  void validate() const {
    dsp.validate();
    geometry.validate();
    reward.validate();
    agent.validate();
    qnet.validate();
    synthetic.validate();
    synth_audio.validate();
    if (geometry.coeffs != dsp.n_coeffs) {
      throw ConfigError("classifier expects " + std::to_string(geometry.coeffs) + " coefficients per frame but the DSP produces " +
                        std::to_string(dsp.n_coeffs));
    }
    if (geometry.frames != dsp.frames()) {
      throw ConfigError("classifier expects " + std::to_string(geometry.frames) + " frames but the DSP produces " +
                        std::to_string(dsp.frames()));
    }
    if (reward.t_min >= geometry.frames) throw ConfigError("t_min must be below T_max");
    if (reward.t_min >= synthetic.t_max) throw ConfigError("t_min must be below the synthetic T_max");
    if (qnet.state_dim != stopenv::kStateDim || qnet.actions != 2) throw ConfigError("Q-network must map the 12-d state to 2 actions");
    if (geometry.classes != stopenv::kClasses) throw ConfigError("the stop environment needs a 3-class classifier");
    effective_schedule().validate();
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"dsp", c.dsp},
       {"geometry", c.geometry},
       {"classifier", c.classifier},
       {"reward", c.reward},
       {"agent", c.agent},
       {"qnet", c.qnet},
       {"episodes", c.episodes},
       {"schedule", c.schedule ? nlohmann::json(*c.schedule) : nlohmann::json(nullptr)},
       {"synthetic", c.synthetic},
       {"synthetic_eval_episodes", c.synthetic_eval_episodes},
       {"eval_every", c.eval_every},
       {"synth_audio", c.synth_audio},
       {"seed", c.seed},
       {"label_free_state", c.label_free_state}};
}

// Missing sections keep their defaults.
inline void from_json(const nlohmann::json& j, RunConfig& c) {
  RunConfig d;
  c = d;
  if (j.contains("dsp")) c.dsp = j.at("dsp").get<dsp::DspConfig>();
  if (j.contains("geometry")) c.geometry = j.at("geometry").get<bmcnn::Geometry>();
  if (j.contains("classifier")) c.classifier = j.at("classifier").get<bmcnn::TrainConfig>();
  if (j.contains("reward")) c.reward = j.at("reward").get<stopenv::RewardConfig>();
  if (j.contains("agent")) c.agent = j.at("agent").get<dqn::AgentHyper>();
  if (j.contains("qnet")) c.qnet = j.at("qnet").get<dqn::QNetConfig>();
  c.episodes = j.value("episodes", d.episodes);
  if (j.contains("schedule") && !j.at("schedule").is_null()) c.schedule = j.at("schedule").get<harness::PhaseSchedule>();
  if (j.contains("synthetic")) c.synthetic = j.at("synthetic").get<harness::SyntheticEnvSpec>();
  c.synthetic_eval_episodes = j.value("synthetic_eval_episodes", d.synthetic_eval_episodes);
  c.eval_every = j.value("eval_every", d.eval_every);
  if (j.contains("synth_audio")) c.synth_audio = j.at("synth_audio").get<SynthAudioSpec>();
  c.seed = j.value("seed", d.seed);
  c.label_free_state = j.value("label_free_state", d.label_free_state);
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  try {
    return j.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// config.json plus run.json (command, arguments, seed, version). No wall-clock
// fields, so identical invocations give identical directories.
inline void write_run_dir(const std::filesystem::path& out, const RunConfig& c, const std::string& command,
                          const std::vector<std::string>& args) {
  std::filesystem::create_directories(out);
  write_file_atomic(out / "config.json", nlohmann::json(c).dump(2) + "\n");
  const nlohmann::json run = {{"command", command}, {"args", args}, {"seed", c.seed}, {"version", kVersion}};
  write_file_atomic(out / "run.json", run.dump(2) + "\n");
}

}  // namespace earlystop::io
