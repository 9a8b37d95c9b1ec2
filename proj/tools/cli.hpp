#pragma once

// Command implementations behind the `earlystop` executable. Kept in a header
// so tests and the acceptance runner can drive them in-process.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "earlystop/bmcnn/bmcnn.hpp"
#include "earlystop/dqn/dqn.hpp"
#include "earlystop/harness/harness.hpp"
#include "earlystop/io/feature_store.hpp"
#include "earlystop/io/manifest.hpp"
#include "earlystop/io/run_config.hpp"
#include "earlystop/io/synth_audio.hpp"

namespace earlystop::cli {

namespace fs = std::filesystem;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> args;

  io::RunConfig load() const {
    io::RunConfig c = config_path.empty() ? io::RunConfig{} : io::load_run_config(config_path);
    if (seed) c.seed = *seed;
    return c;
  }
};

inline void require_out(const Common& c) {
  if (c.out.empty()) throw ConfigError("--out is required");
}

inline void write_json(const fs::path& p, const nlohmann::json& j) { write_file_atomic(p, j.dump(2) + "\n"); }

inline fs::path cache_root(const std::string& flag, const fs::path& manifest) {
  if (!flag.empty()) return flag;
  return io::default_cache_dir(manifest.parent_path() / "feature-cache");
}

// Training and held-out sources for either a synthetic spec or a frozen
// classifier over manifest clips.
struct Sources {
  std::unique_ptr<stopenv::ProbabilitySource> train, eval;
  std::optional<bmcnn::Classifier> model;
  std::vector<bmcnn::LabeledClip> train_clips, eval_clips;
};

inline std::uint64_t synthetic_eval_seed(std::uint64_t seed) { return harness::derive_seed(seed, 1); }

inline void check_classifier(const bmcnn::Classifier& m, const io::RunConfig& c) {
  const auto& g = m.geometry();
  if (g.frames != c.dsp.frames() || g.coeffs != c.dsp.n_coeffs) {
    throw CompatibilityError("classifier geometry " + std::to_string(g.frames) + "x" + std::to_string(g.coeffs) +
                             " does not match the feature pipeline " + std::to_string(c.dsp.frames()) + "x" +
                             std::to_string(c.dsp.n_coeffs));
  }
  if (g.classes != stopenv::kClasses) throw CompatibilityError("classifier must have 3 classes");
}

// ---------------------------------------------------------------- synth-data

inline int cmd_synth_data(const Common& common, std::optional<std::size_t> count) {
  require_out(common);
  auto cfg = common.load();
  if (count) cfg.synth_audio.count = *count;
  cfg.synth_audio.validate();
  const fs::path out = common.out;
  io::write_run_dir(out, cfg, "synth-data", common.args);
  const auto m = io::write_synth_dataset(out, cfg.synth_audio, cfg.seed);
  std::cout << "wrote " << m.records.size() << " clips and " << (out / "manifest.jsonl").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- features

inline int cmd_features(const Common& common, std::string manifest_path, const std::string& idmt_root,
                        const std::string& cache_flag) {
  require_out(common);
  const auto cfg = common.load();
  cfg.validate();
  const fs::path out = common.out;
  io::write_run_dir(out, cfg, "features", common.args);
  io::Manifest m;
  if (!idmt_root.empty()) {
    m = io::idmt_manifest(idmt_root);
    io::assign_stratified_splits(m, cfg.seed);
    manifest_path = (out / "manifest.jsonl").string();
    io::save_manifest(manifest_path, m);
    m = io::load_manifest(manifest_path);
  } else {
    if (manifest_path.empty()) throw ConfigError("features needs --manifest or --idmt");
    m = io::load_manifest(manifest_path);
  }
  if (m.records.empty()) throw DataError("manifest is empty");
  if (!m.has_splits()) {
    io::assign_stratified_splits(m, cfg.seed);
    io::save_manifest(out / "manifest.jsonl", m);
  }
  io::FeatureStore store(cache_root(cache_flag, manifest_path), cfg.dsp);
  const auto summary = store.build(m);
  auto j = summary.to_json();
  j["cache_dir"] = store.root().string();
  write_json(out / "features.json", j);
  std::cout << "features: " << summary.clips << " clips, " << summary.computed << " computed, " << summary.cache_hits
            << " cache hits, " << summary.errors.size() << " errors\n";
  for (const auto& [p, msg] : summary.errors) std::cerr << "  " << p << ": " << msg << "\n";
  return summary.errors.empty() ? 0 : 2;
}

// ---------------------------------------------------------------- train-bmcnn

inline int cmd_train_bmcnn(const Common& common, const std::string& manifest_path, const std::string& cache_flag,
                           const std::string& resume, std::optional<std::size_t> epochs, bool sweep) {
  require_out(common);
  auto cfg = common.load();
  if (epochs) cfg.classifier.epochs = *epochs;
  cfg.classifier.seed = cfg.seed;
  cfg.validate();
  if (manifest_path.empty()) throw ConfigError("train-bmcnn needs --manifest");
  const fs::path out = common.out;
  const auto m = io::load_manifest(manifest_path);
  m.require_splits();
  io::FeatureStore store(cache_root(cache_flag, manifest_path), cfg.dsp);
  const auto train = store.load_split(m, "train");
  const auto val = store.load_split(m, "val");
  const auto test = store.load_split(m, "test");
  io::write_run_dir(out, cfg, "train-bmcnn", common.args);

  bmcnn::Classifier model(cfg.geometry);
  model.init(cfg.seed);
  std::vector<const dsp::FeatureMap*> a, b;
  for (const auto& c : train) {
    a.push_back(&c.mfcc);
    b.push_back(&c.wavelet);
  }
  model.set_input_norm(bmcnn::fit_input_norm(a, cfg.geometry.coeffs), bmcnn::fit_input_norm(b, cfg.geometry.coeffs));
  bmcnn::Trainer<float> trainer(model, cfg.classifier);
  if (!resume.empty()) trainer.restore_state(nk::Checkpoint::load(resume));
  const auto report = trainer.run(train, val, [&](const bmcnn::EpochRecord& r) {
    trainer.state_checkpoint().save(out / "state.ckpt");
    std::cout << "epoch " << r.epoch << " train_loss " << r.train_loss << " val_accuracy " << r.val_accuracy << "\n";
  });
  trainer.best_checkpoint().save(out / "model.ckpt");
  auto best = bmcnn::Classifier::from_checkpoint(trainer.best_checkpoint());
  const auto test_metrics = bmcnn::evaluate(best, std::span<const bmcnn::LabeledClip>(test));
  auto j = report.to_json();
  j["test"] = bmcnn::to_json_value(test_metrics);
  if (sweep) {
    const std::vector<double> fractions{0.25, 0.5, 0.75, 1.0};
    const auto rows = bmcnn::prefix_sweep(best, std::span<const bmcnn::LabeledClip>(test), fractions, test.front().mfcc.frame_hop);
    write_file_atomic(out / "sweep.csv", bmcnn::sweep_csv(rows));
    nlohmann::json sj = nlohmann::json::array();
    for (const auto& r : rows) sj.push_back({{"fraction", r.fraction}, {"frames", r.frames}, {"seconds", r.seconds}, {"metrics", bmcnn::to_json_value(r.metrics)}});
    j["prefix_sweep"] = sj;
  }
  write_json(out / "report.json", j);
  write_file_atomic(out / "confusion.csv", bmcnn::confusion_csv(test_metrics));
  std::cout << "best epoch " << report.best_epoch << " val accuracy " << report.validation.accuracy << " test accuracy "
            << test_metrics.accuracy << "\n";
  return 0;
}

// ---------------------------------------------------------------- train-agent

inline Sources make_sources(const io::RunConfig& cfg, bool synthetic, const std::string& manifest_path,
                            const std::string& classifier, const std::string& cache_flag, std::size_t train_count,
                            const std::string& eval_split) {
  Sources s;
  if (synthetic) {
    s.train = std::make_unique<harness::SyntheticSource>(cfg.synthetic, harness::derive_seed(cfg.seed, 0), train_count);
    s.eval = std::make_unique<harness::SyntheticSource>(cfg.synthetic, synthetic_eval_seed(cfg.seed), cfg.synthetic_eval_episodes);
    return s;
  }
  if (manifest_path.empty() || classifier.empty()) throw ConfigError("either --synthetic or both --manifest and --classifier are required");
  s.model = bmcnn::Classifier::from_checkpoint(nk::Checkpoint::load(classifier));
  check_classifier(*s.model, cfg);
  const auto m = io::load_manifest(manifest_path);
  io::FeatureStore store(cache_root(cache_flag, manifest_path), cfg.dsp);
  s.train_clips = store.load_split(m, "train");
  s.eval_clips = store.load_split(m, eval_split);
  if (s.eval_clips.empty()) throw DataError("split '" + eval_split + "' is empty");
  s.train = std::make_unique<stopenv::ClassifierSource<float>>(*s.model, s.train_clips);
  s.eval = std::make_unique<stopenv::ClassifierSource<float>>(*s.model, s.eval_clips);
  return s;
}

inline int cmd_train_agent(const Common& common, bool synthetic, const std::string& manifest_path, const std::string& classifier,
                           const std::string& cache_flag, std::optional<std::size_t> episodes) {
  require_out(common);
  auto cfg = common.load();
  if (episodes) {
    cfg.episodes = *episodes;
    cfg.schedule.reset();
  }
  cfg.validate();
  const auto schedule = cfg.effective_schedule();
  const fs::path out = common.out;
  auto src = make_sources(cfg, synthetic, manifest_path, classifier, cache_flag, schedule.total(), "val");
  io::write_run_dir(out, cfg, "train-agent", common.args);

  const stopenv::EnvOptions opts{.require_labels = true, .label_free_state = cfg.label_free_state};
  stopenv::StopEnv env(*src.train, cfg.reward, opts), eval(*src.eval, cfg.reward, opts);
  dqn::FloatAgent agent(cfg.agent, cfg.qnet, harness::derive_seed(cfg.seed, 3));
  harness::TrainOptions opt;
  opt.schedule = schedule;
  opt.shared_reward = cfg.reward;
  opt.eval_every = cfg.eval_every;
  opt.eval_episodes = cfg.synthetic_eval_episodes;
  opt.failure_checkpoint = out / "agent-failure.ckpt";

  std::ofstream log(out / "log.jsonl", std::ios::binary | std::ios::trunc);
  if (!log) throw IoError("cannot write " + (out / "log.jsonl").string());
  log << nlohmann::json({{"type", "header"},
                         {"source", synthetic ? "synthetic" : "classifier"},
                         {"seed", cfg.seed},
                         {"schedule", schedule},
                         {"hyper", cfg.agent},
                         {"qnet", cfg.qnet},
                         {"reward", cfg.reward},
                         {"label_free_state", cfg.label_free_state}})
             .dump()
      << '\n';
  harness::TrainHooks hooks;
  hooks.on_episode = [&](const harness::EpisodeLog& e) {
    nlohmann::json j = e;
    j["type"] = "episode";
    log << j.dump() << '\n';
  };
  hooks.eval_env = &eval;
  hooks.on_snapshot = [&](std::size_t ep, const harness::EvalSummary& s) {
    log << nlohmann::json({{"type", "snapshot"}, {"episode", ep}, {"summary", s.to_json()}}).dump() << '\n';
  };
  const auto sampler = synthetic ? harness::sequential_clips() : harness::uniform_clips(src.train->size(), harness::derive_seed(cfg.seed, 2));
  harness::train_agent(agent, env, opt, sampler, hooks);
  log.close();
  agent.save(out / "agent.ckpt");
  const auto summary = harness::evaluate_policy("agent", harness::greedy_policy(agent), eval, src.eval->size());
  write_json(out / "summary.json", summary.to_json());
  std::cout << "agent: accuracy " << summary.accuracy << " mean stop " << summary.mean_stop << " speedup " << summary.speedup << "\n";
  return 0;
}

// ---------------------------------------------------------------- eval

// "fixed-length:<n>", "fixed-threshold:<tau>", or a JSON file.
inline harness::BaselinePolicy parse_baseline(const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon != std::string::npos) {
    const auto kind = spec.substr(0, colon), value = spec.substr(colon + 1);
    try {
      if (kind == "fixed-length") return harness::BaselinePolicy::fixed_length(std::stoul(value));
      if (kind == "fixed-threshold") return harness::BaselinePolicy::fixed_threshold(std::stod(value));
    } catch (const std::logic_error&) {
      throw ConfigError("malformed baseline value '" + value + "'");
    }
    throw ConfigError("unknown baseline kind '" + kind + "'");
  }
  return nlohmann::json::parse(read_text_file(spec)).get<harness::BaselinePolicy>();
}

inline std::string confusion_csv(const harness::EvalSummary& s) {
  bmcnn::Metrics m;
  m.confusion = s.confusion;
  return bmcnn::confusion_csv(m);
}

inline int cmd_eval(const Common& common, const std::string& agent_path, const std::string& baseline, bool synthetic,
                    const std::string& manifest_path, const std::string& classifier, const std::string& cache_flag,
                    std::optional<std::size_t> episodes, bool traces) {
  require_out(common);
  auto cfg = common.load();
  if (synthetic && episodes) cfg.synthetic_eval_episodes = *episodes;
  cfg.validate();
  if (agent_path.empty() == baseline.empty()) throw ConfigError("eval needs exactly one of --agent and --baseline");
  const fs::path out = common.out;
  auto src = make_sources(cfg, synthetic, manifest_path, classifier, cache_flag, 1, "test");
  io::write_run_dir(out, cfg, "eval", common.args);
  stopenv::StopEnv env(*src.eval, cfg.reward, {.require_labels = false, .label_free_state = cfg.label_free_state});

  std::optional<dqn::FloatAgent> agent;
  harness::Policy policy;
  std::string name;
  if (!agent_path.empty()) {
    agent = dqn::FloatAgent::load(agent_path);
    policy = harness::greedy_policy(*agent);
    name = "agent";
  } else {
    const auto b = parse_baseline(baseline);
    b.validate(cfg.reward.t_min, env.t_max());
    policy = harness::as_policy(b);
    name = b.name();
  }
  const std::size_t n = synthetic ? src.eval->size() : std::min(episodes.value_or(src.eval->size()), src.eval->size());
  std::ofstream trace_file;
  if (traces) trace_file.open(out / "traces.jsonl", std::ios::binary | std::ios::trunc);
  const auto summary = harness::evaluate_policy(name, policy, env, n, traces ? &trace_file : nullptr);
  write_json(out / "summary.json", summary.to_json(true));
  write_file_atomic(out / "confusion.csv", confusion_csv(summary));
  std::cout << name << ": accuracy " << summary.accuracy << " mean stop " << summary.mean_stop << " speedup " << summary.speedup << "\n";
  return 0;
}

// ---------------------------------------------------------------- report

inline harness::EvalSummary summary_from_json(const nlohmann::json& j) {
  harness::EvalSummary s;
  s.policy = j.at("policy").get<std::string>();
  s.episodes = j.at("episodes").get<std::size_t>();
  s.t_max = j.at("t_max").get<std::size_t>();
  s.accuracy = j.at("accuracy").get<double>();
  s.mean_stop = j.at("mean_stop").get<double>();
  s.speedup = j.at("speedup").get<double>();
  return s;
}

inline int cmd_report(const Common& common, const std::vector<std::string>& inputs) {
  require_out(common);
  std::vector<harness::EvalSummary> rows;
  for (const auto& p : inputs) rows.push_back(summary_from_json(nlohmann::json::parse(read_text_file(p))));
  const auto table = harness::compare_report(rows);
  const fs::path out = common.out;
  fs::create_directories(out);
  write_file_atomic(out / "comparison.csv", table.csv());
  write_json(out / "comparison.json", table.json());
  std::cout << table.csv();
  return 0;
}

// ---------------------------------------------------------------- entry

inline void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "run configuration (JSON)")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "master seed");
  app->add_option("--out", c.out, "output directory");
}

// Exit codes: 0 success, 2 invalid input or configuration, 1 anything else.
inline int run(int argc, const char* const* argv) {
  CLI::App app{"Early-stopping vehicle sound classification"};
  app.require_subcommand(1);
  Common common;
  for (int i = 1; i < argc; ++i) common.args.emplace_back(argv[i]);

  std::string manifest, cache, resume, classifier, agent, baseline, idmt;
  std::optional<std::size_t> count, epochs, episodes;
  bool synthetic = false, sweep = false, traces = false;
  std::vector<std::string> inputs;

  auto* synth = app.add_subcommand("synth-data", "write a synthetic tone dataset and manifest");
  add_common(synth, common);
  synth->add_option("--count", count, "number of clips");

  auto* feats = app.add_subcommand("features", "extract and cache MFCC and wavelet features");
  add_common(feats, common);
  feats->add_option("--manifest", manifest, "dataset manifest (JSON lines)");
  feats->add_option("--idmt", idmt, "build the manifest from an IDMT-style directory");
  feats->add_option("--cache", cache, "feature cache directory");

  auto* tb = app.add_subcommand("train-bmcnn", "train the two-branch classifier");
  add_common(tb, common);
  tb->add_option("--manifest", manifest, "dataset manifest")->required();
  tb->add_option("--cache", cache, "feature cache directory");
  tb->add_option("--resume", resume, "training-state checkpoint")->check(CLI::ExistingFile);
  tb->add_option("--epochs", epochs, "total epochs");
  tb->add_flag("--prefix-sweep", sweep, "report accuracy at 25/50/75/100% prefixes");

  auto* ta = app.add_subcommand("train-agent", "train the stopping agent");
  add_common(ta, common);
  ta->add_flag("--synthetic", synthetic, "use the synthetic confidence environment");
  ta->add_option("--manifest", manifest, "dataset manifest");
  ta->add_option("--classifier", classifier, "classifier checkpoint")->check(CLI::ExistingFile);
  ta->add_option("--cache", cache, "feature cache directory");
  ta->add_option("--episodes", episodes, "training episodes");

  auto* ev = app.add_subcommand("eval", "evaluate an agent or a baseline policy");
  add_common(ev, common);
  ev->add_option("--agent", agent, "agent checkpoint")->check(CLI::ExistingFile);
  ev->add_option("--baseline", baseline, "fixed-length:<n>, fixed-threshold:<tau> or a JSON file");
  ev->add_flag("--synthetic", synthetic, "evaluate on the synthetic environment");
  ev->add_option("--manifest", manifest, "dataset manifest");
  ev->add_option("--classifier", classifier, "classifier checkpoint")->check(CLI::ExistingFile);
  ev->add_option("--cache", cache, "feature cache directory");
  ev->add_option("--episodes", episodes, "episodes to evaluate");
  ev->add_flag("--traces", traces, "write per-step traces");

  auto* rep = app.add_subcommand("report", "compare evaluation summaries");
  add_common(rep, common);
  rep->add_option("summaries", inputs, "summary.json files")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) return cmd_synth_data(common, count);
    if (feats->parsed()) return cmd_features(common, manifest, idmt, cache);
    if (tb->parsed()) return cmd_train_bmcnn(common, manifest, cache, resume, epochs, sweep);
    if (ta->parsed()) return cmd_train_agent(common, synthetic, manifest, classifier, cache, episodes);
    if (ev->parsed()) return cmd_eval(common, agent, baseline, synthetic, manifest, classifier, cache, episodes, traces);
    if (rep->parsed()) return cmd_report(common, inputs);
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON input: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace earlystop::cli
