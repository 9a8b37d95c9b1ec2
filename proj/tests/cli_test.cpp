#include <gtest/gtest.h>

#include <unistd.h>

#include <cmath>
#include <complex>
#include <cstdlib>
#include <filesystem>
#include <numbers>

#include "cli.hpp"

namespace es = earlystop;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "earlystop");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return es::cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) { return es::read_text_file(p); }

std::vector<std::string> lines(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

bool same_tree(const fs::path& a, const fs::path& b, const std::vector<std::string>& names) {
  for (const auto& n : names)
    if (slurp(a / n) != slurp(b / n)) return false;
  return true;
}

// One small dataset, feature cache and classifier shared by the suite.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("earlystop-cli-" + std::to_string(::getpid()));
    fs::remove_all(root_);
    ASSERT_EQ(run({"synth-data", "--out", (root_ / "data").string(), "--count", "30", "--seed", "5"}), 0);
    ASSERT_EQ(run({"features", "--manifest", manifest(), "--out", (root_ / "feat").string()}), 0);
    ASSERT_EQ(run({"train-bmcnn", "--manifest", manifest(), "--out", (root_ / "cls").string(), "--epochs", "2", "--seed", "1"}), 0);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::string manifest() { return (root_ / "data" / "manifest.jsonl").string(); }
  static std::string classifier() { return (root_ / "cls" / "model.ckpt").string(); }
  static fs::path dir(const std::string& name) { return root_ / name; }

  static fs::path root_;
};

fs::path Cli::root_;

}  // namespace

TEST(Manifest, RoundTripAndValidation) {
  es::io::Manifest m;
  m.records = {{"a.wav", "low", "train", "x"}, {"b.wav", "high", "test", "y"}, {"c.wav", "", "test", "z"}};
  const auto back = es::io::parse_manifest(es::io::to_jsonl(m));
  EXPECT_EQ(back, m);
  EXPECT_NO_THROW(back.validate(false));
  EXPECT_THROW(back.validate(true), es::IoError);
  EXPECT_THROW(es::io::parse_manifest(R"({"path":"a.wav","label":"fast"})").validate(false), es::LabelError);
  EXPECT_THROW(es::io::parse_manifest(R"({"path":"a.wav","label":"low","split":"dev"})").validate(false), es::DataError);
  EXPECT_THROW(es::io::parse_manifest("{not json"), es::DataError);
  EXPECT_THROW(m.require_splits(), es::DataError);  // val split empty
}

TEST(Manifest, StratifiedSplitsFollowFractions) {
  es::io::Manifest m;
  for (int i = 0; i < 300; ++i) m.records.push_back({"f" + std::to_string(i) + ".wav", es::bmcnn::class_names()[i % 3], "", ""});
  auto m2 = m;
  es::io::assign_stratified_splits(m, 9);
  es::io::assign_stratified_splits(m2, 9);
  EXPECT_EQ(m, m2);
  for (const auto& cls : es::bmcnn::class_names()) {
    std::map<std::string, int> n;
    for (const auto& r : m.records)
      if (r.label == cls) ++n[r.split];
    EXPECT_EQ(n["train"], 70);
    EXPECT_EQ(n["val"], 15);
    EXPECT_EQ(n["test"], 15);
  }
  es::io::Manifest tiny;
  for (int i = 0; i < 9; ++i) tiny.records.push_back({std::to_string(i), es::bmcnn::class_names()[i % 3], "", ""});
  es::io::assign_stratified_splits(tiny, 1);
  EXPECT_NO_THROW(tiny.require_splits());
}

TEST(Manifest, IdmtAdapterMapsSpeedLimits) {
  const auto root = fs::temp_directory_path() / ("earlystop-idmt-" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root / "audio");
  for (const char* n : {"2019-10-22-08-40_Fraunhofer-IDMT_30Kmh_1116695_M_D_CL_ME_CH12.wav",
                        "2019-10-22-08-40_Fraunhofer-IDMT_50Kmh_1116695_M_D_CR_SE_CH34.wav",
                        "2019-11-19-08-00_Schleusinger-Allee_70Kmh_6615_A_W_CL_ME_CH12.wav",
                        "2019-11-19-08-00_Schleusinger-Allee_70Kmh_6615_A_W_CL_ME_CH12-BG.wav",
                        "2019-11-19-08-00_Somewhere_60Kmh_1_A_W_CL_ME_CH12.wav", "notes.txt"}) {
    std::ofstream(root / "audio" / n) << "x";
  }
  const auto m = es::io::idmt_manifest(root);
  ASSERT_EQ(m.records.size(), 3u);
  std::multiset<std::string> labels;
  for (const auto& r : m.records) {
    labels.insert(r.label);
    EXPECT_EQ(r.source, "idmt");
    EXPECT_TRUE(fs::exists(m.resolve(r)));
  }
  EXPECT_EQ(labels, (std::multiset<std::string>{"low", "mid", "high"}));
  fs::remove_all(root);
}

TEST(SynthAudio, FundamentalsAreResolvedByTheFilterbank) {
  es::io::SynthAudioSpec spec;
  spec.noise = 0.0;
  spec.detune = 0.0;
  const es::dsp::FeatureExtractor fx;
  const double fs_hz = spec.sample_rate;
  std::set<std::size_t> bands;
  for (int label = 0; label < 3; ++label) {
    const auto clip = es::io::synth_clip(spec, label, 17);
    // Direct DFT of the last 4096 samples at 1 Hz resolution around the expected peak.
    const std::size_t n = 4096, off = clip.samples.size() - n;
    double best_f = 0, best = -1;
    for (double f = 60; f < 1000; f += 1.0) {
      std::complex<double> acc = 0;
      for (std::size_t i = 0; i < n; ++i)
        acc += static_cast<double>(clip.samples[off + i]) * std::polar(1.0, -2.0 * std::numbers::pi * f * static_cast<double>(i) / fs_hz);
      if (std::abs(acc) > best) {
        best = std::abs(acc);
        best_f = f;
      }
    }
    const double f0 = spec.fundamentals[static_cast<std::size_t>(label)];
    EXPECT_NEAR(best_f, f0, 2.0);
    const auto bin = static_cast<std::size_t>(std::lround(f0 * static_cast<double>(fx.config().nfft) / fs_hz));
    std::size_t band = 0;
    for (std::size_t m = 1; m < fx.filterbank().size(); ++m)
      if (fx.filterbank()[m][bin] > fx.filterbank()[band][bin]) band = m;
    EXPECT_GT(fx.filterbank()[band][bin], 0.0);
    bands.insert(band);
  }
  EXPECT_EQ(bands.size(), 3u);
}

TEST(SynthAudio, ValidationRejectsBadSpecs) {
  es::io::SynthAudioSpec s;
  s.count = 0;
  EXPECT_THROW(s.validate(), es::ConfigError);
  s = {};
  s.fundamentals = {120, 240, 3000};
  EXPECT_THROW(s.validate(), es::ConfigError);
}

TEST_F(Cli, SynthDataCountsAndDeterminism) {
  EXPECT_EQ(lines(manifest()).size(), 30u);
  std::size_t wavs = 0;
  for (const auto& e : fs::directory_iterator(dir("data") / "audio")) wavs += e.path().extension() == ".wav";
  EXPECT_EQ(wavs, 30u);
  ASSERT_EQ(run({"synth-data", "--out", dir("again").string(), "--count", "30", "--seed", "5"}), 0);
  std::vector<std::string> names{"manifest.jsonl", "config.json"};
  for (const auto& e : fs::directory_iterator(dir("data") / "audio")) names.push_back("audio/" + e.path().filename().string());
  EXPECT_TRUE(same_tree(dir("data"), dir("again"), names));
  EXPECT_EQ(run({"synth-data", "--out", dir("zero").string(), "--count", "0"}), 2);
}

TEST_F(Cli, FeaturesCacheHitsAndFileCount) {
  const auto first = nlohmann::json::parse(slurp(dir("feat") / "features.json"));
  EXPECT_EQ(first.at("computed"), 30);
  ASSERT_EQ(run({"features", "--manifest", manifest(), "--out", dir("feat-again").string()}), 0);
  const auto second = nlohmann::json::parse(slurp(dir("feat-again") / "features.json"));
  EXPECT_EQ(second.at("cache_hits"), 30);
  EXPECT_EQ(second.at("computed"), 0);
  EXPECT_EQ(second.at("config_hash"), first.at("config_hash"));
  EXPECT_TRUE(fs::exists(dir("feat") / "config.json"));

  // 10-clip manifest in a fresh cache: two files per clip.
  auto m = es::io::load_manifest(manifest());
  m.records.resize(10);
  for (auto& r : m.records) r.path = (dir("data") / r.path).string();
  for (std::size_t i = 0; i < 3; ++i) m.records[i].split = "train";
  es::io::save_manifest(dir("ten") / "manifest.jsonl", m);
  const auto cache = dir("ten-cache");
  ASSERT_EQ(run({"features", "--manifest", (dir("ten") / "manifest.jsonl").string(), "--out", dir("ten").string(), "--cache",
                 cache.string()}),
            0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(cache))
    files += e.is_regular_file() && (e.path().extension() == ".mfcc" || e.path().extension() == ".wavelet");
  EXPECT_EQ(files, 20u);
}

TEST_F(Cli, FeaturesHonoursCacheEnvironmentVariable) {
  const auto cache = dir("env-cache");
  ::setenv("EARLYSTOP_CACHE_DIR", cache.c_str(), 1);
  const int rc = run({"features", "--manifest", manifest(), "--out", dir("feat-env").string()});
  ::unsetenv("EARLYSTOP_CACHE_DIR");
  ASSERT_EQ(rc, 0);
  EXPECT_TRUE(fs::exists(cache / "pca"));
}

TEST_F(Cli, FeaturesReportsBadInput) {
  es::write_file_atomic(dir("empty") / "manifest.jsonl", "");
  EXPECT_EQ(run({"features", "--manifest", (dir("empty") / "manifest.jsonl").string(), "--out", dir("empty-out").string()}), 2);

  auto m = es::io::load_manifest(manifest());
  for (auto& r : m.records) r.path = (dir("data") / r.path).string();
  es::write_file_atomic(dir("corrupt") / "bad.wav", "RIFF....WAVEjunk");
  m.records.push_back({(dir("corrupt") / "bad.wav").string(), "low", "test", "broken"});
  es::io::save_manifest(dir("corrupt") / "manifest.jsonl", m);
  EXPECT_EQ(run({"features", "--manifest", (dir("corrupt") / "manifest.jsonl").string(), "--out", dir("corrupt-out").string(),
                 "--cache", dir("corrupt-cache").string()}),
            2);
  const auto j = nlohmann::json::parse(slurp(dir("corrupt-out") / "features.json"));
  ASSERT_EQ(j.at("errors").size(), 1u);
  EXPECT_EQ(j.at("computed"), 30);
}

TEST_F(Cli, TrainBmcnnWritesRunDirectory) {
  for (const char* f : {"config.json", "run.json", "model.ckpt", "state.ckpt", "report.json", "confusion.csv"})
    EXPECT_TRUE(fs::exists(dir("cls") / f)) << f;
  const auto report = nlohmann::json::parse(slurp(dir("cls") / "report.json"));
  EXPECT_EQ(report.at("epochs").size(), 3u);
  const auto cfg = nlohmann::json::parse(slurp(dir("cls") / "config.json"));
  EXPECT_EQ(cfg.at("seed"), 1);
}

TEST_F(Cli, TrainBmcnnZeroEpochsReportsInitialisation) {
  ASSERT_EQ(run({"train-bmcnn", "--manifest", manifest(), "--out", dir("cls0").string(), "--epochs", "0"}), 0);
  const auto report = nlohmann::json::parse(slurp(dir("cls0") / "report.json"));
  ASSERT_EQ(report.at("epochs").size(), 1u);
  EXPECT_EQ(report.at("epochs")[0].at("epoch"), 0);
  EXPECT_EQ(report.at("best_epoch"), 0);
}

TEST_F(Cli, TrainBmcnnResumeIsBitExact) {
  ASSERT_EQ(run({"train-bmcnn", "--manifest", manifest(), "--out", dir("half").string(), "--epochs", "1", "--seed", "1"}), 0);
  ASSERT_EQ(run({"train-bmcnn", "--manifest", manifest(), "--out", dir("resumed").string(), "--epochs", "2", "--seed", "1",
                 "--resume", (dir("half") / "state.ckpt").string()}),
            0);
  EXPECT_EQ(slurp(dir("resumed") / "model.ckpt"), slurp(dir("cls") / "model.ckpt"));
  EXPECT_EQ(slurp(dir("resumed") / "state.ckpt"), slurp(dir("cls") / "state.ckpt"));
}

TEST_F(Cli, TrainBmcnnDetectsStaleCache) {
  es::io::RunConfig cfg;
  cfg.dsp.n_mels = 32;
  es::write_file_atomic(dir("stale") / "config.json", nlohmann::json(cfg).dump());
  EXPECT_EQ(run({"train-bmcnn", "--manifest", manifest(), "--out", dir("stale-out").string(), "--config",
                 (dir("stale") / "config.json").string()}),
            2);
}

TEST_F(Cli, TrainAgentSyntheticIsReproducible) {
  es::io::RunConfig cfg;
  cfg.agent.batch_size = 16;
  cfg.agent.train_every = 8;
  cfg.qnet.hidden = 16;
  cfg.qnet.embed = 8;
  cfg.qnet.heads = 2;
  cfg.synthetic_eval_episodes = 20;
  es::write_file_atomic(dir("small") / "config.json", nlohmann::json(cfg).dump());
  for (const char* out : {"agent-a", "agent-b"}) {
    ASSERT_EQ(run({"train-agent", "--synthetic", "--seed", "42", "--episodes", "20", "--config",
                   (dir("small") / "config.json").string(), "--out", dir(out).string()}),
              0);
  }
  EXPECT_TRUE(same_tree(dir("agent-a"), dir("agent-b"),
                        {"log.jsonl", "agent.ckpt", "agent.ckpt.json", "agent.ckpt.replay", "summary.json", "config.json"}));
  const auto log = lines(dir("agent-a") / "log.jsonl");
  ASSERT_EQ(log.size(), 21u);
  EXPECT_EQ(nlohmann::json::parse(log[0]).at("type"), "header");
  const auto hyper = es::dqn::AgentHyper(nlohmann::json::parse(log[0]).at("hyper").get<es::dqn::AgentHyper>());
  for (std::size_t i = 1; i < log.size(); ++i) {
    const auto e = nlohmann::json::parse(log[i]);
    EXPECT_DOUBLE_EQ(e.at("epsilon").get<double>(), es::dqn::epsilon(hyper, e.at("agent_steps").get<std::uint64_t>()));
  }
}

TEST_F(Cli, TrainAgentOnClassifier) {
  ASSERT_EQ(run({"train-agent", "--manifest", manifest(), "--classifier", classifier(), "--episodes", "4", "--out",
                 dir("agent-cls").string()}),
            0);
  EXPECT_TRUE(fs::exists(dir("agent-cls") / "agent.ckpt"));
  // A pipeline with shorter clips cannot drive a 124-frame classifier.
  es::io::RunConfig cfg;
  cfg.dsp.clip_samples = 16000;
  cfg.geometry.frames = cfg.dsp.frames();
  auto model = es::bmcnn::Classifier::from_checkpoint(es::nk::Checkpoint::load(classifier()));
  EXPECT_THROW(es::cli::check_classifier(model, cfg), es::CompatibilityError);
  es::write_file_atomic(dir("short") / "config.json", nlohmann::json(cfg).dump());
  EXPECT_EQ(run({"train-agent", "--manifest", manifest(), "--classifier", classifier(), "--episodes", "4", "--config",
                 (dir("short") / "config.json").string(), "--out", dir("agent-short").string()}),
            2);
}

TEST_F(Cli, EvalBaselineOutputs) {
  ASSERT_EQ(run({"eval", "--baseline", "fixed-length:124", "--synthetic", "--episodes", "30", "--out", dir("ev-a").string()}), 0);
  const auto s = nlohmann::json::parse(slurp(dir("ev-a") / "summary.json"));
  EXPECT_EQ(s.at("speedup").get<double>(), 1.0);
  EXPECT_EQ(s.at("policy"), "fixed@124");
  ASSERT_EQ(run({"eval", "--baseline", "fixed-length:124", "--synthetic", "--episodes", "30", "--out", dir("ev-b").string()}), 0);
  EXPECT_TRUE(same_tree(dir("ev-a"), dir("ev-b"), {"summary.json", "confusion.csv"}));

  ASSERT_EQ(run({"eval", "--baseline", "fixed-threshold:0.8", "--manifest", manifest(), "--classifier", classifier(), "--out",
                 dir("ev-c").string(), "--traces"}),
            0);
  const auto c = nlohmann::json::parse(slurp(dir("ev-c") / "summary.json"));
  const auto m = es::io::load_manifest(manifest());
  std::array<std::size_t, 3> per_class{};
  for (auto i : m.indices("test")) ++per_class[static_cast<std::size_t>(m.records[i].label_index())];
  for (std::size_t r = 0; r < 3; ++r) {
    std::size_t row = 0;
    for (const auto& v : c.at("confusion")[r]) row += v.get<std::size_t>();
    EXPECT_EQ(row, per_class[r]);
  }
  std::size_t steps = 0;
  for (const auto& t : c.at("stop_times")) steps += t.get<std::size_t>();
  EXPECT_EQ(lines(dir("ev-c") / "traces.jsonl").size(), steps);
  const auto csv = lines(dir("ev-c") / "confusion.csv");
  EXPECT_EQ(csv.size(), 4u);
}

TEST_F(Cli, EvalAgentCheckpoint) {
  ASSERT_EQ(run({"train-agent", "--synthetic", "--episodes", "3", "--out", dir("agent-tiny").string()}), 0);
  ASSERT_EQ(run({"eval", "--agent", (dir("agent-tiny") / "agent.ckpt").string(), "--synthetic", "--episodes", "5", "--out",
                 dir("ev-agent").string()}),
            0);
  EXPECT_EQ(nlohmann::json::parse(slurp(dir("ev-agent") / "summary.json")).at("episodes"), 5);
}

TEST_F(Cli, EvalWithoutTestLabelsIsRejected) {
  auto m = es::io::load_manifest(manifest());
  for (auto& r : m.records) {
    r.path = (dir("data") / r.path).string();
    if (r.split == "test") r.label.clear();
  }
  es::io::save_manifest(dir("unlabeled") / "manifest.jsonl", m);
  const auto mp = (dir("unlabeled") / "manifest.jsonl").string();
  const auto cache = dir("unlabeled-cache").string();
  ASSERT_EQ(run({"features", "--manifest", mp, "--out", dir("unlabeled-feat").string(), "--cache", cache}), 0);
  EXPECT_EQ(run({"eval", "--baseline", "fixed-length:60", "--manifest", mp, "--classifier", classifier(), "--cache", cache, "--out",
                 dir("unlabeled-eval").string()}),
            2);
}

TEST_F(Cli, ReportComparesSummaries) {
  ASSERT_EQ(run({"eval", "--baseline", "fixed-length:40", "--synthetic", "--episodes", "30", "--out", dir("rep-a").string()}), 0);
  ASSERT_EQ(run({"eval", "--baseline", "fixed-threshold:0.7", "--synthetic", "--episodes", "30", "--out", dir("rep-b").string()}), 0);
  ASSERT_EQ(run({"report", (dir("rep-a") / "summary.json").string(), (dir("rep-b") / "summary.json").string(), "--out",
                 dir("rep").string()}),
            0);
  const auto csv = lines(dir("rep") / "comparison.csv");
  ASSERT_EQ(csv.size(), 3u);
  EXPECT_EQ(csv[0], "policy,accuracy,mean_stop,speedup,episodes");
  const auto j = nlohmann::json::parse(slurp(dir("rep") / "comparison.json"));
  EXPECT_EQ(j.at("rows").size(), 2u);

  auto other = nlohmann::json::parse(slurp(dir("rep-a") / "summary.json"));
  other["t_max"] = 100;
  es::write_file_atomic(dir("rep-c") / "summary.json", other.dump());
  EXPECT_EQ(run({"report", (dir("rep-a") / "summary.json").string(), (dir("rep-c") / "summary.json").string(), "--out",
                 dir("rep-bad").string()}),
            2);
  EXPECT_EQ(run({"report", (dir("rep-a") / "summary.json").string(), "--out", dir("rep-one").string()}), 2);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run({}), 2);
  EXPECT_EQ(run({"frobnicate"}), 2);
  EXPECT_EQ(run({"eval", "--synthetic", "--baseline", "fixed-length:124"}), 2);  // no --out
  EXPECT_EQ(run({"eval", "--synthetic", "--baseline", "fixed-length:3", "--out", dir("ec").string()}), 2);
  EXPECT_EQ(run({"eval", "--synthetic", "--baseline", "sometimes:3", "--out", dir("ec").string()}), 2);
  EXPECT_EQ(run({"train-agent", "--out", dir("ec2").string()}), 2);
  es::write_file_atomic(dir("badcfg") / "config.json", "{\"reward\": {\"mode\": \"greedy\"}}");
  EXPECT_EQ(run({"eval", "--synthetic", "--baseline", "fixed-length:124", "--config", (dir("badcfg") / "config.json").string(),
                 "--out", dir("ec3").string()}),
            2);
}
