#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include "earlystop/bmcnn/evaluate.hpp"
#include "earlystop/bmcnn/model.hpp"

namespace earlystop::bmcnn {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  bool prefix_augment = true;
  double min_prefix_fraction = 0.2;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},         {"batch_size", c.batch_size},         {"learning_rate", c.learning_rate},
       {"seed", c.seed},             {"prefix_augment", c.prefix_augment}, {"min_prefix_fraction", c.min_prefix_fraction}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.seed = j.value("seed", d.seed);
  c.prefix_augment = j.value("prefix_augment", d.prefix_augment);
  c.min_prefix_fraction = j.value("min_prefix_fraction", d.min_prefix_fraction);
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

inline void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = {{"epoch", r.epoch},       {"train_loss", r.train_loss}, {"train_accuracy", r.train_accuracy},
       {"val_loss", r.val_loss}, {"val_accuracy", r.val_accuracy}};
}

inline void from_json(const nlohmann::json& j, EpochRecord& r) {
  r.epoch = j.at("epoch");
  r.train_loss = j.at("train_loss");
  r.train_accuracy = j.at("train_accuracy");
  r.val_loss = j.at("val_loss");
  r.val_accuracy = j.at("val_accuracy");
}

struct TrainReport {
  std::vector<EpochRecord> epochs;  // epoch 0 holds the metrics at initialisation
  std::size_t best_epoch = 0;
  Metrics validation;               // best checkpoint on the validation split

  nlohmann::json to_json() const {
    return {{"epochs", epochs}, {"best_epoch", best_epoch}, {"validation", to_json_value(validation)}};
  }
};

// Mini-batch Adam on softmax cross-entropy with random-prefix augmentation.
// The best validation epoch is kept; state_checkpoint() captures everything a
// resumed run needs to continue bit-identically.
template <class T>
class Trainer {
 public:
  Trainer(Model<T>& model, TrainConfig config)
      : model_(model), config_(config), opt_(model.parameters(), nk::AdamConfig{config.learning_rate}), rng_(config.seed) {
    if (config_.batch_size < 2) throw ConfigError("batch size must be at least 2 for batch normalisation");
    if (!(config_.min_prefix_fraction > 0.0 && config_.min_prefix_fraction <= 1.0)) {
      throw ConfigError("minimum prefix fraction must lie in (0, 1]");
    }
  }

  std::size_t epochs_done() const { return epoch_; }
  const std::vector<EpochRecord>& history() const { return history_; }

  // Trains until config.epochs total epochs have run. The model keeps the
  // latest parameters; best_checkpoint() holds the best validation epoch.
  // `on_epoch` fires after each completed epoch.
  TrainReport run(std::span<const LabeledClip> train, std::span<const LabeledClip> val,
                  const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    if (train.empty()) throw DataError("training split is empty");
    if (val.empty()) throw DataError("validation split is empty");
    if (history_.empty()) {
      const auto tr = evaluate(model_, train);
      const auto va = evaluate(model_, val);
      record({0, tr.loss, tr.accuracy, va.loss, va.accuracy}, on_epoch);
    }
    while (epoch_ < config_.epochs) {
      auto rec = train_epoch(train);
      const auto va = evaluate(model_, val);
      rec.val_loss = va.loss;
      rec.val_accuracy = va.accuracy;
      record(rec, on_epoch);
    }
    auto best = Model<T>::from_checkpoint(best_);
    TrainReport report;
    report.epochs = history_;
    report.best_epoch = best_epoch_;
    report.validation = evaluate(best, val);
    return report;
  }

  const nk::Checkpoint& best_checkpoint() const { return best_; }

  nk::Checkpoint state_checkpoint() {
    auto ck = model_.to_checkpoint();
    ck.kind = "bmcnn-train-state";
    nk::store_optimizer(ck, "adam", opt_, model_.parameters());
    for (const auto& a : best_.arrays()) ck.add_raw({"best/" + a.name, a.shape, a.values});
    std::ostringstream rng;
    rng << rng_;
    ck.meta["rng"] = rng.str();
    ck.meta["epoch"] = epoch_;
    ck.meta["history"] = history_;
    ck.meta["best_epoch"] = best_epoch_;
    ck.meta["config"] = config_;
    return ck;
  }

  void restore_state(const nk::Checkpoint& ck) {
    if (ck.kind != "bmcnn-train-state") throw CompatibilityError("not a classifier training-state checkpoint");
    nk::Checkpoint model_ck = ck;
    model_ck.kind = kClassifierKind;
    if (model_ck.meta.at("geometry").get<Geometry>() != model_.geometry()) {
      throw CompatibilityError("training state was produced for a different geometry");
    }
    model_ = Model<T>::from_checkpoint(model_ck);
    opt_ = nk::Adam<T>(model_.parameters(), nk::AdamConfig{config_.learning_rate});
    nk::restore_optimizer(ck, "adam", opt_, model_.parameters());
    best_ = nk::Checkpoint{};
    best_.kind = kClassifierKind;
    best_.meta = model_ck.meta;
    best_.layers = ck.layers;
    for (const auto& a : ck.arrays())
      if (a.name.starts_with("best/")) best_.add_raw({a.name.substr(5), a.shape, a.values});
    std::istringstream rng(ck.meta.at("rng").get<std::string>());
    rng >> rng_;
    epoch_ = ck.meta.at("epoch").get<std::size_t>();
    history_ = ck.meta.at("history").get<std::vector<EpochRecord>>();
    best_epoch_ = ck.meta.at("best_epoch").get<std::size_t>();
  }

 private:
  void record(const EpochRecord& rec, const std::function<void(const EpochRecord&)>& on_epoch) {
    const bool better = history_.empty() || rec.val_accuracy > best_accuracy() ||
                        (rec.val_accuracy == best_accuracy() && rec.val_loss < history_[best_epoch_].val_loss);
    history_.push_back(rec);
    if (better) {
      best_epoch_ = rec.epoch;
      best_ = model_.to_checkpoint();
    }
    if (on_epoch) on_epoch(rec);
  }

  double best_accuracy() const { return history_.at(best_epoch_).val_accuracy; }

  EpochRecord train_epoch(std::span<const LabeledClip> train) {
    const std::size_t Tn = model_.geometry().frames;
    const auto t_lo = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(config_.min_prefix_fraction * static_cast<double>(Tn) - 1e-9)));
    std::uniform_int_distribution<std::size_t> prefix_dist(t_lo, Tn);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);

    double loss_sum = 0;
    std::size_t seen = 0, correct = 0;
    const auto params = model_.parameters();
    for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
      const std::size_t n = std::min(config_.batch_size, order.size() - start);
      if (n < 2) continue;  // batch normalisation needs two samples
      std::vector<const dsp::FeatureMap*> a, b;
      std::vector<std::size_t> prefix;
      std::vector<int> labels;
      for (std::size_t i = 0; i < n; ++i) {
        const auto& c = train[order[start + i]];
        a.push_back(&c.mfcc);
        b.push_back(&c.wavelet);
        labels.push_back(c.label);
        prefix.push_back(config_.prefix_augment ? prefix_dist(rng_) : Tn);
      }
      const nk::ForwardContext ctx{nk::Mode::Train, &rng_};
      const auto logits = model_.logits(model_.prepare(a, prefix, dsp::FeatureKind::Mfcc),
                                        model_.prepare(b, prefix, dsp::FeatureKind::Wavelet), ctx);
      const auto probs = nk::softmax(logits);
      const auto y = nk::onehot_labels<T>(labels, model_.geometry().classes);
      const double loss = nk::cross_entropy(probs, y);
      opt_.zero_grad(params);
      model_.backward(nk::softmax_cross_entropy_grad(probs, y));
      opt_.step(params);

      loss_sum += loss * static_cast<double>(n);
      seen += n;
      const std::size_t C = model_.geometry().classes;
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> row(C);
        for (std::size_t c = 0; c < C; ++c) row[c] = static_cast<double>(probs[i * C + c]);
        correct += argmax_first(row) == labels[i];
      }
    }
    ++epoch_;
    EpochRecord rec;
    rec.epoch = epoch_;
    rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    rec.train_accuracy = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    return rec;
  }

  Model<T>& model_;
  TrainConfig config_;
  nk::Adam<T> opt_;
  std::mt19937_64 rng_;
  std::size_t epoch_ = 0;
  std::vector<EpochRecord> history_;
  std::size_t best_epoch_ = 0;
  nk::Checkpoint best_;
};

}  // namespace earlystop::bmcnn
