#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "earlystop/bmcnn/model.hpp"

namespace earlystop::bmcnn {

// One labelled clip with both feature maps.
struct LabeledClip {
  std::string id;
  dsp::FeatureMap mfcc;
  dsp::FeatureMap wavelet;
  int label = 0;
};

// Rows of `confusion` are true classes, columns predictions.
struct Metrics {
  std::size_t total = 0;
  double accuracy = 0.0;
  double loss = std::nan("");
  std::vector<std::vector<std::size_t>> confusion;
  std::vector<std::optional<double>> recall;  // empty when a class is absent
};

inline Metrics summarize(std::span<const int> labels, std::span<const int> predictions, std::size_t classes) {
  if (labels.size() != predictions.size()) throw DimensionError("labels and predictions differ in count");
  Metrics m;
  m.total = labels.size();
  m.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]), p = static_cast<std::size_t>(predictions[i]);
    if (y >= classes || p >= classes) throw LabelError("class id out of range");
    ++m.confusion[y][p];
    correct += y == p;
  }
  m.accuracy = m.total ? static_cast<double>(correct) / static_cast<double>(m.total) : 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t row = 0;
    for (auto v : m.confusion[c]) row += v;
    m.recall.push_back(row ? std::optional<double>(static_cast<double>(m.confusion[c][c]) / static_cast<double>(row))
                           : std::nullopt);
  }
  return m;
}

inline nlohmann::json to_json_value(const Metrics& m) {
  nlohmann::json recall = nlohmann::json::object();
  for (std::size_t c = 0; c < m.recall.size(); ++c) {
    const auto& name = c < class_names().size() ? class_names()[c] : std::to_string(c);
    recall[name] = m.recall[c] ? nlohmann::json(*m.recall[c]) : nlohmann::json(nullptr);
  }
  nlohmann::json j = {{"total", m.total}, {"accuracy", m.accuracy}, {"recall", recall}, {"confusion", m.confusion}};
  j["loss"] = std::isfinite(m.loss) ? nlohmann::json(m.loss) : nlohmann::json(nullptr);
  return j;
}

inline std::string confusion_csv(const Metrics& m) {
  std::ostringstream out;
  out << "true\\pred";
  for (std::size_t c = 0; c < m.confusion.size(); ++c) out << ',' << class_names().at(c);
  out << '\n';
  for (std::size_t r = 0; r < m.confusion.size(); ++r) {
    out << class_names().at(r);
    for (auto v : m.confusion[r]) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

template <class T>
Metrics evaluate(Model<T>& model, std::span<const LabeledClip> clips, std::size_t prefix = 0) {
  if (clips.empty()) throw DataError("cannot evaluate on an empty split");
  const std::size_t t = prefix ? prefix : model.geometry().frames;
  std::vector<const dsp::FeatureMap*> a, b;
  std::vector<std::size_t> p(clips.size(), t);
  std::vector<int> labels;
  for (const auto& c : clips) {
    a.push_back(&c.mfcc);
    b.push_back(&c.wavelet);
    labels.push_back(c.label);
  }
  const auto probs = model.predict(a, b, p);
  std::vector<int> preds;
  double loss = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    preds.push_back(probs[i].argmax);
    loss -= std::log(std::max(probs[i].probs[static_cast<std::size_t>(labels[i])], nk::kLogClamp));
  }
  auto m = summarize(labels, preds, model.geometry().classes);
  m.loss = loss / static_cast<double>(clips.size());
  return m;
}

struct SweepRow {
  double fraction = 1.0;
  std::size_t frames = 0;
  double seconds = 0.0;
  Metrics metrics;
};

// Accuracy and per-class recall at fixed fractions of the full clip.
template <class T>
std::vector<SweepRow> prefix_sweep(Model<T>& model, std::span<const LabeledClip> clips, std::span<const double> fractions,
                                   double frame_hop) {
  std::vector<SweepRow> rows;
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw DomainError("prefix fraction must lie in (0, 1]");
    const auto t = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(f * static_cast<double>(model.geometry().frames) - 1e-9)));
    rows.push_back({f, t, static_cast<double>(t) * frame_hop, evaluate(model, clips, t)});
  }
  return rows;
}

inline std::string sweep_csv(std::span<const SweepRow> rows) {
  std::ostringstream out;
  out << "fraction,frames,seconds";
  for (const auto& n : class_names()) out << ",recall_" << n;
  out << ",accuracy\n";
  for (const auto& r : rows) {
    out << r.fraction << ',' << r.frames << ',' << r.seconds;
    for (const auto& rec : r.metrics.recall) {
      out << ',';
      if (rec) out << *rec;
    }
    out << ',' << r.metrics.accuracy << '\n';
  }
  return out.str();
}

}  // namespace earlystop::bmcnn
