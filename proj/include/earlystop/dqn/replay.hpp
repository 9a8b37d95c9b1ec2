#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <random>
#include <vector>

#include "earlystop/common/encoding.hpp"
#include "earlystop/common/error.hpp"
#include "earlystop/stopenv/state.hpp"

namespace earlystop::dqn {

struct Transition {
  stopenv::StopState state;
  int action = 0;
  double reward = 0.0;
  stopenv::StopState next_state;  // zeros when done
  bool done = false;

  friend bool operator==(const Transition&, const Transition&) = default;
};

// Fixed-capacity ring; the oldest transition is overwritten first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 100000) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("replay capacity must be positive");
    data_.reserve(std::min<std::size_t>(capacity, 4096));
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  void push(const Transition& t) {
    if (data_.size() < capacity_) {
      data_.push_back(t);
    } else {
      data_[head_] = t;
      head_ = (head_ + 1) % capacity_;
    }
  }

  // i = 0 is the oldest stored transition.
  const Transition& at(std::size_t i) const {
    if (i >= data_.size()) throw DomainError("replay index out of range");
    return data_[(head_ + i) % data_.size()];
  }

  // `batch` distinct transitions drawn uniformly (Floyd's algorithm).
  std::vector<Transition> sample(std::size_t batch, std::mt19937_64& rng) const {
    if (batch == 0) throw ConfigError("sample batch must be positive");
    if (data_.size() < batch) {
      throw StateError("replay buffer holds " + std::to_string(data_.size()) + " transitions, batch needs " +
                       std::to_string(batch));
    }
    const std::size_t n = data_.size();
    std::vector<std::size_t> picked;
    picked.reserve(batch);
    for (std::size_t j = n - batch; j < n; ++j) {
      const std::size_t r = std::uniform_int_distribution<std::size_t>(0, j)(rng);
      picked.push_back(std::find(picked.begin(), picked.end(), r) == picked.end() ? r : j);
    }
    std::vector<Transition> out;
    out.reserve(batch);
    for (auto i : picked) out.push_back(at(i));
    return out;
  }

  // Exact binary snapshot (doubles, base64) for resumable training.
  nlohmann::json to_json() const {
    std::vector<double> flat;
    flat.reserve(data_.size() * kRecord);
    for (std::size_t i = 0; i < data_.size(); ++i) {
      const auto& t = at(i);
      flat.insert(flat.end(), t.state.v.begin(), t.state.v.end());
      flat.push_back(t.action);
      flat.push_back(t.reward);
      flat.insert(flat.end(), t.next_state.v.begin(), t.next_state.v.end());
      flat.push_back(t.done ? 1.0 : 0.0);
    }
    std::vector<std::uint8_t> bytes(flat.size() * sizeof(double));
    if (!flat.empty()) std::memcpy(bytes.data(), flat.data(), bytes.size());
    return {{"capacity", capacity_}, {"size", data_.size()}, {"data", base64_encode(bytes)}};
  }

  static ReplayBuffer from_json(const nlohmann::json& j) {
    ReplayBuffer b(j.at("capacity").get<std::size_t>());
    const auto n = j.at("size").get<std::size_t>();
    const auto bytes = base64_decode(j.at("data").get<std::string>());
    if (bytes.size() != n * kRecord * sizeof(double) || n > b.capacity_) throw DataError("corrupt replay snapshot");
    std::vector<double> flat(n * kRecord);
    if (n) std::memcpy(flat.data(), bytes.data(), bytes.size());
    constexpr std::size_t D = stopenv::kStateDim;
    for (std::size_t i = 0; i < n; ++i) {
      const double* r = &flat[i * kRecord];
      Transition t;
      std::copy(r, r + D, t.state.v.begin());
      t.action = static_cast<int>(r[D]);
      t.reward = r[D + 1];
      std::copy(r + D + 2, r + 2 * D + 2, t.next_state.v.begin());
      t.done = r[2 * D + 2] != 0.0;
      b.push(t);
    }
    return b;
  }

 private:
  static constexpr std::size_t kRecord = 2 * stopenv::kStateDim + 3;

  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<Transition> data_;
};

}  // namespace earlystop::dqn
