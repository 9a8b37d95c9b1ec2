#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "earlystop/numkit/tensor.hpp"

namespace earlystop::nk {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Moment tensors are kept in parameter order.
template <class T>
class Adam {
 public:
  Adam() = default;
  Adam(const ParamRefs<T>& params, AdamConfig config) : config_(config) {
    for (const auto* p : params) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  void zero_grad(const ParamRefs<T>& params) const {
    for (auto* p : params) p->zero_grad();
  }

  void step(const ParamRefs<T>& params) {
    if (params.size() != m_.size()) throw StateError("optimizer was built for a different parameter list");
    for (const auto* p : params) {
      for (std::size_t i = 0; i < p->grad.size(); ++i) {
        if (!std::isfinite(static_cast<double>(p->grad[i]))) {
          throw NumericError("non-finite gradient in parameter '" + p->name + "' at flat index " +
                             std::to_string(i));
        }
      }
    }
    ++step_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = *params[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        const double mi = b1 * m[i] + (1 - b1) * g;
        const double vi = b2 * v[i] + (1 - b2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double update = config_.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + config_.epsilon);
        p.value[i] = static_cast<T>(p.value[i] - update);
      }
    }
  }

  std::int64_t steps() const { return step_; }
  void set_steps(std::int64_t s) { step_ = s; }
  const AdamConfig& config() const { return config_; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }

 private:
  AdamConfig config_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  std::int64_t step_ = 0;
};

}  // namespace earlystop::nk
