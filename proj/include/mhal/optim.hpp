#pragma once

#include <cstdint>
#include <vector>

#include "mhal/params.hpp"

namespace mhal {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moments persist across calls.
template <class T>
class Adam {
 public:
  Adam() = default;
  Adam(const ParamSet<T>& layout, AdamConfig cfg = {});

  // params -= lr * mhat / (sqrt(vhat) + eps); grads are per tensor in table order.
  void step(ParamSet<T>& params, const std::vector<std::vector<T>>& grads, double lr);

  std::int64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  std::vector<std::vector<T>>& first_moment() { return m_; }
  std::vector<std::vector<T>>& second_moment() { return v_; }
  const std::vector<std::vector<T>>& first_moment() const { return m_; }
  const std::vector<std::vector<T>>& second_moment() const { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  AdamConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
  std::int64_t t_ = 0;
};

// params -= lr * grads (used for the inner-loop update).
template <class T>
ParamSet<T> sgd_step(const ParamSet<T>& params, const std::vector<std::vector<T>>& grads, double lr);

}  // namespace mhal
