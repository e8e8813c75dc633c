#include "mhal/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace mhal {

namespace {

template <class T>
void check_grads(const ParamSet<T>& params, const std::vector<std::vector<T>>& grads) {
  if (grads.size() != params.size()) throw ShapeError("optimizer: gradient count does not match parameters");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (static_cast<std::int64_t>(grads[i].size()) != params[i].numel()) {
      throw ShapeError("optimizer: gradient size mismatch for " + params.name(i));
    }
  }
}

}  // namespace

template <class T>
Adam<T>::Adam(const ParamSet<T>& layout, AdamConfig cfg) : cfg_(cfg) {
  for (std::size_t i = 0; i < layout.size(); ++i) {
    m_.emplace_back(static_cast<std::size_t>(layout[i].numel()), T(0));
    v_.emplace_back(static_cast<std::size_t>(layout[i].numel()), T(0));
  }
}

template <class T>
void Adam<T>::step(ParamSet<T>& params, const std::vector<std::vector<T>>& grads, double lr) {
  check_grads(params, grads);
  if (m_.size() != params.size()) throw ShapeError("Adam: state does not match parameters");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
  const T step = static_cast<T>(lr / c1);
  const T root_c2 = static_cast<T>(std::sqrt(c2));
  const T eps = static_cast<T>(cfg_.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      p[j] -= step * m[j] / (std::sqrt(v[j]) / root_c2 + eps);
    }
  }
}

template <class T>
ParamSet<T> sgd_step(const ParamSet<T>& params, const std::vector<std::vector<T>>& grads, double lr) {
  check_grads(params, grads);
  auto out = params.clone();
  const T a = static_cast<T>(lr);
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto p = out[i].mutable_data();
    for (std::size_t j = 0; j < p.size(); ++j) p[j] -= a * grads[i][j];
  }
  return out;
}

template class Adam<float>;
template class Adam<double>;
template ParamSet<float> sgd_step(const ParamSet<float>&, const std::vector<std::vector<float>>&, double);
template ParamSet<double> sgd_step(const ParamSet<double>&, const std::vector<std::vector<double>>&, double);

}  // namespace mhal
