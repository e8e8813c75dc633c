#pragma once

#include <functional>
#include <vector>

#include "mhal/tensor.hpp"

namespace mhal {

template <class T>
using ScalarFn = std::function<Tensor<T>(const std::vector<Tensor<T>>&)>;

template <class T>
struct GradCheckReport {
  T max_rel_error = 0;
  std::size_t worst_input = 0;
  std::size_t worst_element = 0;
  T analytic = 0;
  T numeric = 0;
};

// Compares tape gradients of `fn` against central differences with step
// `eps`. Error per element is |analytic - numeric| / max(1, |analytic|).
// Throws NumericError if any evaluation is non-finite.
template <class T>
GradCheckReport<T> grad_check_report(const ScalarFn<T>& fn, const std::vector<Tensor<T>>& inputs, T eps);

template <class T>
T grad_check(const ScalarFn<T>& fn, const std::vector<Tensor<T>>& inputs, T eps) {
  return grad_check_report(fn, inputs, eps).max_rel_error;
}

}  // namespace mhal
