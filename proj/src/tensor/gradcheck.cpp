#include "mhal/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mhal {

template <class T>
GradCheckReport<T> grad_check_report(const ScalarFn<T>& fn, const std::vector<Tensor<T>>& inputs, T eps) {
  if (!(eps > T(0))) throw std::invalid_argument("grad_check: eps must be positive");

  std::vector<Tensor<T>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& in : inputs) leaves.push_back(in.detach().set_requires_grad(true));

  Tape<T> tape;
  {
    TapeScope<T> scope(tape);
    const auto loss = fn(leaves);
    if (!std::isfinite(loss.item())) throw NumericError("grad_check: non-finite loss");
    tape.backward(loss);
  }

  auto eval = [&](const std::vector<Tensor<T>>& xs) {
    NoGradScope<T> off;
    const T v = fn(xs).item();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss under perturbation");
    return v;
  };

  GradCheckReport<T> rep;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    std::vector<Tensor<T>> probe;
    for (const auto& l : leaves) probe.push_back(l.detach());
    auto x = probe[i].mutable_data();
    const auto analytic = leaves[i].grad();
    for (std::size_t k = 0; k < x.size(); ++k) {
      const T orig = x[k];
      x[k] = orig + eps;
      const T up = eval(probe);
      x[k] = orig - eps;
      const T down = eval(probe);
      x[k] = orig;
      const T num = (up - down) / (T(2) * eps);
      const T ana = analytic.empty() ? T(0) : analytic[k];
      const T err = std::abs(ana - num) / std::max(T(1), std::abs(ana));
      if (err > rep.max_rel_error || (i == 0 && k == 0)) {
        rep = {err, i, k, ana, num};
      }
    }
  }
  return rep;
}

template GradCheckReport<float> grad_check_report(const ScalarFn<float>&, const std::vector<Tensor<float>>&, float);
template GradCheckReport<double> grad_check_report(const ScalarFn<double>&, const std::vector<Tensor<double>>&,
                                                   double);

}  // namespace mhal
