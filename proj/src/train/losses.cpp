#include "mhal/losses.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace mhal {

void ScheduleConfig::validate() const {
  if (horizon <= 0) throw std::invalid_argument("schedule: horizon must be > 0");
  if (warmup_epochs < 0 || warmup_epochs > horizon) {
    throw std::invalid_argument("schedule: warmup_epochs must lie in [0, horizon]");
  }
  if (!(ramp_max >= 0) || !(peak_lr >= 0) || !(inner_lr >= 0) || !std::isfinite(ramp_sharpness)) {
    throw std::invalid_argument("schedule: ramp_max, peak_lr, inner_lr must be finite and >= 0");
  }
}

double ramp_weight(double t, const ScheduleConfig& cfg) {
  const double T = cfg.horizon;
  const double u = 1.0 - std::clamp(t, 0.0, T) / T;
  return cfg.ramp_max * std::exp(-cfg.ramp_sharpness * u * u);
}

double lr_schedule(double epoch, const ScheduleConfig& cfg) {
  if (cfg.warmup_epochs <= 0 || epoch >= cfg.warmup_epochs) return cfg.peak_lr;
  return cfg.peak_lr * std::max(epoch, 0.0) / cfg.warmup_epochs;
}

template <class T>
SegLossTerms<T> seg_loss_terms(const Tensor<T>& logits, const LabelMap& labels) {
  auto ce = cross_entropy(logits, labels);
  const auto classes = static_cast<int>(logits.dim(1));
  auto dice = soft_dice(softmax_channels(logits), one_hot<T>(labels, classes), 1);
  auto dice_loss = sub(Tensor<T>::full({1}, T(1)), dice);
  auto total = add(ce, dice_loss);
  return {ce, dice_loss, total};
}

template <class T>
Tensor<T> seg_loss(const Tensor<T>& logits, const LabelMap& labels) {
  return seg_loss_terms(logits, labels).total;
}

template <class T>
Tensor<T> trans_loss(const Tensor<T>& moved, const Tensor<T>& fixed) {
  if (moved.shape() != fixed.shape()) {
    throw ShapeError("trans_loss: moved " + to_string(moved.shape()) + " vs fixed " + to_string(fixed.shape()));
  }
  return mse(moved, fixed);
}

template <class T>
Tensor<T> gaussian_noise(const Shape& shape, double sigma, std::uint64_t seed) {
  std::vector<T> v(static_cast<std::size_t>(numel(shape)), T(0));
  if (sigma > 0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sigma);
    for (auto& x : v) x = static_cast<T>(n(rng));
  }
  return Tensor<T>::from(shape, std::move(v));
}

template <class T>
ConsistencyTerms<T> consistency_terms(const UNet<T>& net, const ParamSet<T>& student, const ParamSet<T>& teacher,
                                      const SpatialTransform<T>& transform, const Tensor<T>& x,
                                      const NoiseConfig& noise) {
  if (!student.same_layout(teacher)) throw ShapeError("consistency_loss: teacher/student layout mismatch");
  const auto B = x.dim(0), H = x.dim(2), W = x.dim(3);
  const auto C = static_cast<std::int64_t>(net.config().classes);
  Tensor<T> teacher_probs, mask;
  {
    NoGradScope<T> off;
    auto xt = add(x, gaussian_noise<T>(x.shape(), noise.sigma, noise.seed * 2 + 1));
    teacher_probs = warp(softmax_channels(net.forward(teacher, xt)), transform);
    auto cover = warp(Tensor<T>::full({B, 1, H, W}, T(1)), transform);
    std::vector<T> m(static_cast<std::size_t>(B * C * H * W));
    const auto plane = H * W;
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t i = 0; i < plane; ++i)
          m[(b * C + c) * plane + i] = cover[b * plane + i] >= T(1) - T(1e-6) ? T(1) : T(0);
    mask = Tensor<T>::from({B, C, H, W}, std::move(m));
  }
  auto xs = add(warp(x, transform), gaussian_noise<T>(x.shape(), noise.sigma, noise.seed * 2 + 2));
  auto student_probs = softmax_channels(net.forward(student, xs));
  auto loss = masked_mse(student_probs, teacher_probs, mask);
  return {teacher_probs, student_probs, mask, loss};
}

template <class T>
ConsistencyTerms<T> consistency_terms(const UNet<T>& net, const ParamSet<T>& student, const ParamSet<T>& teacher,
                                      const Tensor<T>& x, const NoiseConfig& noise) {
  if (!student.same_layout(teacher)) throw ShapeError("consistency_loss: teacher/student layout mismatch");
  Tensor<T> teacher_probs;
  {
    NoGradScope<T> off;
    auto xt = add(x, gaussian_noise<T>(x.shape(), noise.sigma, noise.seed * 2 + 1));
    teacher_probs = softmax_channels(net.forward(teacher, xt));
  }
  auto xs = add(x, gaussian_noise<T>(x.shape(), noise.sigma, noise.seed * 2 + 2));
  auto student_probs = softmax_channels(net.forward(student, xs));
  auto mask = Tensor<T>::full(student_probs.shape(), T(1));
  auto loss = masked_mse(student_probs, teacher_probs, mask);
  return {teacher_probs, student_probs, mask, loss};
}

template <class T>
Tensor<T> consistency_loss(const UNet<T>& net, const ParamSet<T>& student, const ParamSet<T>& teacher,
                           const SpatialTransform<T>& transform, const Tensor<T>& x, const NoiseConfig& noise) {
  return consistency_terms(net, student, teacher, transform, x, noise).loss;
}

#define MHAL_LOSS_INST(T)                                                                                        \
  template SegLossTerms<T> seg_loss_terms(const Tensor<T>&, const LabelMap&);                                    \
  template Tensor<T> seg_loss(const Tensor<T>&, const LabelMap&);                                                \
  template Tensor<T> trans_loss(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> gaussian_noise<T>(const Shape&, double, std::uint64_t);                                     \
  template ConsistencyTerms<T> consistency_terms(const UNet<T>&, const ParamSet<T>&, const ParamSet<T>&,         \
                                                 const SpatialTransform<T>&, const Tensor<T>&, const NoiseConfig&); \
  template ConsistencyTerms<T> consistency_terms(const UNet<T>&, const ParamSet<T>&, const ParamSet<T>&,         \
                                                 const Tensor<T>&, const NoiseConfig&);                          \
  template Tensor<T> consistency_loss(const UNet<T>&, const ParamSet<T>&, const ParamSet<T>&,                    \
                                      const SpatialTransform<T>&, const Tensor<T>&, const NoiseConfig&);

MHAL_LOSS_INST(float)
MHAL_LOSS_INST(double)

}  // namespace mhal
