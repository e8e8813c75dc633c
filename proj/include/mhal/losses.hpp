#pragma once

// Training objectives and scalar schedules.

#include <cstdint>

#include "mhal/labels.hpp"
#include "mhal/nets.hpp"
#include "mhal/ops.hpp"

namespace mhal {

struct LossWeights {
  double lambda_trans = 10.0;
  double lambda_con = 10.0;
};

struct ScheduleConfig {
  double ramp_max = 10.0;
  double ramp_sharpness = 5.0;
  int horizon = 150;
  int warmup_epochs = 30;
  double peak_lr = 0.005;
  double inner_lr = 0.001;

  void validate() const;
};

// ramp_max * exp(-sharpness * (1 - t/T)^2), t clamped to [0, T].
double ramp_weight(double t, const ScheduleConfig& cfg);
// Linear 0 -> peak_lr over warmup_epochs, then peak_lr.
double lr_schedule(double epoch, const ScheduleConfig& cfg);

template <class T>
struct SegLossTerms {
  Tensor<T> cross_entropy;
  Tensor<T> dice_loss;  // 1 - mean foreground soft Dice
  Tensor<T> total;
};

template <class T>
SegLossTerms<T> seg_loss_terms(const Tensor<T>& logits, const LabelMap& labels);
template <class T>
Tensor<T> seg_loss(const Tensor<T>& logits, const LabelMap& labels);

template <class T>
Tensor<T> trans_loss(const Tensor<T>& moved, const Tensor<T>& fixed);

struct NoiseConfig {
  double sigma = 0.05;
  std::uint64_t seed = 0;
};

// Additive Gaussian perturbation, a pure function of (shape, sigma, seed).
template <class T>
Tensor<T> gaussian_noise(const Shape& shape, double sigma, std::uint64_t seed);

template <class T>
struct ConsistencyTerms {
  Tensor<T> teacher_probs;  // warp(teacher softmax(x + xi'))
  Tensor<T> student_probs;  // student softmax(warp(x) + xi)
  Tensor<T> mask;           // 1 where the warp sampled fully inside the image
  Tensor<T> loss;
};

// Hallucination consistency: masked MSE between the warped teacher
// prediction and the student's prediction on the warped input. The teacher
// branch carries no gradient.
template <class T>
ConsistencyTerms<T> consistency_terms(const UNet<T>& net, const ParamSet<T>& student, const ParamSet<T>& teacher,
                                      const SpatialTransform<T>& transform, const Tensor<T>& x,
                                      const NoiseConfig& noise);
template <class T>
Tensor<T> consistency_loss(const UNet<T>& net, const ParamSet<T>& student, const ParamSet<T>& teacher,
                           const SpatialTransform<T>& transform, const Tensor<T>& x, const NoiseConfig& noise);
// Plain noise consistency: no warp on either branch, nothing masked.
template <class T>
ConsistencyTerms<T> consistency_terms(const UNet<T>& net, const ParamSet<T>& student, const ParamSet<T>& teacher,
                                      const Tensor<T>& x, const NoiseConfig& noise);

}  // namespace mhal
