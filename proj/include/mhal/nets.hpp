#pragma once

// Segmenter (2D U-Net) and hallucinator (spatial transformer over a
// moving/fixed pair), plus the warping helpers shared by both.

#include <cstdint>
#include <string>
#include <vector>

#include "mhal/labels.hpp"
#include "mhal/ops.hpp"
#include "mhal/params.hpp"

namespace mhal {

struct UNetConfig {
  int depth = 3;
  int base_channels = 16;
  int classes = 5;
  int in_channels = 1;
  double leaky_slope = 0.01;
};

template <class T>
class UNet {
 public:
  explicit UNet(UNetConfig cfg);

  const UNetConfig& config() const { return cfg_; }
  // He-normal conv weights, zero biases; a pure function of (config, seed).
  ParamSet<T> init(std::uint64_t seed) const;
  // images [B, in_channels, H, W] -> logits [B, classes, H, W]; H and W must
  // be divisible by 2^depth.
  Tensor<T> forward(const ParamSet<T>& params, const Tensor<T>& images) const;
  // Number of scalar parameters for this configuration.
  std::int64_t parameter_count() const;

 private:
  struct ConvSpec {
    std::string name;
    std::int64_t in, out, k;
  };
  std::vector<ConvSpec> layout() const;
  Tensor<T> block(const ParamSet<T>& p, const std::string& prefix, const Tensor<T>& x) const;

  UNetConfig cfg_;
};

// Recovers the U-Net shape from a stored parameter set.
UNetConfig infer_unet_config(const ParamSet<float>& params);

enum class TransformKind { affine, dense };

struct HallucinatorConfig {
  TransformKind kind = TransformKind::affine;
  std::vector<int> channels{8, 16, 16};  // stride-2 conv stages over the 2-channel pair
  int hidden = 32;                       // affine head hidden width
  std::int64_t height = 64, width = 64;
  double leaky_slope = 0.01;
  double smoothness_weight = 0.01;  // dense fields only
  // Each affine entry (or displacement component) is identity + max_offset * tanh(head).
  double max_offset = 0.5;
};

// affine: params [B, 2, 3] in normalized coordinates.
// dense:  params [B, 2, H, W] displacement in normalized units.
template <class T>
struct SpatialTransform {
  TransformKind kind = TransformKind::affine;
  Tensor<T> params;

  std::int64_t batch() const { return params.dim(0); }
  Tensor<T> to_grid(std::int64_t h, std::int64_t w) const;

  static SpatialTransform identity(std::int64_t batch);
  static SpatialTransform translation(const std::vector<T>& dx, const std::vector<T>& dy);
  static SpatialTransform rotation(const std::vector<T>& radians);
  // Differentiable row selection (repeats allowed).
  SpatialTransform select(const std::vector<std::int64_t>& rows) const;
};

enum class Interp { bilinear, nearest };

template <class T>
Tensor<T> warp(const Tensor<T>& image, const SpatialTransform<T>& transform, Interp interp = Interp::bilinear);
// Nearest-neighbour label warp; samples from outside the image become background.
template <class T>
LabelMap warp_labels(const LabelMap& labels, const SpatialTransform<T>& transform);
// One-hot maps stay one-hot: nearest sampling with background fill.
template <class T>
Tensor<T> warp_one_hot(const Tensor<T>& one_hot_map, const SpatialTransform<T>& transform);

template <class T>
struct Hallucination {
  SpatialTransform<T> transform;
  Tensor<T> moved;
};

template <class T>
class Hallucinator {
 public:
  explicit Hallucinator(HallucinatorConfig cfg);

  const HallucinatorConfig& config() const { return cfg_; }
  // Conv weights He-normal; the head starts at zero so a fresh hallucinator
  // emits the identity transform.
  ParamSet<T> init(std::uint64_t seed) const;
  SpatialTransform<T> transform(const ParamSet<T>& params, const Tensor<T>& moving, const Tensor<T>& fixed) const;
  Hallucination<T> hallucinate(const ParamSet<T>& params, const Tensor<T>& moving, const Tensor<T>& fixed) const;
  // Regularizer on the transform (smoothness for dense fields, zero for affine).
  Tensor<T> regularizer(const SpatialTransform<T>& t) const;

 private:
  HallucinatorConfig cfg_;
};

}  // namespace mhal
