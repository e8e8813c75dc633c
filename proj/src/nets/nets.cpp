#include "mhal/nets.hpp"

#include <cmath>
#include <random>

namespace mhal {

namespace {

template <class T>
Tensor<T> he_normal(Shape shape, std::int64_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<T> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>::from(std::move(shape), std::move(v));
}

}  // namespace

// ---------------------------------------------------------------- UNet

template <class T>
UNet<T>::UNet(UNetConfig cfg) : cfg_(cfg) {
  if (cfg_.depth < 1 || cfg_.base_channels < 1 || cfg_.classes < 2 || cfg_.in_channels < 1) {
    throw std::invalid_argument("UNet: depth, base_channels, in_channels must be >= 1 and classes >= 2");
  }
}

template <class T>
std::vector<typename UNet<T>::ConvSpec> UNet<T>::layout() const {
  std::vector<ConvSpec> out;
  const std::int64_t b = cfg_.base_channels;
  std::int64_t in = cfg_.in_channels;
  for (int l = 0; l < cfg_.depth; ++l) {
    const auto c = b << l;
    out.push_back({"enc" + std::to_string(l) + ".conv1", in, c, 3});
    out.push_back({"enc" + std::to_string(l) + ".conv2", c, c, 3});
    in = c;
  }
  const auto cb = b << cfg_.depth;
  out.push_back({"bottleneck.conv1", in, cb, 3});
  out.push_back({"bottleneck.conv2", cb, cb, 3});
  in = cb;
  for (int l = cfg_.depth - 1; l >= 0; --l) {
    const auto c = b << l;
    out.push_back({"dec" + std::to_string(l) + ".conv1", in + c, c, 3});
    out.push_back({"dec" + std::to_string(l) + ".conv2", c, c, 3});
    in = c;
  }
  out.push_back({"head", in, cfg_.classes, 1});
  return out;
}

template <class T>
ParamSet<T> UNet<T>::init(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  ParamSet<T> p;
  for (const auto& s : layout()) {
    p.add(s.name + ".w", he_normal<T>({s.out, s.in, s.k, s.k}, s.in * s.k * s.k, rng));
    p.add(s.name + ".b", Tensor<T>::zeros({s.out}));
  }
  return p;
}

template <class T>
std::int64_t UNet<T>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& s : layout()) n += s.out * s.in * s.k * s.k + s.out;
  return n;
}

template <class T>
Tensor<T> UNet<T>::block(const ParamSet<T>& p, const std::string& prefix, const Tensor<T>& x) const {
  const T slope = static_cast<T>(cfg_.leaky_slope);
  auto y = conv2d(x, p.at(prefix + ".conv1.w"), p.at(prefix + ".conv1.b"), 1, 1);
  y = leaky_relu(instance_norm(y), slope);
  y = conv2d(y, p.at(prefix + ".conv2.w"), p.at(prefix + ".conv2.b"), 1, 1);
  return leaky_relu(instance_norm(y), slope);
}

template <class T>
Tensor<T> UNet<T>::forward(const ParamSet<T>& params, const Tensor<T>& images) const {
  if (images.rank() != 4 || images.dim(1) != cfg_.in_channels) {
    throw ShapeError("segment: images must be [B," + std::to_string(cfg_.in_channels) + ",H,W], got " +
                     to_string(images.shape()));
  }
  const std::int64_t div = std::int64_t{1} << cfg_.depth;
  if (images.dim(2) % div != 0 || images.dim(3) % div != 0) {
    throw ShapeError("segment: H and W must be divisible by 2^depth = " + std::to_string(div) + ", got " +
                     to_string(images.shape()));
  }
  std::vector<Tensor<T>> skips;
  Tensor<T> x = images;
  for (int l = 0; l < cfg_.depth; ++l) {
    x = block(params, "enc" + std::to_string(l), x);
    skips.push_back(x);
    x = max_pool2d(x);
  }
  x = block(params, "bottleneck", x);
  for (int l = cfg_.depth - 1; l >= 0; --l) {
    x = concat_channels(upsample_bilinear2x(x), skips[l]);
    x = block(params, "dec" + std::to_string(l), x);
  }
  return conv2d(x, params.at("head.w"), params.at("head.b"));
}

// ---------------------------------------------------------- transforms

template <class T>
Tensor<T> SpatialTransform<T>::to_grid(std::int64_t h, std::int64_t w) const {
  if (kind == TransformKind::affine) return affine_grid(params, h, w);
  if (params.dim(2) != h || params.dim(3) != w) {
    throw ShapeError("dense transform of size " + to_string(params.shape()) + " applied to " + std::to_string(h) +
                     "x" + std::to_string(w) + " image");
  }
  return displacement_grid(params);
}

template <class T>
SpatialTransform<T> SpatialTransform<T>::identity(std::int64_t batch) {
  std::vector<T> v;
  for (std::int64_t b = 0; b < batch; ++b) v.insert(v.end(), {T(1), T(0), T(0), T(0), T(1), T(0)});
  return {TransformKind::affine, Tensor<T>::from({batch, 2, 3}, std::move(v))};
}

template <class T>
SpatialTransform<T> SpatialTransform<T>::translation(const std::vector<T>& dx, const std::vector<T>& dy) {
  if (dx.size() != dy.size() || dx.empty()) throw std::invalid_argument("translation: dx/dy size mismatch");
  std::vector<T> v;
  for (std::size_t b = 0; b < dx.size(); ++b) v.insert(v.end(), {T(1), T(0), dx[b], T(0), T(1), dy[b]});
  return {TransformKind::affine, Tensor<T>::from({static_cast<std::int64_t>(dx.size()), 2, 3}, std::move(v))};
}

template <class T>
SpatialTransform<T> SpatialTransform<T>::rotation(const std::vector<T>& radians) {
  if (radians.empty()) throw std::invalid_argument("rotation: empty batch");
  std::vector<T> v;
  for (T a : radians) {
    const T c = std::cos(a), s = std::sin(a);
    v.insert(v.end(), {c, -s, T(0), s, c, T(0)});
  }
  return {TransformKind::affine, Tensor<T>::from({static_cast<std::int64_t>(radians.size()), 2, 3}, std::move(v))};
}

template <class T>
SpatialTransform<T> SpatialTransform<T>::select(const std::vector<std::int64_t>& rows) const {
  return {kind, gather_batch(params, rows)};
}

template <class T>
Tensor<T> warp(const Tensor<T>& image, const SpatialTransform<T>& transform, Interp interp) {
  if (image.rank() != 4 || image.dim(0) != transform.batch()) {
    throw ShapeError("warp: image " + to_string(image.shape()) + " vs transform batch " +
                     std::to_string(transform.batch()));
  }
  const auto grid = transform.to_grid(image.dim(2), image.dim(3));
  if (interp == Interp::bilinear) return grid_sample(image, grid);
  return grid_sample_nearest(image, grid);
}

template <class T>
LabelMap warp_labels(const LabelMap& labels, const SpatialTransform<T>& transform) {
  if (labels.batch != transform.batch()) throw ShapeError("warp_labels: batch mismatch");
  NoGradScope<T> off;
  return sample_labels_nearest(labels, transform.to_grid(labels.h, labels.w), 0);
}

template <class T>
Tensor<T> warp_one_hot(const Tensor<T>& one_hot_map, const SpatialTransform<T>& transform) {
  return one_hot<T>(warp_labels(argmax_channels(one_hot_map), transform), static_cast<int>(one_hot_map.dim(1)));
}

// -------------------------------------------------------- hallucinator

template <class T>
Hallucinator<T>::Hallucinator(HallucinatorConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.channels.empty()) throw std::invalid_argument("Hallucinator: need at least one conv stage");
  if (!(cfg_.max_offset > 0)) throw std::invalid_argument("Hallucinator: max_offset must be positive");
  const std::int64_t div = std::int64_t{1} << cfg_.channels.size();
  if (cfg_.height % div != 0 || cfg_.width % div != 0) {
    throw std::invalid_argument("Hallucinator: image size must be divisible by 2^stages = " + std::to_string(div));
  }
}

template <class T>
ParamSet<T> Hallucinator<T>::init(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  ParamSet<T> p;
  std::int64_t in = 2;
  for (std::size_t i = 0; i < cfg_.channels.size(); ++i) {
    const std::int64_t c = cfg_.channels[i];
    p.add("loc" + std::to_string(i) + ".w", he_normal<T>({c, in, 3, 3}, in * 9, rng));
    p.add("loc" + std::to_string(i) + ".b", Tensor<T>::zeros({c}));
    in = c;
  }
  const auto s = static_cast<std::int64_t>(cfg_.channels.size());
  const auto h = cfg_.height >> s, w = cfg_.width >> s;
  if (cfg_.kind == TransformKind::affine) {
    const auto features = in * h * w;
    p.add("fc.w", he_normal<T>({cfg_.hidden, features}, features, rng));
    p.add("fc.b", Tensor<T>::zeros({cfg_.hidden}));
    p.add("head.w", Tensor<T>::zeros({6, cfg_.hidden}));
    p.add("head.b", Tensor<T>::zeros({6}));
  } else {
    p.add("head.w", Tensor<T>::zeros({2, in, 3, 3}));
    p.add("head.b", Tensor<T>::zeros({2}));
  }
  return p;
}

template <class T>
SpatialTransform<T> Hallucinator<T>::transform(const ParamSet<T>& params, const Tensor<T>& moving,
                                               const Tensor<T>& fixed) const {
  if (moving.shape() != fixed.shape()) {
    throw ShapeError("hallucinate: moving " + to_string(moving.shape()) + " vs fixed " + to_string(fixed.shape()));
  }
  if (moving.rank() != 4 || moving.dim(1) != 1 || moving.dim(2) != cfg_.height || moving.dim(3) != cfg_.width) {
    throw ShapeError("hallucinate: expected [B,1," + std::to_string(cfg_.height) + "," + std::to_string(cfg_.width) +
                     "], got " + to_string(moving.shape()));
  }
  const T slope = static_cast<T>(cfg_.leaky_slope);
  const T bound = static_cast<T>(cfg_.max_offset);
  auto x = concat_channels(moving, fixed);
  for (std::size_t i = 0; i < cfg_.channels.size(); ++i) {
    const auto n = "loc" + std::to_string(i);
    x = leaky_relu(conv2d(x, params.at(n + ".w"), params.at(n + ".b"), 2, 1), slope);
  }
  const auto B = moving.dim(0);
  if (cfg_.kind == TransformKind::affine) {
    auto f = reshape(x, {B, x.numel() / B});
    f = leaky_relu(linear(f, params.at("fc.w"), params.at("fc.b")), slope);
    auto offset = scale(mhal::tanh(linear(f, params.at("head.w"), params.at("head.b"))), bound);
    std::vector<T> eye;
    for (std::int64_t b = 0; b < B; ++b) eye.insert(eye.end(), {T(1), T(0), T(0), T(0), T(1), T(0)});
    return {TransformKind::affine, reshape(add(offset, Tensor<T>::from({B, 6}, eye)), {B, 2, 3})};
  }
  auto field = scale(mhal::tanh(conv2d(x, params.at("head.w"), params.at("head.b"), 1, 1)), bound);
  for (std::size_t i = 0; i < cfg_.channels.size(); ++i) field = upsample_bilinear2x(field);
  return {TransformKind::dense, field};
}

template <class T>
Hallucination<T> Hallucinator<T>::hallucinate(const ParamSet<T>& params, const Tensor<T>& moving,
                                              const Tensor<T>& fixed) const {
  auto t = transform(params, moving, fixed);
  auto moved = warp(moving, t, Interp::bilinear);
  return {std::move(t), std::move(moved)};
}

template <class T>
Tensor<T> Hallucinator<T>::regularizer(const SpatialTransform<T>& t) const {
  if (t.kind == TransformKind::dense) {
    return scale(smoothness_penalty(t.params), static_cast<T>(cfg_.smoothness_weight));
  }
  return Tensor<T>::zeros({1});
}

UNetConfig infer_unet_config(const ParamSet<float>& params) {
  if (!params.contains("enc0.conv1.w") || !params.contains("head.w")) {
    throw ShapeError("infer_unet_config: not a U-Net parameter set");
  }
  UNetConfig cfg;
  cfg.depth = 0;
  while (params.contains("enc" + std::to_string(cfg.depth) + ".conv1.w")) ++cfg.depth;
  const auto& first = params.at("enc0.conv1.w");
  cfg.base_channels = static_cast<int>(first.dim(0));
  cfg.in_channels = static_cast<int>(first.dim(1));
  cfg.classes = static_cast<int>(params.at("head.w").dim(0));
  UNet<float> probe(cfg);
  if (!probe.init(0).same_layout(params)) throw ShapeError("infer_unet_config: parameter layout does not match a U-Net");
  return cfg;
}

template class UNet<float>;
template class UNet<double>;
template class Hallucinator<float>;
template class Hallucinator<double>;
template struct SpatialTransform<float>;
template struct SpatialTransform<double>;
template Tensor<float> warp(const Tensor<float>&, const SpatialTransform<float>&, Interp);
template Tensor<double> warp(const Tensor<double>&, const SpatialTransform<double>&, Interp);
template LabelMap warp_labels(const LabelMap&, const SpatialTransform<float>&);
template LabelMap warp_labels(const LabelMap&, const SpatialTransform<double>&);
template Tensor<float> warp_one_hot(const Tensor<float>&, const SpatialTransform<float>&);
template Tensor<double> warp_one_hot(const Tensor<double>&, const SpatialTransform<double>&);

}  // namespace mhal
