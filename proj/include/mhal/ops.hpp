#pragma once

// Differentiable primitives. All image tensors are NCHW; sampling grids are
// [B, H, W, 2] holding normalized (x, y) in [-1, 1] with the align-corners
// convention (-1 is the first pixel center, +1 the last).

#include <cstdint>
#include <vector>

#include "mhal/labels.hpp"
#include "mhal/tensor.hpp"

namespace mhal {

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::int64_t stride = 1, std::int64_t padding = 0);

// Bilinear sampling with zero padding outside the image.
template <class T>
Tensor<T> grid_sample(const Tensor<T>& input, const Tensor<T>& grid);

template <class T>
Tensor<T> relu(const Tensor<T>& x);
template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope);
template <class T>
Tensor<T> tanh(const Tensor<T>& x);
// 2x2 window, stride 2; ties go to the first element in scan order.
template <class T>
Tensor<T> max_pool2d(const Tensor<T>& x);
template <class T>
Tensor<T> upsample_bilinear2x(const Tensor<T>& x);
// Per-sample, per-channel normalization without affine parameters.
template <class T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps = T(1e-5));
template <class T>
Tensor<T> softmax_channels(const Tensor<T>& x);

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> concat_batch(const Tensor<T>& a, const Tensor<T>& b);
// Rows of x along dim 0, in the given order (repeats allowed).
template <class T>
Tensor<T> gather_batch(const Tensor<T>& x, const std::vector<std::int64_t>& rows);
template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <class T>
Tensor<T> sum(const Tensor<T>& x);
template <class T>
Tensor<T> mean(const Tensor<T>& x);
// Mean over all elements of (a - b)^2.
template <class T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b);
// sum(mask * (a - b)^2) / sum(mask); mask is a constant weight. Zero when the mask is empty.
template <class T>
Tensor<T> masked_mse(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& mask);
// Mean over pixels of -log softmax(logits)[label].
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const LabelMap& labels);
// Mean over classes c >= first_class of (2 sum(p g) + eps) / (sum p + sum g + eps),
// pooled over the batch.
template <class T>
Tensor<T> soft_dice(const Tensor<T>& probs, const Tensor<T>& one_hot, int first_class = 1, T eps = T(1e-5));

// x [B, F], weight [O, F], bias [O] -> [B, O]
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// theta [B, 2, 3] -> grid [B, H, W, 2]
template <class T>
Tensor<T> affine_grid(const Tensor<T>& theta, std::int64_t h, std::int64_t w);
// field [B, 2, H, W] in normalized units -> identity grid + field, channels last
template <class T>
Tensor<T> displacement_grid(const Tensor<T>& field);
// Mean squared forward difference of the field along x plus the same along y.
template <class T>
Tensor<T> smoothness_penalty(const Tensor<T>& field);

// Constants (never on the tape).
template <class T>
Tensor<T> identity_grid(std::int64_t batch, std::int64_t h, std::int64_t w);
template <class T>
Tensor<T> one_hot(const LabelMap& labels, int classes);
template <class T>
LabelMap argmax_channels(const Tensor<T>& scores);
// Nearest-neighbour sampling; out-of-image points become `fill`.
template <class T>
Tensor<T> grid_sample_nearest(const Tensor<T>& input, const Tensor<T>& grid, T fill = T(0));
template <class T>
LabelMap sample_labels_nearest(const LabelMap& labels, const Tensor<T>& grid, std::uint8_t fill = 0);

}  // namespace mhal
