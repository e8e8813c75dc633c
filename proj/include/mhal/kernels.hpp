#pragma once

// Raw compute kernels behind the differentiable ops.
//
// Two implementations share every signature:
//   kernels::ref  straightforward serial loops, kept as the testing reference
//   kernels::par  OpenMP-parallel versions (im2col + GEMM for convolution)
// The ops layer calls kernels::par. Backward kernels accumulate (+=) into
// their gradient outputs; an empty span means "not needed".
//
// Parallel kernels only split work over disjoint outputs and reduce partial
// sums in a fixed order, so results do not depend on the thread count.

#include <cstdint>
#include <span>

namespace mhal::kernels {

struct ConvGeom {
  std::int64_t batch, in_ch, out_ch;
  std::int64_t in_h, in_w;
  std::int64_t k_h, k_w;
  std::int64_t stride, pad;
  std::int64_t out_h, out_w;
};

// Fills out_h/out_w; throws ShapeError when the kernel does not fit.
ConvGeom make_conv_geom(std::int64_t batch, std::int64_t in_ch, std::int64_t in_h, std::int64_t in_w,
                        std::int64_t out_ch, std::int64_t k_h, std::int64_t k_w, std::int64_t stride,
                        std::int64_t pad);

struct SampleGeom {
  std::int64_t batch, channels;
  std::int64_t in_h, in_w;
  std::int64_t out_h, out_w;
};

struct PlaneGeom {
  std::int64_t batch, channels, h, w;
};

#define MHAL_KERNEL_DECLS(T)                                                                          \
  void conv2d_forward(const ConvGeom& g, std::span<const T> x, std::span<const T> w,                  \
                      std::span<const T> b, std::span<T> y);                                          \
  void conv2d_backward(const ConvGeom& g, std::span<const T> x, std::span<const T> w,                 \
                       std::span<const T> gy, std::span<T> gx, std::span<T> gw, std::span<T> gb);     \
  void grid_sample_forward(const SampleGeom& g, std::span<const T> x, std::span<const T> grid,        \
                           std::span<T> y);                                                           \
  void grid_sample_backward(const SampleGeom& g, std::span<const T> x, std::span<const T> grid,       \
                            std::span<const T> gy, std::span<T> gx, std::span<T> ggrid);              \
  void max_pool2x2_forward(const PlaneGeom& g, std::span<const T> x, std::span<T> y,                  \
                           std::span<std::int64_t> argmax);                                           \
  void max_pool2x2_backward(const PlaneGeom& g, std::span<const T> gy,                                \
                            std::span<const std::int64_t> argmax, std::span<T> gx);                  \
  void upsample2x_forward(const PlaneGeom& g, std::span<const T> x, std::span<T> y);                  \
  void upsample2x_backward(const PlaneGeom& g, std::span<const T> gy, std::span<T> gx);               \
  void instance_norm_forward(const PlaneGeom& g, T eps, std::span<const T> x, std::span<T> y,         \
                             std::span<T> inv_std);                                                   \
  void instance_norm_backward(const PlaneGeom& g, std::span<const T> y, std::span<const T> inv_std,   \
                              std::span<const T> gy, std::span<T> gx);

namespace ref {
MHAL_KERNEL_DECLS(float)
MHAL_KERNEL_DECLS(double)
}  // namespace ref

namespace par {
MHAL_KERNEL_DECLS(float)
MHAL_KERNEL_DECLS(double)
}  // namespace par

#undef MHAL_KERNEL_DECLS

// Number of OpenMP threads the par kernels will use (1 without OpenMP).
int max_threads();
void set_threads(int n);

}  // namespace mhal::kernels
