#pragma once

#include <cmath>
#include <cstdint>

namespace mhal::kernels::detail {

// Bilinear footprint of one normalized sample point, align-corners
// convention: -1 maps to pixel 0 and +1 to pixel (n - 1). Corners that
// fall outside the image are marked invalid (zero padding).
template <class T>
struct Corners {
  std::int64_t index[4];
  T weight[4];
  T dweight_dx[4];
  T dweight_dy[4];
  bool valid[4];
  T dix_dgx, diy_dgy;
};

template <class T>
inline Corners<T> bilinear_corners(T gx, T gy, std::int64_t h, std::int64_t w) {
  Corners<T> c{};
  c.dix_dgx = T(w - 1) / T(2);
  c.diy_dgy = T(h - 1) / T(2);
  const T ix = (gx + T(1)) * c.dix_dgx;
  const T iy = (gy + T(1)) * c.diy_dgy;
  const T fx = std::floor(ix), fy = std::floor(iy);
  const auto x0 = static_cast<std::int64_t>(fx);
  const auto y0 = static_cast<std::int64_t>(fy);
  const T ax = ix - fx, ay = iy - fy;
  const std::int64_t xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const std::int64_t ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const T wx[4] = {T(1) - ax, ax, T(1) - ax, ax};
  const T wy[4] = {T(1) - ay, T(1) - ay, ay, ay};
  const T dwx[4] = {T(-1), T(1), T(-1), T(1)};
  const T dwy[4] = {T(-1), T(-1), T(1), T(1)};
  for (int k = 0; k < 4; ++k) {
    c.valid[k] = xs[k] >= 0 && xs[k] < w && ys[k] >= 0 && ys[k] < h;
    c.index[k] = c.valid[k] ? ys[k] * w + xs[k] : 0;
    c.weight[k] = wx[k] * wy[k];
    c.dweight_dx[k] = dwx[k] * wy[k];
    c.dweight_dy[k] = wx[k] * dwy[k];
  }
  return c;
}

// Half-pixel source coordinate for 2x upsampling, clamped at the edges.
template <class T>
struct UpSrc {
  std::int64_t i0, i1;
  T frac;
};

template <class T>
inline UpSrc<T> upsample_source(std::int64_t dst, std::int64_t in) {
  T s = (T(dst) + T(0.5)) / T(2) - T(0.5);
  if (s < T(0)) s = T(0);
  auto i0 = static_cast<std::int64_t>(std::floor(s));
  if (i0 > in - 1) i0 = in - 1;
  const auto i1 = i0 + 1 < in ? i0 + 1 : in - 1;
  return {i0, i1, s - T(i0)};
}

}  // namespace mhal::kernels::detail
