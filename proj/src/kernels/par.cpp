#include <algorithm>
#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "grid_math.hpp"
#include "mhal/kernels.hpp"

namespace mhal::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(n < 1 ? 1 : n);
#else
  (void)n;
#endif
}

namespace par {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using CMap = Eigen::Map<const RowMat<T>>;
template <class T>
using MMap = Eigen::Map<RowMat<T>>;

// cols[(ci*kh + ky)*kw + kx, oy*out_w + ox] = x[ci, oy*s + ky - p, ox*s + kx - p]
// Output columns [lo, hi) whose input column ox * stride + kx - pad is in range.
inline std::pair<std::int64_t, std::int64_t> valid_cols(const ConvGeom& g, std::int64_t kx) {
  const auto off = kx - g.pad;
  std::int64_t lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  std::int64_t hi = g.in_w - 1 - off < 0 ? 0 : (g.in_w - 1 - off) / g.stride + 1;
  hi = std::min(hi, g.out_w);
  return {std::min(lo, hi), hi};
}

template <class T>
void im2col(const ConvGeom& g, const T* x, T* cols) {
  const auto plane = g.out_h * g.out_w;
  for (std::int64_t ci = 0; ci < g.in_ch; ++ci)
    for (std::int64_t ky = 0; ky < g.k_h; ++ky)
      for (std::int64_t kx = 0; kx < g.k_w; ++kx) {
        T* row = cols + ((ci * g.k_h + ky) * g.k_w + kx) * plane;
        const T* src = x + ci * g.in_h * g.in_w;
        const auto [lo, hi] = valid_cols(g, kx);
        const auto off = kx - g.pad;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = oy * g.stride + ky - g.pad;
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.in_h) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* s = src + iy * g.in_w + off;
          std::fill(dst, dst + lo, T(0));
          if (g.stride == 1) {
            std::copy(s + lo, s + hi, dst + lo);
          } else {
            for (std::int64_t ox = lo; ox < hi; ++ox) dst[ox] = s[ox * g.stride];
          }
          std::fill(dst + hi, dst + g.out_w, T(0));
        }
      }
}

template <class T>
void col2im_add(const ConvGeom& g, const T* cols, T* gx) {
  const auto plane = g.out_h * g.out_w;
  for (std::int64_t ci = 0; ci < g.in_ch; ++ci)
    for (std::int64_t ky = 0; ky < g.k_h; ++ky)
      for (std::int64_t kx = 0; kx < g.k_w; ++kx) {
        const T* row = cols + ((ci * g.k_h + ky) * g.k_w + kx) * plane;
        T* dst = gx + ci * g.in_h * g.in_w;
        const auto [lo, hi] = valid_cols(g, kx);
        const auto off = kx - g.pad;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.in_h) continue;
          T* d = dst + iy * g.in_w + off;
          const T* r = row + oy * g.out_w;
          for (std::int64_t ox = lo; ox < hi; ++ox) d[ox * g.stride] += r[ox];
        }
      }
}

template <class T>
void conv_fwd(const ConvGeom& g, std::span<const T> x, std::span<const T> w, std::span<const T> b,
              std::span<T> y) {
  const auto K = g.in_ch * g.k_h * g.k_w;
  const auto P = g.out_h * g.out_w;
  const CMap<T> W(w.data(), g.out_ch, K);
#pragma omp parallel
  {
    std::vector<T> cols(static_cast<std::size_t>(K * P));
#pragma omp for schedule(static)
    for (std::int64_t n = 0; n < g.batch; ++n) {
      im2col(g, x.data() + n * g.in_ch * g.in_h * g.in_w, cols.data());
      MMap<T> Y(y.data() + n * g.out_ch * P, g.out_ch, P);
      Y.noalias() = W * CMap<T>(cols.data(), K, P);
      if (!b.empty())
        for (std::int64_t co = 0; co < g.out_ch; ++co) Y.row(co).array() += b[co];
    }
  }
}

template <class T>
void conv_bwd(const ConvGeom& g, std::span<const T> x, std::span<const T> w, std::span<const T> gy,
              std::span<T> gx, std::span<T> gw, std::span<T> gb) {
  const auto K = g.in_ch * g.k_h * g.k_w;
  const auto P = g.out_h * g.out_w;
  const CMap<T> W(w.data(), g.out_ch, K);
  // Per-sample weight gradients, reduced below in sample order.
  std::vector<T> gw_part(gw.empty() ? 0 : static_cast<std::size_t>(g.batch * g.out_ch * K));
#pragma omp parallel
  {
    std::vector<T> cols(static_cast<std::size_t>(K * P));
#pragma omp for schedule(static)
    for (std::int64_t n = 0; n < g.batch; ++n) {
      const CMap<T> GY(gy.data() + n * g.out_ch * P, g.out_ch, P);
      if (!gw.empty()) {
        im2col(g, x.data() + n * g.in_ch * g.in_h * g.in_w, cols.data());
        MMap<T>(gw_part.data() + n * g.out_ch * K, g.out_ch, K).noalias() =
            GY * CMap<T>(cols.data(), K, P).transpose();
      }
      if (!gx.empty()) {
        MMap<T>(cols.data(), K, P).noalias() = W.transpose() * GY;
        col2im_add(g, cols.data(), gx.data() + n * g.in_ch * g.in_h * g.in_w);
      }
    }
  }
  if (!gw.empty()) {
    const auto sz = g.out_ch * K;
    for (std::int64_t n = 0; n < g.batch; ++n)
      for (std::int64_t i = 0; i < sz; ++i) gw[i] += gw_part[n * sz + i];
  }
  if (!gb.empty()) {
    for (std::int64_t n = 0; n < g.batch; ++n)
      for (std::int64_t co = 0; co < g.out_ch; ++co) {
        const T* row = gy.data() + (n * g.out_ch + co) * P;
        T s = 0;
        for (std::int64_t p = 0; p < P; ++p) s += row[p];
        gb[co] += s;
      }
  }
}

template <class T>
void gs_fwd(const SampleGeom& g, std::span<const T> x, std::span<const T> grid, std::span<T> y) {
  const auto in_plane = g.in_h * g.in_w;
  const auto out_plane = g.out_h * g.out_w;
#pragma omp parallel for schedule(static) collapse(2)
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t o = 0; o < out_plane; ++o) {
      const auto gi = (n * out_plane + o) * 2;
      const auto c = detail::bilinear_corners(grid[gi], grid[gi + 1], g.in_h, g.in_w);
      for (std::int64_t ch = 0; ch < g.channels; ++ch) {
        const T* src = x.data() + (n * g.channels + ch) * in_plane;
        T acc = 0;
        for (int k = 0; k < 4; ++k)
          if (c.valid[k]) acc += c.weight[k] * src[c.index[k]];
        y[(n * g.channels + ch) * out_plane + o] = acc;
      }
    }
}

template <class T>
void gs_bwd(const SampleGeom& g, std::span<const T> x, std::span<const T> grid, std::span<const T> gy,
            std::span<T> gx, std::span<T> ggrid) {
  const auto in_plane = g.in_h * g.in_w;
  const auto out_plane = g.out_h * g.out_w;
  // Input-gradient scatter stays inside one sample, so samples are the unit of work.
#pragma omp parallel for schedule(static)
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t o = 0; o < out_plane; ++o) {
      const auto gi = (n * out_plane + o) * 2;
      const auto c = detail::bilinear_corners(grid[gi], grid[gi + 1], g.in_h, g.in_w);
      T d_gx = 0, d_gy = 0;
      for (std::int64_t ch = 0; ch < g.channels; ++ch) {
        const auto base = (n * g.channels + ch) * in_plane;
        const T d = gy[(n * g.channels + ch) * out_plane + o];
        for (int k = 0; k < 4; ++k) {
          if (!c.valid[k]) continue;
          if (!gx.empty()) gx[base + c.index[k]] += d * c.weight[k];
          const T v = x[base + c.index[k]];
          d_gx += d * v * c.dweight_dx[k];
          d_gy += d * v * c.dweight_dy[k];
        }
      }
      if (!ggrid.empty()) {
        ggrid[gi] += d_gx * c.dix_dgx;
        ggrid[gi + 1] += d_gy * c.diy_dgy;
      }
    }
}

template <class T>
void pool_fwd(const PlaneGeom& g, std::span<const T> x, std::span<T> y, std::span<std::int64_t> arg) {
  const auto oh = g.h / 2, ow = g.w / 2;
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < g.batch * g.channels; ++p)
    for (std::int64_t oy = 0; oy < oh; ++oy)
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const auto i00 = (p * g.h + 2 * oy) * g.w + 2 * ox;
        const std::int64_t cand[4] = {i00, i00 + 1, i00 + g.w, i00 + g.w + 1};
        std::int64_t best = cand[0];
        for (int k = 1; k < 4; ++k)
          if (x[cand[k]] > x[best]) best = cand[k];
        const auto o = (p * oh + oy) * ow + ox;
        y[o] = x[best];
        arg[o] = best;
      }
}

template <class T>
void pool_bwd(const PlaneGeom& g, std::span<const T> gy, std::span<const std::int64_t> arg, std::span<T> gx) {
  const auto per = (g.h / 2) * (g.w / 2);
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < g.batch * g.channels; ++p)
    for (std::int64_t o = p * per; o < (p + 1) * per; ++o) gx[arg[o]] += gy[o];
}

template <class T>
void up_fwd(const PlaneGeom& g, std::span<const T> x, std::span<T> y) {
  const auto oh = 2 * g.h, ow = 2 * g.w;
  std::vector<detail::UpSrc<T>> xs(static_cast<std::size_t>(ow));
  for (std::int64_t ox = 0; ox < ow; ++ox) xs[ox] = detail::upsample_source<T>(ox, g.w);
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < g.batch * g.channels; ++p) {
    const T* src = x.data() + p * g.h * g.w;
    T* dst = y.data() + p * oh * ow;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      const auto sy = detail::upsample_source<T>(oy, g.h);
      const T* r0 = src + sy.i0 * g.w;
      const T* r1 = src + sy.i1 * g.w;
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const auto& sx = xs[ox];
        dst[oy * ow + ox] = (1 - sy.frac) * ((1 - sx.frac) * r0[sx.i0] + sx.frac * r0[sx.i1]) +
                            sy.frac * ((1 - sx.frac) * r1[sx.i0] + sx.frac * r1[sx.i1]);
      }
    }
  }
}

template <class T>
void up_bwd(const PlaneGeom& g, std::span<const T> gy, std::span<T> gx) {
  const auto oh = 2 * g.h, ow = 2 * g.w;
  std::vector<detail::UpSrc<T>> xs(static_cast<std::size_t>(ow));
  for (std::int64_t ox = 0; ox < ow; ++ox) xs[ox] = detail::upsample_source<T>(ox, g.w);
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < g.batch * g.channels; ++p) {
    const T* src = gy.data() + p * oh * ow;
    T* dst = gx.data() + p * g.h * g.w;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      const auto sy = detail::upsample_source<T>(oy, g.h);
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const auto& sx = xs[ox];
        const T d = src[oy * ow + ox];
        dst[sy.i0 * g.w + sx.i0] += d * (1 - sy.frac) * (1 - sx.frac);
        dst[sy.i0 * g.w + sx.i1] += d * (1 - sy.frac) * sx.frac;
        dst[sy.i1 * g.w + sx.i0] += d * sy.frac * (1 - sx.frac);
        dst[sy.i1 * g.w + sx.i1] += d * sy.frac * sx.frac;
      }
    }
  }
}

template <class T>
void in_fwd(const PlaneGeom& g, T eps, std::span<const T> x, std::span<T> y, std::span<T> inv_std) {
  const auto hw = g.h * g.w;
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < g.batch * g.channels; ++p) {
    const T* src = x.data() + p * hw;
    T mean = 0;
    for (std::int64_t i = 0; i < hw; ++i) mean += src[i];
    mean /= T(hw);
    T var = 0;
    for (std::int64_t i = 0; i < hw; ++i) var += (src[i] - mean) * (src[i] - mean);
    var /= T(hw);
    const T r = T(1) / std::sqrt(var + eps);
    inv_std[p] = r;
    T* dst = y.data() + p * hw;
    for (std::int64_t i = 0; i < hw; ++i) dst[i] = (src[i] - mean) * r;
  }
}

template <class T>
void in_bwd(const PlaneGeom& g, std::span<const T> y, std::span<const T> inv_std, std::span<const T> gy,
            std::span<T> gx) {
  const auto hw = g.h * g.w;
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < g.batch * g.channels; ++p) {
    const T* yy = y.data() + p * hw;
    const T* dy = gy.data() + p * hw;
    T sum_g = 0, sum_gy = 0;
    for (std::int64_t i = 0; i < hw; ++i) {
      sum_g += dy[i];
      sum_gy += dy[i] * yy[i];
    }
    const T r = inv_std[p] / T(hw);
    T* dx = gx.data() + p * hw;
    for (std::int64_t i = 0; i < hw; ++i) dx[i] += r * (T(hw) * dy[i] - sum_g - yy[i] * sum_gy);
  }
}

}  // namespace

#define MHAL_PAR_DEFS(T)                                                                                        \
  void conv2d_forward(const ConvGeom& g, std::span<const T> x, std::span<const T> w, std::span<const T> b,      \
                      std::span<T> y) { conv_fwd(g, x, w, b, y); }                                              \
  void conv2d_backward(const ConvGeom& g, std::span<const T> x, std::span<const T> w, std::span<const T> gy,    \
                       std::span<T> gx, std::span<T> gw, std::span<T> gb) { conv_bwd(g, x, w, gy, gx, gw, gb); } \
  void grid_sample_forward(const SampleGeom& g, std::span<const T> x, std::span<const T> grid, std::span<T> y) { \
    gs_fwd(g, x, grid, y);                                                                                      \
  }                                                                                                             \
  void grid_sample_backward(const SampleGeom& g, std::span<const T> x, std::span<const T> grid,                 \
                            std::span<const T> gy, std::span<T> gx, std::span<T> ggrid) {                       \
    gs_bwd(g, x, grid, gy, gx, ggrid);                                                                          \
  }                                                                                                             \
  void max_pool2x2_forward(const PlaneGeom& g, std::span<const T> x, std::span<T> y,                            \
                           std::span<std::int64_t> argmax) { pool_fwd(g, x, y, argmax); }                       \
  void max_pool2x2_backward(const PlaneGeom& g, std::span<const T> gy, std::span<const std::int64_t> argmax,    \
                            std::span<T> gx) { pool_bwd(g, gy, argmax, gx); }                                   \
  void upsample2x_forward(const PlaneGeom& g, std::span<const T> x, std::span<T> y) { up_fwd(g, x, y); }        \
  void upsample2x_backward(const PlaneGeom& g, std::span<const T> gy, std::span<T> gx) { up_bwd(g, gy, gx); }   \
  void instance_norm_forward(const PlaneGeom& g, T eps, std::span<const T> x, std::span<T> y,                   \
                             std::span<T> inv_std) { in_fwd(g, eps, x, y, inv_std); }                           \
  void instance_norm_backward(const PlaneGeom& g, std::span<const T> y, std::span<const T> inv_std,             \
                              std::span<const T> gy, std::span<T> gx) { in_bwd(g, y, inv_std, gy, gx); }

MHAL_PAR_DEFS(float)
MHAL_PAR_DEFS(double)
#undef MHAL_PAR_DEFS

}  // namespace par
}  // namespace mhal::kernels
