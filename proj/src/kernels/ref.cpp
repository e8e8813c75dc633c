// Serial reference kernels. Direct loops, no blocking, no im2col: the
// point is to be obviously correct so the parallel kernels can be checked
// against them.

#include <cmath>
#include <limits>

#include "grid_math.hpp"
#include "mhal/kernels.hpp"
#include "mhal/tensor.hpp"

namespace mhal::kernels {

ConvGeom make_conv_geom(std::int64_t batch, std::int64_t in_ch, std::int64_t in_h, std::int64_t in_w,
                        std::int64_t out_ch, std::int64_t k_h, std::int64_t k_w, std::int64_t stride,
                        std::int64_t pad) {
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1, got " + std::to_string(stride));
  if (pad < 0) throw ShapeError("conv2d: padding must be >= 0, got " + std::to_string(pad));
  const auto ph = in_h + 2 * pad;
  const auto pw = in_w + 2 * pad;
  if (k_h > ph || k_w > pw) {
    throw ShapeError("conv2d: kernel " + std::to_string(k_h) + "x" + std::to_string(k_w) +
                     " does not fit padded input " + std::to_string(ph) + "x" + std::to_string(pw));
  }
  ConvGeom g{batch, in_ch, out_ch, in_h, in_w, k_h, k_w, stride, pad, 0, 0};
  g.out_h = (ph - k_h) / stride + 1;
  g.out_w = (pw - k_w) / stride + 1;
  return g;
}

namespace ref {
namespace {

template <class T>
void conv_fwd(const ConvGeom& g, std::span<const T> x, std::span<const T> w, std::span<const T> b,
              std::span<T> y) {
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t co = 0; co < g.out_ch; ++co)
      for (std::int64_t oy = 0; oy < g.out_h; ++oy)
        for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
          T acc = b.empty() ? T(0) : b[co];
          for (std::int64_t ci = 0; ci < g.in_ch; ++ci)
            for (std::int64_t ky = 0; ky < g.k_h; ++ky) {
              const auto iy = oy * g.stride + ky - g.pad;
              if (iy < 0 || iy >= g.in_h) continue;
              for (std::int64_t kx = 0; kx < g.k_w; ++kx) {
                const auto ix = ox * g.stride + kx - g.pad;
                if (ix < 0 || ix >= g.in_w) continue;
                acc += x[((n * g.in_ch + ci) * g.in_h + iy) * g.in_w + ix] *
                       w[((co * g.in_ch + ci) * g.k_h + ky) * g.k_w + kx];
              }
            }
          y[((n * g.out_ch + co) * g.out_h + oy) * g.out_w + ox] = acc;
        }
}

template <class T>
void conv_bwd(const ConvGeom& g, std::span<const T> x, std::span<const T> w, std::span<const T> gy,
              std::span<T> gx, std::span<T> gw, std::span<T> gb) {
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t co = 0; co < g.out_ch; ++co)
      for (std::int64_t oy = 0; oy < g.out_h; ++oy)
        for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
          const T d = gy[((n * g.out_ch + co) * g.out_h + oy) * g.out_w + ox];
          if (!gb.empty()) gb[co] += d;
          for (std::int64_t ci = 0; ci < g.in_ch; ++ci)
            for (std::int64_t ky = 0; ky < g.k_h; ++ky) {
              const auto iy = oy * g.stride + ky - g.pad;
              if (iy < 0 || iy >= g.in_h) continue;
              for (std::int64_t kx = 0; kx < g.k_w; ++kx) {
                const auto ix = ox * g.stride + kx - g.pad;
                if (ix < 0 || ix >= g.in_w) continue;
                const auto xi = ((n * g.in_ch + ci) * g.in_h + iy) * g.in_w + ix;
                const auto wi = ((co * g.in_ch + ci) * g.k_h + ky) * g.k_w + kx;
                if (!gw.empty()) gw[wi] += d * x[xi];
                if (!gx.empty()) gx[xi] += d * w[wi];
              }
            }
        }
}

template <class T>
void gs_fwd(const SampleGeom& g, std::span<const T> x, std::span<const T> grid, std::span<T> y) {
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t oy = 0; oy < g.out_h; ++oy)
      for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
        const auto gi = ((n * g.out_h + oy) * g.out_w + ox) * 2;
        const auto c = detail::bilinear_corners(grid[gi], grid[gi + 1], g.in_h, g.in_w);
        for (std::int64_t ch = 0; ch < g.channels; ++ch) {
          const auto plane = (n * g.channels + ch) * g.in_h * g.in_w;
          T acc = 0;
          for (int k = 0; k < 4; ++k)
            if (c.valid[k]) acc += c.weight[k] * x[plane + c.index[k]];
          y[((n * g.channels + ch) * g.out_h + oy) * g.out_w + ox] = acc;
        }
      }
}

template <class T>
void gs_bwd(const SampleGeom& g, std::span<const T> x, std::span<const T> grid, std::span<const T> gy,
            std::span<T> gx, std::span<T> ggrid) {
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t oy = 0; oy < g.out_h; ++oy)
      for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
        const auto gi = ((n * g.out_h + oy) * g.out_w + ox) * 2;
        const auto c = detail::bilinear_corners(grid[gi], grid[gi + 1], g.in_h, g.in_w);
        T d_gx = 0, d_gy = 0;
        for (std::int64_t ch = 0; ch < g.channels; ++ch) {
          const auto plane = (n * g.channels + ch) * g.in_h * g.in_w;
          const T d = gy[((n * g.channels + ch) * g.out_h + oy) * g.out_w + ox];
          for (int k = 0; k < 4; ++k) {
            if (!c.valid[k]) continue;
            if (!gx.empty()) gx[plane + c.index[k]] += d * c.weight[k];
            const T v = x[plane + c.index[k]];
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
  for (std::int64_t p = 0; p < g.batch * g.channels; ++p)
    for (std::int64_t oy = 0; oy < oh; ++oy)
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        std::int64_t best_i = -1;
        for (std::int64_t dy = 0; dy < 2; ++dy)
          for (std::int64_t dx = 0; dx < 2; ++dx) {
            const auto i = (p * g.h + 2 * oy + dy) * g.w + 2 * ox + dx;
            if (best_i < 0 || x[i] > best) {
              best = x[i];
              best_i = i;
            }
          }
        const auto o = (p * oh + oy) * ow + ox;
        y[o] = best;
        arg[o] = best_i;
      }
}

template <class T>
void pool_bwd(const PlaneGeom& g, std::span<const T> gy, std::span<const std::int64_t> arg, std::span<T> gx) {
  const auto n = g.batch * g.channels * (g.h / 2) * (g.w / 2);
  for (std::int64_t o = 0; o < n; ++o) gx[arg[o]] += gy[o];
}

template <class T>
void up_fwd(const PlaneGeom& g, std::span<const T> x, std::span<T> y) {
  const auto oh = 2 * g.h, ow = 2 * g.w;
  for (std::int64_t p = 0; p < g.batch * g.channels; ++p)
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      const auto sy = detail::upsample_source<T>(oy, g.h);
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const auto sx = detail::upsample_source<T>(ox, g.w);
        const T* src = x.data() + p * g.h * g.w;
        y[(p * oh + oy) * ow + ox] = (1 - sy.frac) * ((1 - sx.frac) * src[sy.i0 * g.w + sx.i0] + sx.frac * src[sy.i0 * g.w + sx.i1]) +
                                     sy.frac * ((1 - sx.frac) * src[sy.i1 * g.w + sx.i0] + sx.frac * src[sy.i1 * g.w + sx.i1]);
      }
    }
}

template <class T>
void up_bwd(const PlaneGeom& g, std::span<const T> gy, std::span<T> gx) {
  const auto oh = 2 * g.h, ow = 2 * g.w;
  for (std::int64_t p = 0; p < g.batch * g.channels; ++p)
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      const auto sy = detail::upsample_source<T>(oy, g.h);
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const auto sx = detail::upsample_source<T>(ox, g.w);
        const T d = gy[(p * oh + oy) * ow + ox];
        T* dst = gx.data() + p * g.h * g.w;
        dst[sy.i0 * g.w + sx.i0] += d * (1 - sy.frac) * (1 - sx.frac);
        dst[sy.i0 * g.w + sx.i1] += d * (1 - sy.frac) * sx.frac;
        dst[sy.i1 * g.w + sx.i0] += d * sy.frac * (1 - sx.frac);
        dst[sy.i1 * g.w + sx.i1] += d * sy.frac * sx.frac;
      }
    }
}

template <class T>
void in_fwd(const PlaneGeom& g, T eps, std::span<const T> x, std::span<T> y, std::span<T> inv_std) {
  const auto hw = g.h * g.w;
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
    for (std::int64_t i = 0; i < hw; ++i) y[p * hw + i] = (src[i] - mean) * r;
  }
}

template <class T>
void in_bwd(const PlaneGeom& g, std::span<const T> y, std::span<const T> inv_std, std::span<const T> gy,
            std::span<T> gx) {
  const auto hw = g.h * g.w;
  for (std::int64_t p = 0; p < g.batch * g.channels; ++p) {
    T sum_g = 0, sum_gy = 0;
    for (std::int64_t i = 0; i < hw; ++i) {
      sum_g += gy[p * hw + i];
      sum_gy += gy[p * hw + i] * y[p * hw + i];
    }
    const T r = inv_std[p] / T(hw);
    for (std::int64_t i = 0; i < hw; ++i)
      gx[p * hw + i] += r * (T(hw) * gy[p * hw + i] - sum_g - y[p * hw + i] * sum_gy);
  }
}

}  // namespace

#define MHAL_REF_DEFS(T)                                                                                        \
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

MHAL_REF_DEFS(float)
MHAL_REF_DEFS(double)
#undef MHAL_REF_DEFS

}  // namespace ref
}  // namespace mhal::kernels
