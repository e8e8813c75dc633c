#include "mhal/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "../kernels/grid_math.hpp"
#include "mhal/kernels.hpp"

namespace mhal {

namespace {

template <class T>
std::span<T> grad_of(const Tensor<T>& t) {
  return t.node()->grad_buffer();
}

[[noreturn]] void shape_fail(const std::string& op, const std::string& msg) { throw ShapeError(op + ": " + msg); }

template <class T>
void expect_rank(const char* op, const Tensor<T>& t, std::size_t rank, const char* name) {
  if (!t.defined()) shape_fail(op, std::string(name) + " is undefined");
  if (t.rank() != rank) {
    shape_fail(op, std::string(name) + " must have rank " + std::to_string(rank) + ", got shape " +
                       to_string(t.shape()));
  }
}

template <class T>
void expect_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    shape_fail(op, "shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

template <class T>
kernels::PlaneGeom plane_geom(const Tensor<T>& x) {
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
}

template <class T, class F>
Tensor<T> unary_map(const Tensor<T>& x, F f, auto df) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = f(v);
  return make_result<T>(x.shape(), std::move(out), {x}, [x, df](const std::vector<T>& g) {
    auto gx = grad_of(x);
    auto xv = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i]);
  });
}

}  // namespace

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, std::int64_t stride,
                 std::int64_t padding) {
  expect_rank("conv2d", input, 4, "input");
  expect_rank("conv2d", weight, 4, "weight");
  if (weight.dim(1) != input.dim(1)) {
    shape_fail("conv2d", "weight in-channels " + std::to_string(weight.dim(1)) + " != input channels " +
                             std::to_string(input.dim(1)) + " (input " + to_string(input.shape()) + ", weight " +
                             to_string(weight.shape()) + ")");
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0))) {
    shape_fail("conv2d", "bias shape " + to_string(bias.shape()) + " does not match out-channels " +
                             std::to_string(weight.dim(0)));
  }
  const auto g = kernels::make_conv_geom(input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0),
                                         weight.dim(2), weight.dim(3), stride, padding);
  std::vector<T> out(static_cast<std::size_t>(g.batch * g.out_ch * g.out_h * g.out_w));
  kernels::par::conv2d_forward(g, input.data(), weight.data(), bias.defined() ? bias.data() : std::span<const T>{},
                               std::span<T>(out));
  Tensor<T> b = bias.defined() ? bias : Tensor<T>::zeros({weight.dim(0)});
  return make_result<T>({g.batch, g.out_ch, g.out_h, g.out_w}, std::move(out), {input, weight, b},
                        [input, weight, b, g](const std::vector<T>& gy) {
                          kernels::par::conv2d_backward(
                              g, input.data(), weight.data(), std::span<const T>(gy),
                              input.requires_grad() ? grad_of(input) : std::span<T>{},
                              weight.requires_grad() ? grad_of(weight) : std::span<T>{},
                              b.requires_grad() ? grad_of(b) : std::span<T>{});
                        });
}

template <class T>
Tensor<T> grid_sample(const Tensor<T>& input, const Tensor<T>& grid) {
  expect_rank("grid_sample", input, 4, "input");
  if (!grid.defined() || grid.rank() != 4 || grid.dim(0) != input.dim(0) || grid.dim(3) != 2) {
    shape_fail("grid_sample", "grid must be [B,H,W,2] with B=" + std::to_string(input.dim(0)) + ", got " +
                                  (grid.defined() ? to_string(grid.shape()) : std::string("<undefined>")));
  }
  const kernels::SampleGeom g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), grid.dim(1), grid.dim(2)};
  std::vector<T> out(static_cast<std::size_t>(g.batch * g.channels * g.out_h * g.out_w));
  kernels::par::grid_sample_forward(g, input.data(), grid.data(), std::span<T>(out));
  return make_result<T>({g.batch, g.channels, g.out_h, g.out_w}, std::move(out), {input, grid},
                        [input, grid, g](const std::vector<T>& gy) {
                          kernels::par::grid_sample_backward(
                              g, input.data(), grid.data(), std::span<const T>(gy),
                              input.requires_grad() ? grad_of(input) : std::span<T>{},
                              grid.requires_grad() ? grad_of(grid) : std::span<T>{});
                        });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary_map(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  return unary_map(
      x, [slope](T v) { return v > T(0) ? v : slope * v; }, [slope](T v) { return v > T(0) ? T(1) : slope; });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary_map(
      x, [](T v) { return std::tanh(v); },
      [](T v) {
        const T t = std::tanh(v);
        return T(1) - t * t;
      });
}

template <class T>
Tensor<T> max_pool2d(const Tensor<T>& x) {
  expect_rank("max_pool2d", x, 4, "input");
  if (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
    shape_fail("max_pool2d", "spatial dims must be even, got " + to_string(x.shape()));
  }
  const auto g = plane_geom(x);
  const auto n = static_cast<std::size_t>(g.batch * g.channels * (g.h / 2) * (g.w / 2));
  std::vector<T> out(n);
  auto arg = std::make_shared<std::vector<std::int64_t>>(n);
  kernels::par::max_pool2x2_forward(g, x.data(), std::span<T>(out), std::span<std::int64_t>(*arg));
  return make_result<T>({g.batch, g.channels, g.h / 2, g.w / 2}, std::move(out), {x},
                        [x, arg, g](const std::vector<T>& gy) {
                          kernels::par::max_pool2x2_backward(g, std::span<const T>(gy),
                                                             std::span<const std::int64_t>(*arg), grad_of(x));
                        });
}

template <class T>
Tensor<T> upsample_bilinear2x(const Tensor<T>& x) {
  expect_rank("upsample_bilinear2x", x, 4, "input");
  const auto g = plane_geom(x);
  std::vector<T> out(static_cast<std::size_t>(g.batch * g.channels * 4 * g.h * g.w));
  kernels::par::upsample2x_forward(g, x.data(), std::span<T>(out));
  return make_result<T>({g.batch, g.channels, 2 * g.h, 2 * g.w}, std::move(out), {x},
                        [x, g](const std::vector<T>& gy) {
                          kernels::par::upsample2x_backward(g, std::span<const T>(gy), grad_of(x));
                        });
}

template <class T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps) {
  expect_rank("instance_norm", x, 4, "input");
  const auto g = plane_geom(x);
  std::vector<T> out(x.data().size());
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(g.batch * g.channels));
  kernels::par::instance_norm_forward(g, eps, x.data(), std::span<T>(out), std::span<T>(*inv_std));
  auto saved = std::make_shared<std::vector<T>>(out);
  return make_result<T>(x.shape(), std::move(out), {x}, [x, g, saved, inv_std](const std::vector<T>& gy) {
    kernels::par::instance_norm_backward(g, std::span<const T>(*saved), std::span<const T>(*inv_std),
                                         std::span<const T>(gy), grad_of(x));
  });
}

template <class T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
  expect_rank("softmax_channels", x, 4, "input");
  const auto B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
  std::vector<T> out(x.data().size());
  auto xv = x.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t p = 0; p < P; ++p) {
      T m = xv[b * C * P + p];
      for (std::int64_t c = 1; c < C; ++c) m = std::max(m, xv[(b * C + c) * P + p]);
      T s = 0;
      for (std::int64_t c = 0; c < C; ++c) {
        const auto i = (b * C + c) * P + p;
        out[i] = std::exp(xv[i] - m);
        s += out[i];
      }
      for (std::int64_t c = 0; c < C; ++c) out[(b * C + c) * P + p] /= s;
    }
  auto saved = std::make_shared<std::vector<T>>(out);
  return make_result<T>(x.shape(), std::move(out), {x}, [x, saved, B, C, P](const std::vector<T>& gy) {
    auto gx = grad_of(x);
    const auto& y = *saved;
#pragma omp parallel for schedule(static)
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t p = 0; p < P; ++p) {
        T dot = 0;
        for (std::int64_t c = 0; c < C; ++c) dot += gy[(b * C + c) * P + p] * y[(b * C + c) * P + p];
        for (std::int64_t c = 0; c < C; ++c) {
          const auto i = (b * C + c) * P + p;
          gx[i] += y[i] * (gy[i] - dot);
        }
      }
  });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  expect_same("add", a, b);
  std::vector<T> out(a.data().begin(), a.data().end());
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [a, b](const std::vector<T>& g) {
    for (const auto* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto gt = grad_of(*t);
      for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  expect_same("sub", a, b);
  std::vector<T> out(a.data().begin(), a.data().end());
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [a, b](const std::vector<T>& g) {
    if (a.requires_grad()) {
      auto ga = grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  expect_same("mul", a, b);
  std::vector<T> out(a.data().begin(), a.data().end());
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [a, b](const std::vector<T>& g) {
    if (a.requires_grad()) {
      auto ga = grad_of(a);
      auto bv = b.data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      auto gb = grad_of(b);
      auto av = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_result<T>(a.shape(), std::move(out), {a}, [a, factor](const std::vector<T>& g) {
    auto ga = grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

namespace {
// Concatenates along `axis` for tensors equal in all other dims.
template <class T>
Tensor<T> concat_axis(const char* op, const Tensor<T>& a, const Tensor<T>& b, std::size_t axis) {
  if (a.rank() != b.rank() || a.rank() <= axis) shape_fail(op, "rank mismatch");
  for (std::size_t d = 0; d < a.rank(); ++d) {
    if (d != axis && a.dim(d) != b.dim(d)) {
      shape_fail(op, "dim " + std::to_string(d) + " differs: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
  }
  std::int64_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= a.dim(d);
  for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.dim(d);
  const auto la = a.dim(axis) * inner, lb = b.dim(axis) * inner;
  Shape shape = a.shape();
  shape[axis] += b.dim(axis);
  std::vector<T> out(static_cast<std::size_t>(outer * (la + lb)));
  auto av = a.data();
  auto bv = b.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(av.begin() + o * la, la, out.begin() + o * (la + lb));
    std::copy_n(bv.begin() + o * lb, lb, out.begin() + o * (la + lb) + la);
  }
  return make_result<T>(std::move(shape), std::move(out), {a, b}, [a, b, outer, la, lb](const std::vector<T>& g) {
    if (a.requires_grad()) {
      auto ga = grad_of(a);
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < la; ++i) ga[o * la + i] += g[o * (la + lb) + i];
    }
    if (b.requires_grad()) {
      auto gb = grad_of(b);
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < lb; ++i) gb[o * lb + i] += g[o * (la + lb) + la + i];
    }
  });
}
}  // namespace

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  expect_rank("concat_channels", a, 4, "a");
  expect_rank("concat_channels", b, 4, "b");
  return concat_axis("concat_channels", a, b, 1);
}

template <class T>
Tensor<T> concat_batch(const Tensor<T>& a, const Tensor<T>& b) {
  return concat_axis("concat_batch", a, b, 0);
}

template <class T>
Tensor<T> gather_batch(const Tensor<T>& x, const std::vector<std::int64_t>& rows) {
  if (x.rank() < 1 || rows.empty()) shape_fail("gather_batch", "need a batched tensor and at least one row");
  const auto stride = x.numel() / x.dim(0);
  for (auto r : rows) {
    if (r < 0 || r >= x.dim(0)) shape_fail("gather_batch", "row " + std::to_string(r) + " outside batch " + to_string(x.shape()));
  }
  Shape shape = x.shape();
  shape[0] = static_cast<std::int64_t>(rows.size());
  std::vector<T> out(static_cast<std::size_t>(stride) * rows.size());
  auto xv = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(xv.begin() + rows[i] * stride, stride, out.begin() + i * stride);
  return make_result<T>(std::move(shape), std::move(out), {x}, [x, rows, stride](const std::vector<T>& g) {
    auto gx = grad_of(x);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::int64_t k = 0; k < stride; ++k) gx[rows[i] * stride + k] += g[i * stride + k];
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    shape_fail("reshape", "cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), {x}, [x](const std::vector<T>& g) {
    auto gx = grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  return make_result<T>({1}, {s}, {x}, [x](const std::vector<T>& g) {
    auto gx = grad_of(x);
    for (auto& v : gx) v += g[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  const T n = T(x.numel());
  return make_result<T>({1}, {s / n}, {x}, [x, n](const std::vector<T>& g) {
    auto gx = grad_of(x);
    for (auto& v : gx) v += g[0] / n;
  });
}

template <class T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  expect_same("mse", a, b);
  auto av = a.data();
  auto bv = b.data();
  T s = 0;
  for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  const T n = T(av.size());
  return make_result<T>({1}, {s / n}, {a, b}, [a, b, n](const std::vector<T>& g) {
    auto av = a.data();
    auto bv = b.data();
    const T k = T(2) * g[0] / n;
    if (a.requires_grad()) {
      auto ga = grad_of(a);
      for (std::size_t i = 0; i < av.size(); ++i) ga[i] += k * (av[i] - bv[i]);
    }
    if (b.requires_grad()) {
      auto gb = grad_of(b);
      for (std::size_t i = 0; i < av.size(); ++i) gb[i] -= k * (av[i] - bv[i]);
    }
  });
}

template <class T>
Tensor<T> masked_mse(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& mask) {
  expect_same("masked_mse", a, b);
  expect_same("masked_mse", a, mask);
  auto av = a.data();
  auto bv = b.data();
  auto mv = mask.data();
  T s = 0, m = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    s += mv[i] * (av[i] - bv[i]) * (av[i] - bv[i]);
    m += mv[i];
  }
  const T denom = m > T(0) ? m : T(1);
  return make_result<T>({1}, {s / denom}, {a, b}, [a, b, mask, denom](const std::vector<T>& g) {
    auto av = a.data();
    auto bv = b.data();
    auto mv = mask.data();
    const T k = T(2) * g[0] / denom;
    if (a.requires_grad()) {
      auto ga = grad_of(a);
      for (std::size_t i = 0; i < av.size(); ++i) ga[i] += k * mv[i] * (av[i] - bv[i]);
    }
    if (b.requires_grad()) {
      auto gb = grad_of(b);
      for (std::size_t i = 0; i < av.size(); ++i) gb[i] -= k * mv[i] * (av[i] - bv[i]);
    }
  });
}

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const LabelMap& labels) {
  expect_rank("cross_entropy", logits, 4, "logits");
  const auto B = logits.dim(0), C = logits.dim(1), P = logits.dim(2) * logits.dim(3);
  if (labels.batch != B || labels.h != logits.dim(2) || labels.w != logits.dim(3)) {
    shape_fail("cross_entropy", "labels [" + std::to_string(labels.batch) + "," + std::to_string(labels.h) + "," +
                                    std::to_string(labels.w) + "] do not match logits " + to_string(logits.shape()));
  }
  for (auto v : labels.values) {
    if (v >= C) shape_fail("cross_entropy", "label " + std::to_string(v) + " out of range [0," + std::to_string(C) + ")");
  }
  auto xv = logits.data();
  auto probs = std::make_shared<std::vector<T>>(xv.size());
  T total = 0;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t p = 0; p < P; ++p) {
      T m = xv[b * C * P + p];
      for (std::int64_t c = 1; c < C; ++c) m = std::max(m, xv[(b * C + c) * P + p]);
      T s = 0;
      for (std::int64_t c = 0; c < C; ++c) {
        const auto i = (b * C + c) * P + p;
        (*probs)[i] = std::exp(xv[i] - m);
        s += (*probs)[i];
      }
      for (std::int64_t c = 0; c < C; ++c) (*probs)[(b * C + c) * P + p] /= s;
      const auto y = labels.values[b * P + p];
      total += -(xv[(b * C + y) * P + p] - m - std::log(s));
    }
  const T n = T(B * P);
  auto lab = std::make_shared<std::vector<std::uint8_t>>(labels.values);
  return make_result<T>({1}, {total / n}, {logits}, [logits, probs, lab, B, C, P, n](const std::vector<T>& g) {
    auto gx = grad_of(logits);
    const T k = g[0] / n;
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t p = 0; p < P; ++p) {
        const auto y = (*lab)[b * P + p];
        for (std::int64_t c = 0; c < C; ++c) {
          const auto i = (b * C + c) * P + p;
          gx[i] += k * ((*probs)[i] - (c == y ? T(1) : T(0)));
        }
      }
  });
}

template <class T>
Tensor<T> soft_dice(const Tensor<T>& probs, const Tensor<T>& one_hot, int first_class, T eps) {
  expect_rank("soft_dice", probs, 4, "probs");
  expect_same("soft_dice", probs, one_hot);
  const auto B = probs.dim(0), C = probs.dim(1), P = probs.dim(2) * probs.dim(3);
  if (first_class < 0 || first_class >= C) shape_fail("soft_dice", "first_class outside channel range");
  const auto nc = C - first_class;
  auto inter = std::make_shared<std::vector<T>>(static_cast<std::size_t>(C), T(0));
  auto denom = std::make_shared<std::vector<T>>(static_cast<std::size_t>(C), T(0));
  auto pv = probs.data();
  auto gv = one_hot.data();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = first_class; c < C; ++c)
      for (std::int64_t p = 0; p < P; ++p) {
        const auto i = (b * C + c) * P + p;
        (*inter)[c] += pv[i] * gv[i];
        (*denom)[c] += pv[i] + gv[i];
      }
  T total = 0;
  for (std::int64_t c = first_class; c < C; ++c) total += (T(2) * (*inter)[c] + eps) / ((*denom)[c] + eps);
  return make_result<T>(
      {1}, {total / T(nc)}, {probs, one_hot},
      [probs, one_hot, inter, denom, B, C, P, nc, eps, first_class](const std::vector<T>& g) {
        auto pv = probs.data();
        auto gv = one_hot.data();
        const T k = g[0] / T(nc);
        for (const bool wrt_probs : {true, false}) {
          const Tensor<T>& t = wrt_probs ? probs : one_hot;
          if (!t.requires_grad()) continue;
          auto gt = grad_of(t);
          auto other = wrt_probs ? gv : pv;
          for (std::int64_t c = first_class; c < C; ++c) {
            const T s = (*denom)[c] + eps;
            const T num = T(2) * (*inter)[c] + eps;
            for (std::int64_t b = 0; b < B; ++b)
              for (std::int64_t p = 0; p < P; ++p) {
                const auto i = (b * C + c) * P + p;
                gt[i] += k * (T(2) * other[i] * s - num) / (s * s);
              }
          }
        }
      });
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  expect_rank("linear", x, 2, "input");
  expect_rank("linear", weight, 2, "weight");
  const auto B = x.dim(0), F = x.dim(1), O = weight.dim(0);
  if (weight.dim(1) != F) {
    shape_fail("linear", "weight " + to_string(weight.shape()) + " incompatible with input " + to_string(x.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != O) shape_fail("linear", "bias shape " + to_string(bias.shape()));
  auto xv = x.data();
  auto wv = weight.data();
  auto bv = bias.data();
  std::vector<T> out(static_cast<std::size_t>(B * O));
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t o = 0; o < O; ++o) {
      T acc = bv[o];
      for (std::int64_t f = 0; f < F; ++f) acc += wv[o * F + f] * xv[b * F + f];
      out[b * O + o] = acc;
    }
  return make_result<T>({B, O}, std::move(out), {x, weight, bias}, [x, weight, bias, B, F, O](const std::vector<T>& g) {
    auto xv = x.data();
    auto wv = weight.data();
    if (x.requires_grad()) {
      auto gx = grad_of(x);
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t o = 0; o < O; ++o)
          for (std::int64_t f = 0; f < F; ++f) gx[b * F + f] += g[b * O + o] * wv[o * F + f];
    }
    if (weight.requires_grad()) {
      auto gw = grad_of(weight);
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t o = 0; o < O; ++o)
          for (std::int64_t f = 0; f < F; ++f) gw[o * F + f] += g[b * O + o] * xv[b * F + f];
    }
    if (bias.requires_grad()) {
      auto gb = grad_of(bias);
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t o = 0; o < O; ++o) gb[o] += g[b * O + o];
    }
  });
}

namespace {
template <class T>
T norm_coord(std::int64_t i, std::int64_t n) {
  return n > 1 ? T(-1) + T(2) * T(i) / T(n - 1) : T(0);
}
}  // namespace

template <class T>
Tensor<T> affine_grid(const Tensor<T>& theta, std::int64_t h, std::int64_t w) {
  if (theta.rank() != 3 || theta.dim(1) != 2 || theta.dim(2) != 3) {
    shape_fail("affine_grid", "theta must be [B,2,3], got " + to_string(theta.shape()));
  }
  const auto B = theta.dim(0);
  auto tv = theta.data();
  std::vector<T> out(static_cast<std::size_t>(B * h * w * 2));
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) {
        const T x = norm_coord<T>(j, w), y = norm_coord<T>(i, h);
        const T* t = tv.data() + b * 6;
        const auto o = ((b * h + i) * w + j) * 2;
        out[o] = t[0] * x + t[1] * y + t[2];
        out[o + 1] = t[3] * x + t[4] * y + t[5];
      }
  return make_result<T>({B, h, w, 2}, std::move(out), {theta}, [theta, B, h, w](const std::vector<T>& g) {
    auto gt = grad_of(theta);
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) {
          const T x = norm_coord<T>(j, w), y = norm_coord<T>(i, h);
          const auto o = ((b * h + i) * w + j) * 2;
          T* d = gt.data() + b * 6;
          d[0] += g[o] * x;
          d[1] += g[o] * y;
          d[2] += g[o];
          d[3] += g[o + 1] * x;
          d[4] += g[o + 1] * y;
          d[5] += g[o + 1];
        }
  });
}

template <class T>
Tensor<T> displacement_grid(const Tensor<T>& field) {
  expect_rank("displacement_grid", field, 4, "field");
  if (field.dim(1) != 2) shape_fail("displacement_grid", "field must have 2 channels, got " + to_string(field.shape()));
  const auto B = field.dim(0), h = field.dim(2), w = field.dim(3);
  auto fv = field.data();
  std::vector<T> out(static_cast<std::size_t>(B * h * w * 2));
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) {
        const auto o = ((b * h + i) * w + j) * 2;
        out[o] = norm_coord<T>(j, w) + fv[((b * 2 + 0) * h + i) * w + j];
        out[o + 1] = norm_coord<T>(i, h) + fv[((b * 2 + 1) * h + i) * w + j];
      }
  return make_result<T>({B, h, w, 2}, std::move(out), {field}, [field, B, h, w](const std::vector<T>& g) {
    auto gf = grad_of(field);
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) {
          const auto o = ((b * h + i) * w + j) * 2;
          gf[((b * 2 + 0) * h + i) * w + j] += g[o];
          gf[((b * 2 + 1) * h + i) * w + j] += g[o + 1];
        }
  });
}

template <class T>
Tensor<T> smoothness_penalty(const Tensor<T>& field) {
  expect_rank("smoothness_penalty", field, 4, "field");
  const auto planes = field.dim(0) * field.dim(1), h = field.dim(2), w = field.dim(3);
  auto fv = field.data();
  T sx = 0, sy = 0;
  const T nx = T(std::max<std::int64_t>(1, planes * h * (w - 1)));
  const T ny = T(std::max<std::int64_t>(1, planes * (h - 1) * w));
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) {
        const auto k = (p * h + i) * w + j;
        if (j + 1 < w) sx += (fv[k + 1] - fv[k]) * (fv[k + 1] - fv[k]);
        if (i + 1 < h) sy += (fv[k + w] - fv[k]) * (fv[k + w] - fv[k]);
      }
  return make_result<T>({1}, {sx / nx + sy / ny}, {field}, [field, planes, h, w, nx, ny](const std::vector<T>& g) {
    auto fv = field.data();
    auto gf = grad_of(field);
    for (std::int64_t p = 0; p < planes; ++p)
      for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) {
          const auto k = (p * h + i) * w + j;
          if (j + 1 < w) {
            const T d = T(2) * g[0] * (fv[k + 1] - fv[k]) / nx;
            gf[k + 1] += d;
            gf[k] -= d;
          }
          if (i + 1 < h) {
            const T d = T(2) * g[0] * (fv[k + w] - fv[k]) / ny;
            gf[k + w] += d;
            gf[k] -= d;
          }
        }
  });
}

template <class T>
Tensor<T> identity_grid(std::int64_t batch, std::int64_t h, std::int64_t w) {
  std::vector<T> out(static_cast<std::size_t>(batch * h * w * 2));
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) {
        const auto o = ((b * h + i) * w + j) * 2;
        out[o] = norm_coord<T>(j, w);
        out[o + 1] = norm_coord<T>(i, h);
      }
  return Tensor<T>::from({batch, h, w, 2}, std::move(out));
}

template <class T>
Tensor<T> one_hot(const LabelMap& labels, int classes) {
  const auto P = labels.plane();
  std::vector<T> out(static_cast<std::size_t>(labels.batch * classes * P), T(0));
  for (std::int64_t b = 0; b < labels.batch; ++b)
    for (std::int64_t p = 0; p < P; ++p) {
      const auto y = labels.values[b * P + p];
      if (y >= classes) shape_fail("one_hot", "label " + std::to_string(y) + " >= classes " + std::to_string(classes));
      out[(b * classes + y) * P + p] = T(1);
    }
  return Tensor<T>::from({labels.batch, classes, labels.h, labels.w}, std::move(out));
}

template <class T>
LabelMap argmax_channels(const Tensor<T>& scores) {
  expect_rank("argmax_channels", scores, 4, "scores");
  const auto B = scores.dim(0), C = scores.dim(1), P = scores.dim(2) * scores.dim(3);
  LabelMap out(B, scores.dim(2), scores.dim(3));
  auto sv = scores.data();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t p = 0; p < P; ++p) {
      std::int64_t best = 0;
      for (std::int64_t c = 1; c < C; ++c)
        if (sv[(b * C + c) * P + p] > sv[(b * C + best) * P + p]) best = c;
      out.values[b * P + p] = static_cast<std::uint8_t>(best);
    }
  return out;
}

namespace {
// Nearest source pixel for a normalized point, or -1 when outside the image.
template <class T>
std::int64_t nearest_index(T gx, T gy, std::int64_t h, std::int64_t w) {
  const T ix = (gx + T(1)) * T(w - 1) / T(2);
  const T iy = (gy + T(1)) * T(h - 1) / T(2);
  const auto x = static_cast<std::int64_t>(std::floor(ix + T(0.5)));
  const auto y = static_cast<std::int64_t>(std::floor(iy + T(0.5)));
  if (x < 0 || x >= w || y < 0 || y >= h) return -1;
  return y * w + x;
}
}  // namespace

template <class T>
Tensor<T> grid_sample_nearest(const Tensor<T>& input, const Tensor<T>& grid, T fill) {
  expect_rank("grid_sample_nearest", input, 4, "input");
  if (grid.rank() != 4 || grid.dim(0) != input.dim(0) || grid.dim(3) != 2) {
    shape_fail("grid_sample_nearest", "grid must be [B,H,W,2], got " + to_string(grid.shape()));
  }
  const auto B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const auto oh = grid.dim(1), ow = grid.dim(2);
  auto iv = input.data();
  auto gv = grid.data();
  std::vector<T> out(static_cast<std::size_t>(B * C * oh * ow));
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t o = 0; o < oh * ow; ++o) {
      const auto gi = (b * oh * ow + o) * 2;
      const auto src = nearest_index(gv[gi], gv[gi + 1], H, W);
      for (std::int64_t c = 0; c < C; ++c)
        out[(b * C + c) * oh * ow + o] = src < 0 ? fill : iv[(b * C + c) * H * W + src];
    }
  return Tensor<T>::from({B, C, oh, ow}, std::move(out));
}

template <class T>
LabelMap sample_labels_nearest(const LabelMap& labels, const Tensor<T>& grid, std::uint8_t fill) {
  if (grid.rank() != 4 || grid.dim(0) != labels.batch || grid.dim(3) != 2) {
    shape_fail("sample_labels_nearest", "grid must be [B,H,W,2], got " + to_string(grid.shape()));
  }
  const auto oh = grid.dim(1), ow = grid.dim(2);
  LabelMap out(labels.batch, oh, ow);
  auto gv = grid.data();
  for (std::int64_t b = 0; b < labels.batch; ++b)
    for (std::int64_t o = 0; o < oh * ow; ++o) {
      const auto gi = (b * oh * ow + o) * 2;
      const auto src = nearest_index(gv[gi], gv[gi + 1], labels.h, labels.w);
      out.values[b * oh * ow + o] = src < 0 ? fill : labels.values[b * labels.plane() + src];
    }
  return out;
}

#define MHAL_OPS_INST(T)                                                                              \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::int64_t,       \
                            std::int64_t);                                                            \
  template Tensor<T> grid_sample(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> relu(const Tensor<T>&);                                                          \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                                 \
  template Tensor<T> tanh(const Tensor<T>&);                                                          \
  template Tensor<T> max_pool2d(const Tensor<T>&);                                                    \
  template Tensor<T> upsample_bilinear2x(const Tensor<T>&);                                           \
  template Tensor<T> instance_norm(const Tensor<T>&, T);                                              \
  template Tensor<T> softmax_channels(const Tensor<T>&);                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> scale(const Tensor<T>&, T);                                                      \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> concat_batch(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                \
  template Tensor<T> gather_batch(const Tensor<T>&, const std::vector<std::int64_t>&);                                                \
  template Tensor<T> sum(const Tensor<T>&);                                                           \
  template Tensor<T> mean(const Tensor<T>&);                                                          \
  template Tensor<T> mse(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> masked_mse(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> cross_entropy(const Tensor<T>&, const LabelMap&);                                \
  template Tensor<T> soft_dice(const Tensor<T>&, const Tensor<T>&, int, T);                           \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> affine_grid(const Tensor<T>&, std::int64_t, std::int64_t);                       \
  template Tensor<T> displacement_grid(const Tensor<T>&);                                             \
  template Tensor<T> smoothness_penalty(const Tensor<T>&);                                            \
  template Tensor<T> identity_grid<T>(std::int64_t, std::int64_t, std::int64_t);                      \
  template Tensor<T> one_hot<T>(const LabelMap&, int);                                                \
  template LabelMap argmax_channels(const Tensor<T>&);                                                \
  template Tensor<T> grid_sample_nearest(const Tensor<T>&, const Tensor<T>&, T);                      \
  template LabelMap sample_labels_nearest(const LabelMap&, const Tensor<T>&, std::uint8_t);

MHAL_OPS_INST(float)
MHAL_OPS_INST(double)
#undef MHAL_OPS_INST

}  // namespace mhal
