#include <cmath>
#include <random>

#include "doctest.h"
#include "mhal/gradcheck.hpp"
#include "mhal/kernels.hpp"
#include "mhal/ops.hpp"

using namespace mhal;

namespace {

template <class T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, T lo = -1, T hi = 1) {
  std::uniform_real_distribution<T> u(lo, hi);
  std::vector<T> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = u(rng);
  return Tensor<T>::from(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("conv2d: 1x1 unit kernel is the identity") {
  std::mt19937_64 rng(1);
  auto x = random_tensor<float>({2, 1, 5, 7}, rng);
  auto w = Tensor<float>::full({1, 1, 1, 1}, 1.0f);
  auto b = Tensor<float>::zeros({1});
  auto y = conv2d(x, w, b);
  REQUIRE(y.shape() == x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv2d: 3x3 ones over ones with padding 1") {
  auto x = Tensor<float>::full({1, 1, 5, 5}, 1.0f);
  auto w = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
  auto y = conv2d(x, w, Tensor<float>::zeros({1}), 1, 1);
  REQUIRE(y.shape() == Shape{1, 1, 5, 5});
  for (int i = 1; i < 4; ++i)
    for (int j = 1; j < 4; ++j) CHECK(y[i * 5 + j] == doctest::Approx(9.0));
  CHECK(y[0] == doctest::Approx(4.0));  // corner sees a 2x2 window
  CHECK(y[2] == doctest::Approx(6.0));
}

TEST_CASE("conv2d: weight gradient matches finite differences at 32-bit") {
  std::mt19937_64 rng(2);
  auto x = random_tensor<float>({1, 2, 6, 6}, rng);
  auto w = random_tensor<float>({3, 2, 3, 3}, rng);
  auto b = random_tensor<float>({3}, rng);
  const auto rel = grad_check<float>([&](const std::vector<Tensor<float>>& in) { return sum(conv2d(x, in[0], b, 1, 1)); },
                                     {w}, 1e-2f);
  CHECK(rel < 1e-3f);
}

TEST_CASE("conv2d: shape errors name the dimensions") {
  auto x = Tensor<float>::zeros({1, 2, 4, 4});
  auto w = Tensor<float>::zeros({1, 3, 3, 3});
  CHECK_THROWS_AS(conv2d(x, w, Tensor<float>::zeros({1})), ShapeError);
  try {
    conv2d(x, w, Tensor<float>::zeros({1}));
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("in-channels 3") != std::string::npos);
  }
  auto big = Tensor<float>::zeros({1, 2, 7, 7});
  CHECK_THROWS_AS(conv2d(x, Tensor<float>::zeros({1, 2, 7, 7}), Tensor<float>::zeros({1})), ShapeError);
  (void)big;
  CHECK_THROWS_AS(conv2d(x, Tensor<float>::zeros({1, 2, 3, 3}), Tensor<float>::zeros({1}), 0, 1), ShapeError);
}

TEST_CASE("grid_sample: identity grid reproduces the input") {
  std::mt19937_64 rng(3);
  auto x = random_tensor<double>({2, 3, 6, 5}, rng);
  auto y = grid_sample(x, identity_grid<double>(2, 6, 5));
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-12));
}

TEST_CASE("grid_sample: one-pixel shift with zero fill") {
  std::mt19937_64 rng(4);
  const int H = 5, W = 6;
  auto x = random_tensor<double>({1, 1, H, W}, rng);
  auto grid = identity_grid<double>(1, H, W);
  auto g = grid.mutable_data();
  for (int i = 0; i < H * W; ++i) g[2 * i] += 2.0 / (W - 1);  // sample one pixel to the right
  auto y = grid_sample(x, grid);
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      const double want = j + 1 < W ? x[i * W + j + 1] : 0.0;
      CHECK(y[i * W + j] == doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("grid_sample: far out-of-bounds samples are zero; bad grid shape rejected") {
  auto x = Tensor<double>::full({1, 2, 4, 4}, 3.0);
  auto grid = Tensor<double>::full({1, 4, 4, 2}, 2.0);
  auto y = grid_sample(x, grid);
  for (auto v : y.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(grid_sample(x, Tensor<double>::zeros({1, 4, 4, 3})), ShapeError);
  CHECK_THROWS_AS(grid_sample(x, Tensor<double>::zeros({2, 4, 4, 2})), ShapeError);
}

TEST_CASE("primitive definitions") {
  auto x = Tensor<double>::from({2}, {-1.0, 2.0});
  auto r = relu(x);
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 2.0);

  auto logits = Tensor<double>::full({2, 5, 3, 3}, 0.7);
  auto p = softmax_channels(logits);
  for (auto v : p.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));

  std::mt19937_64 rng(5);
  auto a = random_tensor<double>({3, 4}, rng);
  CHECK(mse(a, a).item() == 0.0);

  auto z = random_tensor<double>({2, 4, 3, 3}, rng, -5, 5);
  auto s = softmax_channels(z);
  for (int b = 0; b < 2; ++b)
    for (int q = 0; q < 9; ++q) {
      double t = 0;
      for (int c = 0; c < 4; ++c) t += s[(b * 4 + c) * 9 + q];
      CHECK(std::abs(t - 1.0) < 1e-6);
    }
}

TEST_CASE("max_pool ties resolve to the first element") {
  auto x = Tensor<double>::full({1, 1, 2, 2}, 1.0).set_requires_grad(true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto y = max_pool2d(x);
  tape.backward(sum(y));
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 0.0);
  CHECK(x.grad()[3] == 0.0);
}

TEST_CASE("backward basics") {
  SUBCASE("sum gives ones") {
    auto x = Tensor<double>::from({3}, {1, 2, 3}).set_requires_grad(true);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    tape.backward(sum(x));
    REQUIRE(x.has_grad());
    for (auto g : x.grad()) CHECK(g == 1.0);
  }
  SUBCASE("mse against zero") {
    auto x = Tensor<double>::from({1}, {2}).set_requires_grad(true);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    tape.backward(mse(x, Tensor<double>::zeros({1})));
    CHECK(x.grad()[0] == doctest::Approx(4.0));
  }
  SUBCASE("frozen leaf gets no gradient") {
    auto x = Tensor<double>::from({2}, {1, 2}).set_requires_grad(true);
    auto c = Tensor<double>::from({2}, {3, 4});
    Tape<double> tape;
    TapeScope<double> scope(tape);
    tape.backward(sum(mul(x, c)));
    CHECK(x.has_grad());
    CHECK_FALSE(c.has_grad());
    CHECK(x.grad()[1] == 4.0);
  }
  SUBCASE("non-scalar and repeated backward are errors") {
    auto x = Tensor<double>::from({2}, {1, 2}).set_requires_grad(true);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto y = scale(x, 2.0);
    CHECK_THROWS_AS(tape.backward(y), AutodiffError);
    auto l = sum(y);
    tape.backward(l);
    CHECK_THROWS_AS(tape.backward(l), AutodiffError);
    tape.reset();
    auto l2 = sum(scale(x, 3.0));
    tape.backward(l2);
    CHECK(x.grad()[0] == doctest::Approx(5.0));  // accumulated 2 + 3
  }
  SUBCASE("no tape, no recording") {
    auto x = Tensor<double>::from({2}, {1, 2}).set_requires_grad(true);
    auto y = sum(x);
    CHECK_FALSE(y.requires_grad());
  }
}

TEST_CASE("gradient linearity: backward of a sum equals the sum of backwards") {
  std::mt19937_64 rng(6);
  auto x0 = random_tensor<double>({1, 2, 4, 4}, rng);
  auto w = random_tensor<double>({2, 2, 3, 3}, rng);
  auto target = random_tensor<double>({1, 2, 4, 4}, rng);
  auto l1 = [&](const Tensor<double>& x) { return mse(conv2d(x, w, Tensor<double>(), 1, 1), target); };
  auto l2 = [&](const Tensor<double>& x) { return mean(relu(x)); };

  auto grad_of = [&](auto&& f) {
    auto x = x0.detach().set_requires_grad(true);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    tape.backward(f(x));
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  const auto ga = grad_of(l1);
  const auto gb = grad_of(l2);
  const auto gab = grad_of([&](const Tensor<double>& x) { return add(l1(x), l2(x)); });
  for (std::size_t i = 0; i < ga.size(); ++i) CHECK(gab[i] == doctest::Approx(ga[i] + gb[i]).epsilon(1e-12));
}

TEST_CASE("forward is bit-identical across repeated runs") {
  std::mt19937_64 rng(7);
  auto x = random_tensor<float>({3, 4, 8, 8}, rng);
  auto w = random_tensor<float>({5, 4, 3, 3}, rng);
  auto b = random_tensor<float>({5}, rng);
  auto run = [&] { return instance_norm(upsample_bilinear2x(max_pool2d(conv2d(x, w, b, 1, 1)))); };
  auto y1 = run();
  auto y2 = run();
  for (std::int64_t i = 0; i < y1.numel(); ++i) CHECK(y1[i] == y2[i]);
}

TEST_CASE("finite checks flag NaN outputs") {
  set_finite_checks(true);
  auto x = Tensor<double>::from({1}, {std::nan("")});
  CHECK_THROWS_AS(scale(x, 2.0), NumericError);
  set_finite_checks(false);
  CHECK_NOTHROW(scale(x, 2.0));
}

TEST_CASE("grad_check spot values") {
  std::mt19937_64 rng(8);
  auto a = random_tensor<double>({3, 3}, rng);
  CHECK(grad_check<double>([&](const auto& in) { return sum(scale(in[0], 3.0)); }, {a}, 1e-6) < 1e-6);

  auto x = random_tensor<double>({1, 1, 4, 4}, rng);
  auto w = random_tensor<double>({2, 1, 3, 3}, rng);
  auto b = random_tensor<double>({2}, rng);
  CHECK(grad_check<double>([](const auto& in) { return sum(mul(conv2d(in[0], in[1], in[2], 1, 1), conv2d(in[0], in[1], in[2], 1, 1))); },
                           {x, w, b}, 1e-6) < 1e-5);

  CHECK_THROWS_AS(grad_check<double>([](const auto& in) { return sum(scale(in[0], std::nan(""))); }, {a}, 1e-6),
                  NumericError);
}

TEST_CASE("parallel kernels agree with the serial reference") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    const auto B = 1 + trial % 3, Ci = 1 + trial, Co = 2 + trial, H = 6 + trial, W = 5 + 2 * trial;
    const auto stride = 1 + trial % 2, pad = trial % 3;
    auto g = kernels::make_conv_geom(B, Ci, H, W, Co, 3, 3, stride, pad);
    auto x = random_tensor<double>({B, Ci, H, W}, rng);
    auto w = random_tensor<double>({Co, Ci, 3, 3}, rng);
    auto b = random_tensor<double>({Co}, rng);
    std::vector<double> y1(B * Co * g.out_h * g.out_w), y2(y1.size());
    kernels::ref::conv2d_forward(g, x.data(), w.data(), b.data(), std::span<double>(y1));
    kernels::par::conv2d_forward(g, x.data(), w.data(), b.data(), std::span<double>(y2));
    for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-12));

    auto gy = random_tensor<double>({B, Co, g.out_h, g.out_w}, rng);
    std::vector<double> gx1(x.numel()), gx2(x.numel()), gw1(w.numel()), gw2(w.numel()), gb1(Co), gb2(Co);
    kernels::ref::conv2d_backward(g, x.data(), w.data(), gy.data(), std::span<double>(gx1), std::span<double>(gw1),
                                  std::span<double>(gb1));
    kernels::par::conv2d_backward(g, x.data(), w.data(), gy.data(), std::span<double>(gx2), std::span<double>(gw2),
                                  std::span<double>(gb2));
    for (std::size_t i = 0; i < gx1.size(); ++i) CHECK(gx1[i] == doctest::Approx(gx2[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < gw1.size(); ++i) CHECK(gw1[i] == doctest::Approx(gw2[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < gb1.size(); ++i) CHECK(gb1[i] == doctest::Approx(gb2[i]).epsilon(1e-12));

    const kernels::SampleGeom sg{B, Ci, H, W, H, W};
    auto grid = random_tensor<double>({B, H, W, 2}, rng, -1.2, 1.2);
    std::vector<double> s1(B * Ci * H * W), s2(s1.size());
    kernels::ref::grid_sample_forward(sg, x.data(), grid.data(), std::span<double>(s1));
    kernels::par::grid_sample_forward(sg, x.data(), grid.data(), std::span<double>(s2));
    for (std::size_t i = 0; i < s1.size(); ++i) CHECK(s1[i] == s2[i]);
    std::vector<double> sx1(x.numel()), sx2(x.numel()), sg1(grid.numel()), sg2(grid.numel());
    kernels::ref::grid_sample_backward(sg, x.data(), grid.data(), std::span<const double>(s1), std::span<double>(sx1),
                                       std::span<double>(sg1));
    kernels::par::grid_sample_backward(sg, x.data(), grid.data(), std::span<const double>(s1), std::span<double>(sx2),
                                       std::span<double>(sg2));
    for (std::size_t i = 0; i < sx1.size(); ++i) CHECK(sx1[i] == sx2[i]);
    for (std::size_t i = 0; i < sg1.size(); ++i) CHECK(sg1[i] == sg2[i]);

    const kernels::PlaneGeom pg{B, Ci, 2 * (H / 2), 2 * (W / 2)};
    auto xp = random_tensor<double>({B, Ci, pg.h, pg.w}, rng);
    const auto np = B * Ci * (pg.h / 2) * (pg.w / 2);
    std::vector<double> p1(np), p2(np);
    std::vector<std::int64_t> a1(np), a2(np);
    kernels::ref::max_pool2x2_forward(pg, xp.data(), std::span<double>(p1), std::span<std::int64_t>(a1));
    kernels::par::max_pool2x2_forward(pg, xp.data(), std::span<double>(p2), std::span<std::int64_t>(a2));
    CHECK(p1 == p2);
    CHECK(a1 == a2);

    std::vector<double> u1(B * Ci * 4 * pg.h * pg.w), u2(u1.size());
    kernels::ref::upsample2x_forward(pg, xp.data(), std::span<double>(u1));
    kernels::par::upsample2x_forward(pg, xp.data(), std::span<double>(u2));
    for (std::size_t i = 0; i < u1.size(); ++i) CHECK(u1[i] == doctest::Approx(u2[i]).epsilon(1e-14));
    std::vector<double> ub1(xp.numel()), ub2(xp.numel());
    kernels::ref::upsample2x_backward(pg, std::span<const double>(u1), std::span<double>(ub1));
    kernels::par::upsample2x_backward(pg, std::span<const double>(u1), std::span<double>(ub2));
    for (std::size_t i = 0; i < ub1.size(); ++i) CHECK(ub1[i] == doctest::Approx(ub2[i]).epsilon(1e-14));

    std::vector<double> n1(xp.numel()), n2(xp.numel()), r1(B * Ci), r2(B * Ci);
    kernels::ref::instance_norm_forward(pg, 1e-5, xp.data(), std::span<double>(n1), std::span<double>(r1));
    kernels::par::instance_norm_forward(pg, 1e-5, xp.data(), std::span<double>(n2), std::span<double>(r2));
    CHECK(n1 == n2);
    CHECK(r1 == r2);
  }
}
