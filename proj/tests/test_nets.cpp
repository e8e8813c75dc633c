#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "mhal/losses.hpp"
#include "mhal/metrics.hpp"
#include "mhal/nets.hpp"
#include "mhal/optim.hpp"
#include "mhal/synth.hpp"

using namespace mhal;

namespace {

UNetConfig small_unet() {
  UNetConfig c;
  c.depth = 2;
  c.base_channels = 4;
  return c;
}

Tensor<float> row_image(std::int64_t h, std::int64_t w) {
  std::vector<float> v(static_cast<std::size_t>(h * w));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) v[y * w + x] = std::sin(0.3f * x) + std::cos(0.2f * y);
  return Tensor<float>::from({1, 1, h, w}, v);
}

}  // namespace

TEST_CASE("unet: logits shape and finiteness on zero input") {
  UNet<float> net(small_unet());
  auto p = net.init(3);
  auto y = net.forward(p, Tensor<float>::zeros({2, 1, 32, 32}));
  CHECK(y.shape() == Shape{2, 5, 32, 32});
  for (float v : y.data()) CHECK(std::isfinite(v));
  CHECK(net.parameter_count() == p.element_count());
}

TEST_CASE("unet: duplicated batch rows give identical logits") {
  UNet<float> net(small_unet());
  auto p = net.init(4);
  auto x = row_image(32, 32);
  auto y = net.forward(p, concat_batch(x, x));
  const auto plane = y.numel() / 2;
  for (std::int64_t i = 0; i < plane; ++i) CHECK(y[i] == y[i + plane]);
}

TEST_CASE("unet: spatial size must divide by 2^depth") {
  UNet<float> net(small_unet());
  auto p = net.init(0);
  CHECK_THROWS_AS(net.forward(p, Tensor<float>::zeros({1, 1, 30, 32})), ShapeError);
  CHECK_THROWS_AS(net.forward(p, Tensor<float>::zeros({1, 2, 32, 32})), ShapeError);
}

TEST_CASE("unet: init is a pure function of the seed") {
  UNet<float> net(small_unet());
  auto a = net.init(11), b = net.init(11), c = net.init(12);
  bool differ = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::equal(a[i].data().begin(), a[i].data().end(), b[i].data().begin()));
    differ = differ || !std::equal(a[i].data().begin(), a[i].data().end(), c[i].data().begin());
  }
  CHECK(differ);
}

TEST_CASE("unet: overfits two synthetic subjects") {
  SynthConfig cfg;
  cfg.source_subjects = 2;
  cfg.shots = 2;
  cfg.target_train = cfg.target_val = cfg.target_test = 1;
  cfg.seed = 5;
  const auto bundle = generate(cfg);
  const auto x = image_batch<float>(bundle.source, {0, 1});
  const auto labels = label_batch(bundle.source, {0, 1});
  UNetConfig uc = small_unet();
  uc.base_channels = 8;
  UNet<float> net(uc);
  auto p = net.init(1);
  p.set_requires_grad(true);
  Adam<float> adam(p);
  for (int it = 0; it < 200; ++it) {
    Tape<float> tape;
    TapeScope<float> scope(tape);
    p.clear_grads();
    auto loss = seg_loss(net.forward(p, x), labels);
    tape.backward(loss);
    adam.step(p, p.gradients(), 0.01);
  }
  NoGradScope<float> off;
  const auto pred = argmax_channels(net.forward(p, x));
  double total = 0;
  for (int b = 0; b < 2; ++b)
    for (std::uint8_t c = 1; c < kClasses; ++c) total += dice(class_mask(pred, b, c), class_mask(labels, b, c));
  CHECK(total / 8.0 > 0.9);
}

TEST_CASE("unet: checkpoint round trip and config inference") {
  UNetConfig c = small_unet();
  c.depth = 3;
  c.base_channels = 6;
  UNet<float> net(c);
  auto p = net.init(9);
  const auto path = std::filesystem::temp_directory_path() / "mhal_test_unet.mhck";
  save_params(p, path);
  auto q = load_params<float>(path);
  std::filesystem::remove(path);
  REQUIRE(q.same_layout(p));
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::equal(p[i].data().begin(), p[i].data().end(), q[i].data().begin()));
  const auto inferred = infer_unet_config(q);
  CHECK(inferred.depth == 3);
  CHECK(inferred.base_channels == 6);
  CHECK(inferred.classes == 5);
  CHECK(inferred.in_channels == 1);
}

TEST_CASE("hallucinator: fresh parameters produce the identity warp") {
  for (auto kind : {TransformKind::affine, TransformKind::dense}) {
    HallucinatorConfig hc;
    hc.kind = kind;
    hc.height = hc.width = 32;
    Hallucinator<float> hal(hc);
    auto psi = hal.init(2);
    auto moving = row_image(32, 32), fixed = scale(row_image(32, 32), 0.5f);
    auto h = hal.hallucinate(psi, moving, fixed);
    REQUIRE(h.moved.shape() == moving.shape());
    for (std::int64_t i = 0; i < moving.numel(); ++i) CHECK(h.moved[i] == doctest::Approx(moving[i]).epsilon(1e-5));
  }
}

TEST_CASE("hallucinator: rejects mismatched pairs and sizes") {
  HallucinatorConfig hc;
  hc.height = hc.width = 32;
  Hallucinator<float> hal(hc);
  auto psi = hal.init(0);
  CHECK_THROWS_AS(hal.transform(psi, Tensor<float>::zeros({1, 1, 32, 32}), Tensor<float>::zeros({2, 1, 32, 32})),
                  ShapeError);
  hc.height = 36;
  CHECK_THROWS(Hallucinator<float>(hc));
}

TEST_CASE("warp: translation by whole pixels and back recovers the interior") {
  const std::int64_t n = 33;
  auto x = row_image(n, n);
  const float step = 2.0f / static_cast<float>(n - 1);
  auto fwd = SpatialTransform<float>::translation({3 * step}, {-2 * step});
  auto back = SpatialTransform<float>::translation({-3 * step}, {2 * step});
  auto y = warp(warp(x, fwd), back);
  for (std::int64_t r = 4; r < n - 4; ++r)
    for (std::int64_t c = 4; c < n - 4; ++c) CHECK(y[r * n + c] == doctest::Approx(x[r * n + c]).epsilon(1e-4));
  // Translated content: output(r, c) = input(r - 2, c + 3).
  auto z = warp(x, fwd);
  CHECK(z[10 * n + 10] == doctest::Approx(x[8 * n + 13]).epsilon(1e-4));
}

TEST_CASE("warp: labels and one-hot maps stay hard") {
  LabelMap l(1, 32, 32);
  for (std::int64_t y = 0; y < 32; ++y)
    for (std::int64_t x = 0; x < 32; ++x) l.at(0, y, x) = static_cast<std::uint8_t>((x / 7 + y / 5) % 5);
  auto t = SpatialTransform<float>::rotation({0.3f});
  auto oh = warp_one_hot(one_hot<float>(l, 5), t);
  for (std::int64_t p = 0; p < 32 * 32; ++p) {
    float s = 0;
    for (int c = 0; c < 5; ++c) {
      const float v = oh[c * 32 * 32 + p];
      CHECK((v == 0.0f || v == 1.0f));
      s += v;
    }
    CHECK(s == 1.0f);
  }
  CHECK(argmax_channels(oh) == warp_labels(l, t));
  CHECK(warp_labels(l, SpatialTransform<float>::identity(1)) == l);
}

TEST_CASE("hallucinator: registration loss drops on a shifted pair") {
  HallucinatorConfig hc;
  hc.height = hc.width = 32;
  Hallucinator<float> hal(hc);
  auto psi = hal.init(1);
  psi.set_requires_grad(true);
  auto moving = row_image(32, 32);
  auto fixed = warp(moving, SpatialTransform<float>::translation({0.1f}, {0.0f}));
  Adam<float> adam(psi);
  auto loss_at = [&] {
    NoGradScope<float> off;
    return trans_loss(hal.hallucinate(psi, moving, fixed).moved, fixed).item();
  };
  const float before = loss_at();
  for (int it = 0; it < 60; ++it) {
    Tape<float> tape;
    TapeScope<float> scope(tape);
    psi.clear_grads();
    tape.backward(trans_loss(hal.hallucinate(psi, moving, fixed).moved, fixed));
    adam.step(psi, psi.gradients(), 0.003);
  }
  CHECK(loss_at() < 0.5f * before);
}
