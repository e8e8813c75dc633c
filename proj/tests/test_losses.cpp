#include <cmath>
#include <random>

#include "doctest.h"
#include "mhal/losses.hpp"

using namespace mhal;

namespace {

Tensor<double> rand_t(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(static_cast<std::size_t>(numel(s)));
  for (auto& x : v) x = u(rng);
  return Tensor<double>::from(std::move(s), std::move(v));
}

UNet<double> tiny_net() {
  UNetConfig c;
  c.depth = 2;
  c.base_channels = 3;
  return UNet<double>(c);
}

}  // namespace

TEST_CASE("seg loss: uniform logits give ln(C) cross entropy") {
  LabelMap l(2, 4, 4, 3);
  auto t = seg_loss_terms(Tensor<double>::zeros({2, 5, 4, 4}), l);
  CHECK(t.cross_entropy.item() == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  CHECK(t.total.item() == doctest::Approx(t.cross_entropy.item() + t.dice_loss.item()).epsilon(1e-12));
}

TEST_CASE("seg loss: confident correct logits drive both terms to zero") {
  LabelMap l(1, 4, 4);
  for (std::size_t i = 0; i < l.values.size(); ++i) l.values[i] = static_cast<std::uint8_t>(i % 5);
  auto logits = scale(one_hot<double>(l, 5), 40.0);
  auto t = seg_loss_terms(logits, l);
  CHECK(t.cross_entropy.item() < 1e-12);
  CHECK(t.dice_loss.item() < 1e-5);
}

TEST_CASE("trans loss is the mean squared difference") {
  auto a = Tensor<double>::from({1, 1, 1, 3}, {1, 2, 3});
  auto b = Tensor<double>::from({1, 1, 1, 3}, {0, 2, 5});
  CHECK(trans_loss(a, b).item() == doctest::Approx(5.0 / 3.0));
  CHECK_THROWS_AS(trans_loss(a, Tensor<double>::zeros({1, 1, 3, 1})), ShapeError);
}

TEST_CASE("noise: deterministic, zero when sigma is zero, right scale") {
  auto a = gaussian_noise<double>({4, 1, 32, 32}, 0.05, 3), b = gaussian_noise<double>({4, 1, 32, 32}, 0.05, 3);
  auto c = gaussian_noise<double>({4, 1, 32, 32}, 0.05, 4);
  double ss = 0;
  bool differ = false;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    CHECK(a[i] == b[i]);
    differ = differ || a[i] != c[i];
    ss += a[i] * a[i];
  }
  CHECK(differ);
  CHECK(std::sqrt(ss / a.numel()) == doctest::Approx(0.05).epsilon(0.05));
  const auto z = gaussian_noise<double>({3, 3}, 0.0, 1);
  for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("consistency: vanishes when teacher equals student without warp or noise") {
  auto net = tiny_net();
  auto p = net.init(1);
  auto x = rand_t({2, 1, 16, 16}, 2);
  auto l = consistency_loss(net, p, p, SpatialTransform<double>::identity(2), x, NoiseConfig{0.0, 5});
  CHECK(l.item() < 1e-10);
  auto t = consistency_terms(net, p, p, x, NoiseConfig{0.0, 5});
  CHECK(t.loss.item() < 1e-10);
}

TEST_CASE("consistency: teacher branch carries no gradient, student branch does") {
  auto net = tiny_net();
  auto s = net.init(1), t = net.init(2);
  s.set_requires_grad(true);
  t.set_requires_grad(true);
  auto x = rand_t({2, 1, 16, 16}, 3);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto l = consistency_loss(net, s, t, SpatialTransform<double>::rotation({0.2, -0.1}), x, NoiseConfig{0.05, 1});
  tape.backward(l);
  bool student_grad = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(!t[i].has_grad());
    student_grad = student_grad || s[i].has_grad();
  }
  CHECK(student_grad);
}

TEST_CASE("consistency: translation masks out samples that leave the image") {
  auto net = tiny_net();
  auto p = net.init(1);
  auto x = rand_t({1, 1, 16, 16}, 4);
  const double px = 2.0 / 15.0;
  auto terms = consistency_terms(net, p, p, SpatialTransform<double>::translation({3 * px}, {0.0}), x,
                                 NoiseConfig{0.0, 0});
  // A three-pixel shift leaves three columns without a source pixel, in every class channel.
  double masked = 0;
  for (double v : terms.mask.data()) masked += (v == 0.0);
  CHECK(masked == doctest::Approx(5 * 16 * 3));
  auto identity = consistency_terms(net, p, p, SpatialTransform<double>::identity(1), x, NoiseConfig{0.0, 0});
  for (double v : identity.mask.data()) CHECK(v == 1.0);
}

TEST_CASE("consistency: invariant to a joint permutation of the batch") {
  auto net = tiny_net();
  auto s = net.init(1), t = net.init(2);
  auto x = rand_t({3, 1, 16, 16}, 6);
  auto rot = SpatialTransform<double>::rotation({0.1, 0.2, -0.3});
  const std::vector<std::int64_t> perm{2, 0, 1};
  auto a = consistency_loss(net, s, t, rot, x, NoiseConfig{0.0, 0}).item();
  auto b = consistency_loss(net, s, t, rot.select(perm), gather_batch(x, perm), NoiseConfig{0.0, 0}).item();
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("schedules: ramp and warmup values") {
  ScheduleConfig cfg;
  CHECK(ramp_weight(150, cfg) == 10.0);
  CHECK(ramp_weight(0, cfg) == doctest::Approx(10.0 * std::exp(-5.0)).epsilon(1e-12));
  CHECK(ramp_weight(75, cfg) == doctest::Approx(10.0 * std::exp(-1.25)).epsilon(1e-12));
  CHECK(ramp_weight(400, cfg) == 10.0);
  CHECK(lr_schedule(0, cfg) == 0.0);
  CHECK(lr_schedule(15, cfg) == doctest::Approx(0.0025).epsilon(1e-12));
  CHECK(lr_schedule(30, cfg) == doctest::Approx(0.005).epsilon(1e-12));
  CHECK(lr_schedule(149, cfg) == 0.005);
  cfg.warmup_epochs = -1;
  CHECK_THROWS(cfg.validate());
}
