#include <cmath>

#include "doctest.h"
#include "mhal/ema.hpp"
#include "mhal/optim.hpp"

using namespace mhal;

namespace {

ParamSet<double> one(double v) {
  ParamSet<double> p;
  p.add("w", Tensor<double>::from({2}, {v, -v}));
  return p;
}

}  // namespace

TEST_CASE("ema: limits of beta and geometric convergence") {
  auto s = one(1.0);
  auto frozen = ema_init(one(3.0), 1.0);
  auto copy = ema_init(one(3.0), 0.0);
  auto mid = ema_init(one(3.0), 0.9);
  CHECK(!frozen.params[0].requires_grad());
  for (int k = 1; k <= 50; ++k) {
    ema_update(frozen, s);
    ema_update(copy, s);
    ema_update(mid, s);
    CHECK(frozen.params[0][0] == 3.0);
    CHECK(copy.params[0][0] == 1.0);
    CHECK(std::abs(mid.params[0][0] - 1.0) == doctest::Approx(2.0 * std::pow(0.9, k)).epsilon(1e-10));
  }
  CHECK(mid.step_count == 50);
  CHECK_THROWS(ema_init(s, 1.5));
}

TEST_CASE("ema: the teacher is a copy, not an alias") {
  auto s = one(1.0);
  auto t = ema_init(s, 0.5);
  s[0].mutable_data()[0] = 7.0;
  CHECK(t.params[0][0] == 1.0);
  ParamSet<double> other;
  other.add("v", Tensor<double>::zeros({2}));
  CHECK_THROWS_AS(ema_update(t, other), ShapeError);
}

TEST_CASE("adam: first step moves each weight by lr against the gradient sign") {
  auto p = one(1.0);
  Adam<double> adam(p);
  adam.step(p, {{0.3, -2.0}}, 0.01);
  CHECK(p[0][0] == doctest::Approx(1.0 - 0.01).epsilon(1e-9));
  CHECK(p[0][1] == doctest::Approx(-1.0 + 0.01).epsilon(1e-9));
  CHECK(adam.steps() == 1);
}

TEST_CASE("adam: minimizes a quadratic") {
  auto p = one(2.0);
  Adam<double> adam(p);
  for (int i = 0; i < 2000; ++i) {
    const auto w = p[0].data();
    adam.step(p, {{2 * (w[0] - 0.5), 2 * (w[1] + 0.25)}}, 0.01);
  }
  CHECK(p[0][0] == doctest::Approx(0.5).epsilon(1e-3));
  CHECK(p[0][1] == doctest::Approx(-0.25).epsilon(1e-3));
}

TEST_CASE("sgd_step returns an updated copy") {
  auto p = one(1.0);
  auto q = sgd_step(p, {{1.0, 2.0}}, 0.1);
  CHECK(p[0][0] == 1.0);
  CHECK(q[0][0] == doctest::Approx(0.9));
  CHECK(q[0][1] == doctest::Approx(-1.2));
  CHECK_THROWS_AS(sgd_step(p, {{1.0}}, 0.1), ShapeError);
}
