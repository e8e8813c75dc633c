#include <cmath>

#include "doctest.h"
#include "mhal/metrics.hpp"
#include "mhal/verify.hpp"

using namespace mhal;

namespace {

Mask square(std::int64_t n, std::int64_t y0, std::int64_t x0, std::int64_t side) {
  Mask m(n, n);
  for (std::int64_t y = y0; y < y0 + side; ++y)
    for (std::int64_t x = x0; x < x0 + side; ++x) m.on[y * n + x] = 1;
  return m;
}

}  // namespace

TEST_CASE("dice: hand cases") {
  CHECK(dice(Mask(4, 4), Mask(4, 4)) == 1.0);
  CHECK(dice(square(8, 0, 0, 2), Mask(8, 8)) == 0.0);
  CHECK(dice(square(8, 0, 0, 2), square(8, 0, 1, 2)) == doctest::Approx(0.5));
}

TEST_CASE("asd: identical masks are zero, shifted squares by hand") {
  CHECK(asd(square(10, 2, 2, 4), square(10, 2, 2, 4)) == 0.0);
  // 3x3 squares one column apart: each has 8 boundary pixels, 4 of which
  // lie on the other's boundary and 4 at distance 1.
  const double d = asd(square(10, 2, 2, 3), square(10, 2, 3, 3));
  CHECK(d == doctest::Approx(8.0 / 16.0));
  CHECK_THROWS_AS(asd(Mask(5, 5), square(5, 1, 1, 2), 3), EmptyMaskError);
  try {
    asd(Mask(5, 5), square(5, 1, 1, 2), 3);
  } catch (const EmptyMaskError& e) {
    CHECK(e.class_id == 3);
  }
}

TEST_CASE("boundary: image edge counts as background") {
  auto full = square(4, 0, 0, 4);
  CHECK(boundary_points(full).size() == 12);
}

TEST_CASE("largest component: keeps the biggest, earliest on ties") {
  LabelMap l(1, 6, 6);
  l.at(0, 0, 0) = 1;
  l.at(0, 0, 1) = 1;
  l.at(0, 5, 5) = 1;
  l.at(0, 5, 4) = 1;
  l.at(0, 3, 3) = 2;
  auto out = largest_component(l, 5);
  CHECK(out.at(0, 0, 0) == 1);
  CHECK(out.at(0, 5, 5) == 0);
  CHECK(out.at(0, 3, 3) == 2);
}

TEST_CASE("metrics: random instances agree with the brute-force references") {
  for (const auto& r : metrics_suite(100, 77)) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.passed);
  }
}

TEST_CASE("score_predictions: sentinel for empty predictions and aggregation") {
  LabelMap gt(2, 8, 8), pred(2, 8, 8);
  for (int b = 0; b < 2; ++b)
    for (int y = 2; y < 5; ++y)
      for (int x = 2; x < 5; ++x) gt.at(b, y, x) = pred.at(b, y, x) = 1;
  for (int y = 0; y < 2; ++y) gt.at(0, y, 7) = 2;
  auto r = score_predictions(pred, gt, {1, 2}, 3, {"BG", "A", "B"});
  REQUIRE(r.classes.size() == 2);
  CHECK(r.classes[0].dice_mean == 1.0);
  CHECK(r.classes[0].asd_mean == 0.0);
  CHECK(r.asd_sentinel == doctest::Approx(std::hypot(8.0, 8.0)));
  CHECK(r.classes[1].asd_sentinels == 2);
  CHECK(r.classes[1].dice_mean == doctest::Approx(0.5));  // subject 0 misses (0), subject 1 has both empty (1)
  CHECK(!r.notes.empty());
}
