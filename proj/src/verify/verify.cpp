#include "mhal/verify.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <random>
#include <set>
#include <sstream>

#include "mhal/ema.hpp"
#include "mhal/gradcheck.hpp"
#include "mhal/losses.hpp"
#include "mhal/metrics.hpp"
#include "mhal/ops.hpp"

namespace mhal {

namespace {

using T = double;
using Rng = std::mt19937_64;

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

Tensor<T> rand_t(Shape s, Rng& rng, T lo = -1, T hi = 1) {
  std::uniform_real_distribution<T> u(lo, hi);
  std::vector<T> v(static_cast<std::size_t>(numel(s)));
  for (auto& x : v) x = u(rng);
  return Tensor<T>::from(std::move(s), std::move(v));
}

// Values bounded away from zero by `gap`.
Tensor<T> rand_away_from_zero(Shape s, Rng& rng, T gap) {
  std::uniform_real_distribution<T> u(gap, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<T> v(static_cast<std::size_t>(numel(s)));
  for (auto& x : v) x = sign(rng) ? u(rng) : -u(rng);
  return Tensor<T>::from(std::move(s), std::move(v));
}

// Scalarizes a tensor-valued op with fixed random weights.
ScalarFn<T> weighted(std::function<Tensor<T>(const std::vector<Tensor<T>>&)> op, Shape out_shape, Rng& rng) {
  auto w = rand_t(std::move(out_shape), rng);
  return [op, w](const std::vector<Tensor<T>>& in) { return sum(mul(op(in), w)); };
}

struct GradCase {
  std::string name;
  double bound;
  std::function<std::pair<ScalarFn<T>, std::vector<Tensor<T>>>(Rng&)> make;
};

std::vector<GradCase> grad_cases() {
  std::vector<GradCase> cs;
  auto leaf = [](Tensor<T> t) { return t; };
  cs.push_back({"conv2d", 1e-5, [=](Rng& r) {
                  auto x = leaf(rand_t({2, 2, 5, 4}, r)), w = rand_t({3, 2, 3, 3}, r), b = rand_t({3}, r);
                  return std::pair{weighted([](auto& v) { return conv2d(v[0], v[1], v[2], 1, 1); }, {2, 3, 5, 4}, r),
                                   std::vector{x, w, b}};
                }});
  cs.push_back({"conv2d_stride2", 1e-5, [=](Rng& r) {
                  auto x = rand_t({2, 2, 6, 6}, r), w = rand_t({2, 2, 3, 3}, r), b = rand_t({2}, r);
                  return std::pair{weighted([](auto& v) { return conv2d(v[0], v[1], v[2], 2, 1); }, {2, 2, 3, 3}, r),
                                   std::vector{x, w, b}};
                }});
  cs.push_back({"grid_sample", 1e-4, [=](Rng& r) {
                  auto x = rand_t({2, 2, 5, 6}, r);
                  // Keep sample points off integer pixel positions where bilinear weights kink.
                  std::uniform_real_distribution<T> u(-1.1, 1.1);
                  std::vector<T> g(2 * 4 * 3 * 2);
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    const T n = (i % 2 == 0) ? 6 : 5;
                    T v;
                    do {
                      v = u(r);
                    } while (std::abs((v + 1) * (n - 1) / 2 - std::round((v + 1) * (n - 1) / 2)) < 1e-3);
                    g[i] = v;
                  }
                  auto grid = Tensor<T>::from({2, 4, 3, 2}, g);
                  return std::pair{weighted([](auto& v) { return grid_sample(v[0], v[1]); }, {2, 2, 4, 3}, r),
                                   std::vector{x, grid}};
                }});
  cs.push_back({"relu", 1e-5, [=](Rng& r) {
                  auto x = rand_away_from_zero({2, 3, 4}, r, 0.05);
                  return std::pair{weighted([](auto& v) { return relu(v[0]); }, {2, 3, 4}, r), std::vector{x}};
                }});
  cs.push_back({"leaky_relu", 1e-5, [=](Rng& r) {
                  auto x = rand_away_from_zero({2, 3, 4}, r, 0.05);
                  return std::pair{weighted([](auto& v) { return leaky_relu(v[0], 0.01); }, {2, 3, 4}, r),
                                   std::vector{x}};
                }});
  cs.push_back({"tanh", 1e-5, [=](Rng& r) {
                  auto x = rand_t({2, 3, 4}, r, -2, 2);
                  return std::pair{weighted([](auto& v) { return mhal::tanh(v[0]); }, {2, 3, 4}, r), std::vector{x}};
                }});
  cs.push_back({"max_pool2d", 1e-4, [=](Rng& r) {
                  // Distinct values spaced well beyond the difference step, so no window is near a tie.
                  std::vector<T> v(2 * 2 * 4 * 6);
                  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.01 * static_cast<T>(i);
                  std::shuffle(v.begin(), v.end(), r);
                  auto x = Tensor<T>::from({2, 2, 4, 6}, v);
                  return std::pair{weighted([](auto& in) { return max_pool2d(in[0]); }, {2, 2, 2, 3}, r),
                                   std::vector{x}};
                }});
  cs.push_back({"upsample_bilinear2x", 1e-5, [=](Rng& r) {
                  auto x = rand_t({2, 2, 3, 4}, r);
                  return std::pair{weighted([](auto& v) { return upsample_bilinear2x(v[0]); }, {2, 2, 6, 8}, r),
                                   std::vector{x}};
                }});
  cs.push_back({"instance_norm", 1e-5, [=](Rng& r) {
                  auto x = rand_t({2, 3, 4, 4}, r);
                  return std::pair{weighted([](auto& v) { return instance_norm(v[0]); }, {2, 3, 4, 4}, r),
                                   std::vector{x}};
                }});
  cs.push_back({"softmax_channels", 1e-5, [=](Rng& r) {
                  auto x = rand_t({2, 4, 3, 3}, r, -3, 3);
                  return std::pair{weighted([](auto& v) { return softmax_channels(v[0]); }, {2, 4, 3, 3}, r),
                                   std::vector{x}};
                }});
  cs.push_back({"add_sub_mul_scale", 1e-5, [=](Rng& r) {
                  auto a = rand_t({2, 3}, r), b = rand_t({2, 3}, r);
                  return std::pair{weighted([](auto& v) { return scale(mul(add(v[0], v[1]), sub(v[0], v[1])), 1.7); },
                                            {2, 3}, r),
                                   std::vector{a, b}};
                }});
  cs.push_back({"concat_channels", 1e-5, [=](Rng& r) {
                  auto a = rand_t({2, 1, 3, 3}, r), b = rand_t({2, 2, 3, 3}, r);
                  return std::pair{weighted([](auto& v) { return concat_channels(v[0], v[1]); }, {2, 3, 3, 3}, r),
                                   std::vector{a, b}};
                }});
  cs.push_back({"concat_batch_gather", 1e-5, [=](Rng& r) {
                  auto a = rand_t({2, 1, 3, 3}, r), b = rand_t({1, 1, 3, 3}, r);
                  return std::pair{weighted([](auto& v) { return gather_batch(concat_batch(v[0], v[1]), {2, 0, 2, 1}); },
                                            {4, 1, 3, 3}, r),
                                   std::vector{a, b}};
                }});
  cs.push_back({"reshape_mean", 1e-5, [=](Rng& r) {
                  auto a = rand_t({2, 6}, r);
                  auto w = rand_t({3, 4}, r);
                  return std::pair{ScalarFn<T>([w](auto& v) { return mean(mul(reshape(v[0], {3, 4}), w)); }),
                                   std::vector{a}};
                }});
  cs.push_back({"mse", 1e-5, [=](Rng& r) {
                  auto a = rand_t({2, 5}, r), b = rand_t({2, 5}, r);
                  return std::pair{ScalarFn<T>([](auto& v) { return mse(v[0], v[1]); }), std::vector{a, b}};
                }});
  cs.push_back({"masked_mse", 1e-5, [=](Rng& r) {
                  auto a = rand_t({2, 5}, r), b = rand_t({2, 5}, r);
                  std::vector<T> m(10);
                  for (std::size_t i = 0; i < m.size(); ++i) m[i] = (i % 3 == 0) ? 0.0 : 1.0;
                  auto mask = Tensor<T>::from({2, 5}, m);
                  return std::pair{ScalarFn<T>([mask](auto& v) { return masked_mse(v[0], v[1], mask); }),
                                   std::vector{a, b}};
                }});
  cs.push_back({"cross_entropy", 1e-5, [=](Rng& r) {
                  auto x = rand_t({2, 4, 3, 3}, r, -2, 2);
                  LabelMap l(2, 3, 3);
                  std::uniform_int_distribution<int> c(0, 3);
                  for (auto& v : l.values) v = static_cast<std::uint8_t>(c(r));
                  return std::pair{ScalarFn<T>([l](auto& v) { return cross_entropy(v[0], l); }), std::vector{x}};
                }});
  cs.push_back({"soft_dice", 1e-5, [=](Rng& r) {
                  auto p = rand_t({2, 3, 3, 3}, r, 0.05, 1), g = rand_t({2, 3, 3, 3}, r, 0, 1);
                  return std::pair{ScalarFn<T>([](auto& v) { return soft_dice(v[0], v[1], 1); }), std::vector{p, g}};
                }});
  cs.push_back({"linear", 1e-5, [=](Rng& r) {
                  auto x = rand_t({3, 4}, r), w = rand_t({2, 4}, r), b = rand_t({2}, r);
                  return std::pair{weighted([](auto& v) { return linear(v[0], v[1], v[2]); }, {3, 2}, r),
                                   std::vector{x, w, b}};
                }});
  cs.push_back({"affine_grid", 1e-5, [=](Rng& r) {
                  auto th = rand_t({2, 2, 3}, r);
                  return std::pair{weighted([](auto& v) { return affine_grid(v[0], 3, 4); }, {2, 3, 4, 2}, r),
                                   std::vector{th}};
                }});
  cs.push_back({"displacement_grid", 1e-5, [=](Rng& r) {
                  auto f = rand_t({1, 2, 3, 4}, r);
                  return std::pair{weighted([](auto& v) { return displacement_grid(v[0]); }, {1, 3, 4, 2}, r),
                                   std::vector{f}};
                }});
  cs.push_back({"smoothness_penalty", 1e-5, [=](Rng& r) {
                  auto f = rand_t({2, 2, 4, 3}, r);
                  return std::pair{ScalarFn<T>([](auto& v) { return smoothness_penalty(v[0]); }), std::vector{f}};
                }});
  return cs;
}

// --- independent references for the metrics suite -------------------------

double dice_reference(const Mask& a, const Mask& b) {
  std::set<std::int64_t> sa, sb, inter;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(a.on.size()); ++i) {
    if (a.on[i]) sa.insert(i);
    if (b.on[i]) sb.insert(i);
  }
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(inter, inter.begin()));
  if (sa.empty() && sb.empty()) return 1.0;
  return 2.0 * static_cast<double>(inter.size()) / static_cast<double>(sa.size() + sb.size());
}

std::vector<std::pair<double, double>> edge_reference(const Mask& m) {
  std::vector<std::pair<double, double>> pts;
  for (std::int64_t y = 0; y < m.h; ++y)
    for (std::int64_t x = 0; x < m.w; ++x) {
      if (!m.on[y * m.w + x]) continue;
      bool edge = y == 0 || x == 0 || y == m.h - 1 || x == m.w - 1;
      if (!edge) edge = !m.on[(y - 1) * m.w + x] || !m.on[(y + 1) * m.w + x] || !m.on[y * m.w + x - 1] || !m.on[y * m.w + x + 1];
      if (edge) pts.emplace_back(static_cast<double>(y), static_cast<double>(x));
    }
  return pts;
}

double asd_reference(const Mask& a, const Mask& b) {
  const auto pa = edge_reference(a), pb = edge_reference(b);
  double total = 0;
  for (const auto& p : pa) {
    double best = 1e300;
    for (const auto& q : pb) best = std::min(best, std::hypot(p.first - q.first, p.second - q.second));
    total += best;
  }
  for (const auto& q : pb) {
    double best = 1e300;
    for (const auto& p : pa) best = std::min(best, std::hypot(p.first - q.first, p.second - q.second));
    total += best;
  }
  return total / static_cast<double>(pa.size() + pb.size());
}

LabelMap lcc_reference(const LabelMap& in, int classes) {
  LabelMap out = in;
  const auto H = in.h, W = in.w;
  for (int c = 1; c < classes; ++c) {
    std::vector<int> seen(static_cast<std::size_t>(H * W), 0);
    std::vector<std::vector<std::int64_t>> comps;
    for (std::int64_t i = 0; i < H * W; ++i) {
      if (in.values[i] != c || seen[i]) continue;
      std::deque<std::int64_t> q{i};
      seen[i] = 1;
      comps.emplace_back();
      while (!q.empty()) {
        const auto k = q.front();
        q.pop_front();
        comps.back().push_back(k);
        const auto y = k / W, x = k % W;
        for (auto [dy, dx] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
          const auto ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
          const auto j = ny * W + nx;
          if (in.values[j] == c && !seen[j]) {
            seen[j] = 1;
            q.push_back(j);
          }
        }
      }
    }
    std::size_t best = 0;
    for (std::size_t k = 1; k < comps.size(); ++k) {
      const auto root = [](const std::vector<std::int64_t>& v) { return *std::min_element(v.begin(), v.end()); };
      if (comps[k].size() > comps[best].size() ||
          (comps[k].size() == comps[best].size() && root(comps[k]) < root(comps[best])))
        best = k;
    }
    for (std::size_t k = 0; k < comps.size(); ++k)
      if (k != best)
        for (auto i : comps[k]) out.values[i] = 0;
  }
  return out;
}

Mask random_mask(Rng& rng, std::int64_t n) {
  Mask m(n, n);
  std::uniform_int_distribution<int> blobs(1, 4);
  std::uniform_real_distribution<double> pos(0, static_cast<double>(n)), rad(1.5, 8.0), flip(0, 1);
  const int k = blobs(rng);
  for (int b = 0; b < k; ++b) {
    const double cy = pos(rng), cx = pos(rng), r = rad(rng);
    for (std::int64_t y = 0; y < n; ++y)
      for (std::int64_t x = 0; x < n; ++x)
        if (std::hypot(y - cy, x - cx) <= r) m.on[y * n + x] = 1;
  }
  for (auto& v : m.on)
    if (flip(rng) < 0.03) v ^= 1;
  if (m.empty()) m.on[static_cast<std::size_t>(n * n / 2)] = 1;
  return m;
}

}  // namespace

std::vector<CheckResult> grad_suite(int instances, std::uint64_t seed) {
  std::vector<CheckResult> out;
  Rng rng(seed);
  for (const auto& c : grad_cases()) {
    double worst = 0;
    std::string where;
    for (int i = 0; i < instances; ++i) {
      auto [fn, inputs] = c.make(rng);
      const auto rep = grad_check_report<T>(fn, inputs, 1e-6);
      if (rep.max_rel_error > worst) {
        worst = rep.max_rel_error;
        where = "instance " + std::to_string(i) + ", input " + std::to_string(rep.worst_input) + ", element " +
                std::to_string(rep.worst_element);
      }
    }
    out.push_back({"grad " + c.name, worst < c.bound, worst, c.bound,
                   "max relative error " + fmt(worst) + " over " + std::to_string(instances) + " instances (bound " +
                       fmt(c.bound) + ")" + (where.empty() ? "" : ", worst at " + where)});
  }
  return out;
}

std::vector<CheckResult> metrics_suite(int instances, std::uint64_t seed) {
  Rng rng(seed);
  int dice_bad = 0, lcc_bad = 0;
  double asd_err = 0;
  for (int i = 0; i < instances; ++i) {
    const auto a = random_mask(rng, 32), b = random_mask(rng, 32);
    if (dice(a, b) != dice_reference(a, b) || dice(a, b) != dice(b, a)) ++dice_bad;
    asd_err = std::max(asd_err, std::abs(asd(a, b) - asd_reference(a, b)));
    LabelMap l(1, 32, 32);
    std::uniform_int_distribution<int> cls(0, 4);
    std::uniform_real_distribution<double> u(0, 1);
    // Piecewise-constant labels with speckle so classes split into several components.
    for (std::int64_t y = 0; y < 32; ++y)
      for (std::int64_t x = 0; x < 32; ++x) l.at(0, y, x) = static_cast<std::uint8_t>(((y / 5) * 7 + (x / 6) * 3) % 5);
    for (auto& v : l.values)
      if (u(rng) < 0.3) v = static_cast<std::uint8_t>(cls(rng));
    const auto got = largest_component(l, 5);
    if (!(got == lcc_reference(l, 5)) || !(largest_component(got, 5) == got)) ++lcc_bad;
  }
  const auto n = std::to_string(instances);
  return {
      {"metrics dice", dice_bad == 0, static_cast<double>(dice_bad), 0,
       std::to_string(dice_bad) + " of " + n + " mask pairs differ from the set-arithmetic reference"},
      {"metrics asd", asd_err < 1e-9, asd_err, 1e-9,
       "max |asd - all-pairs reference| = " + fmt(asd_err) + " over " + n + " pairs (bound 1e-9)"},
      {"metrics largest_component", lcc_bad == 0, static_cast<double>(lcc_bad), 0,
       std::to_string(lcc_bad) + " of " + n + " label maps differ from the flood-fill reference"},
  };
}

std::vector<CheckResult> schedule_suite() {
  std::vector<CheckResult> out;
  const ScheduleConfig cfg;
  const double at_end = ramp_weight(cfg.horizon, cfg);
  out.push_back({"ramp at T", at_end == 10.0, at_end, 10.0, "lambda(" + std::to_string(cfg.horizon) + ") = " + fmt(at_end)});
  const double at0 = ramp_weight(0, cfg);
  const double oracle0 = 10.0 * std::exp(-5.0);
  out.push_back({"ramp at 0", std::abs(at0 - oracle0) < 1e-9 && std::abs(at0 - 0.0673794700) < 1e-9,
                 std::abs(at0 - oracle0), 1e-9, "lambda(0) = " + std::to_string(at0) + ", 10 e^-5 = " + std::to_string(oracle0)});
  bool mono = true;
  for (int t = 1; t <= cfg.horizon; ++t) mono = mono && ramp_weight(t, cfg) >= ramp_weight(t - 1, cfg);
  out.push_back({"ramp monotone", mono, 0, 0, "nondecreasing on the integer grid 0..T"});
  double lin = 0;
  for (int k = 0; k <= 300; ++k) {
    const double e = 30.0 * k / 300.0;
    lin = std::max(lin, std::abs(lr_schedule(e, cfg) - 0.005 * e / 30.0));
  }
  const bool lr_ok = lr_schedule(0, cfg) == 0.0 && std::abs(lr_schedule(30, cfg) - 0.005) < 1e-12 && lin < 1e-12 &&
                     lr_schedule(90, cfg) == 0.005;
  out.push_back({"lr warmup", lr_ok, lin, 1e-12,
                 "lr(0) = " + fmt(lr_schedule(0, cfg)) + ", lr(30) = " + fmt(lr_schedule(30, cfg)) +
                     ", max deviation from the line " + fmt(lin)});

  auto probe = [](double teacher_value, double student_value) {
    ParamSet<double> p;
    p.add("w", Tensor<double>::from({1}, {teacher_value}));
    ParamSet<double> s;
    s.add("w", Tensor<double>::from({1}, {student_value}));
    return std::pair{p, s};
  };
  {
    auto [t, s] = probe(0.37, -1.2);
    auto st = ema_init(t, 1.0);
    for (int i = 0; i < 5; ++i) ema_update(st, s);
    out.push_back({"ema beta=1 freezes", st.params[0][0] == 0.37, st.params[0][0], 0.37, "teacher stays at 0.37"});
  }
  {
    auto [t, s] = probe(0.37, -1.2);
    auto st = ema_init(t, 0.0);
    ema_update(st, s);
    out.push_back({"ema beta=0 copies", st.params[0][0] == -1.2, st.params[0][0], -1.2, "teacher equals student"});
  }
  {
    auto [t, s] = probe(1.0, 0.0);
    auto st = ema_init(t, 0.99);
    double worst = 0;
    double gap = 1.0;
    for (int i = 0; i < 200; ++i) {
      ema_update(st, s);
      const double next = std::abs(st.params[0][0] - s[0][0]);
      worst = std::max(worst, std::abs(next - 0.99 * gap));
      gap = next;
    }
    out.push_back({"ema geometric factor", worst < 1e-12, worst, 1e-12,
                   "max | |t-s|_k - 0.99 |t-s|_(k-1) | over 200 steps = " + fmt(worst)});
  }
  return out;
}

}  // namespace mhal
