#include "mhal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "mhal/tensor.hpp"

namespace mhal {

std::int64_t Mask::count() const { return std::count(on.begin(), on.end(), std::uint8_t{1}); }

Mask class_mask(const LabelMap& labels, std::int64_t b, std::uint8_t cls) {
  Mask m(labels.h, labels.w);
  const auto* src = labels.values.data() + b * labels.plane();
  for (std::int64_t i = 0; i < labels.plane(); ++i) m.on[i] = src[i] == cls ? 1 : 0;
  return m;
}

namespace {

void same_shape(const Mask& a, const Mask& b, const char* what) {
  if (a.h != b.h || a.w != b.w) {
    throw ShapeError(std::string(what) + ": mask shapes differ (" + std::to_string(a.h) + "x" + std::to_string(a.w) +
                     " vs " + std::to_string(b.h) + "x" + std::to_string(b.w) + ")");
  }
}

double mean_nearest(const std::vector<std::pair<std::int64_t, std::int64_t>>& from,
                    const std::vector<std::pair<std::int64_t, std::int64_t>>& to) {
  double total = 0;
  for (const auto& [y, x] : from) {
    std::int64_t best = std::numeric_limits<std::int64_t>::max();
    for (const auto& [v, u] : to) best = std::min(best, (y - v) * (y - v) + (x - u) * (x - u));
    total += std::sqrt(static_cast<double>(best));
  }
  return total;
}

}  // namespace

double dice(const Mask& pred, const Mask& gt) {
  same_shape(pred, gt, "dice");
  std::int64_t inter = 0, p = 0, g = 0;
  for (std::size_t i = 0; i < pred.on.size(); ++i) {
    inter += pred.on[i] & gt.on[i];
    p += pred.on[i];
    g += gt.on[i];
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

std::vector<std::pair<std::int64_t, std::int64_t>> boundary_points(const Mask& m) {
  std::vector<std::pair<std::int64_t, std::int64_t>> out;
  auto fg = [&](std::int64_t y, std::int64_t x) {
    return y >= 0 && y < m.h && x >= 0 && x < m.w && m.on[y * m.w + x];
  };
  for (std::int64_t y = 0; y < m.h; ++y)
    for (std::int64_t x = 0; x < m.w; ++x)
      if (fg(y, x) && (!fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1))) out.emplace_back(y, x);
  return out;
}

double asd(const Mask& pred, const Mask& gt, int cls) {
  same_shape(pred, gt, "asd");
  const auto bp = boundary_points(pred);
  const auto bg = boundary_points(gt);
  if (bp.empty() || bg.empty()) {
    throw EmptyMaskError("asd: " + std::string(bp.empty() ? "prediction" : "ground truth") + " mask of class " +
                             std::to_string(cls) + " is empty",
                         cls);
  }
  return (mean_nearest(bp, bg) + mean_nearest(bg, bp)) / static_cast<double>(bp.size() + bg.size());
}

LabelMap largest_component(const LabelMap& labels, int classes) {
  LabelMap out = labels;
  const auto H = labels.h, W = labels.w, P = labels.plane();
  std::vector<std::int32_t> comp(static_cast<std::size_t>(P));
  std::vector<std::int64_t> stack;
  for (std::int64_t b = 0; b < labels.batch; ++b) {
    const auto* src = labels.values.data() + b * P;
    auto* dst = out.values.data() + b * P;
    std::fill(comp.begin(), comp.end(), -1);
    std::vector<std::int64_t> sizes;
    std::vector<std::uint8_t> cls_of;
    for (std::int64_t start = 0; start < P; ++start) {
      const auto c = src[start];
      if (c == 0 || c >= classes || comp[start] >= 0) continue;
      const auto id = static_cast<std::int32_t>(sizes.size());
      sizes.push_back(0);
      cls_of.push_back(c);
      stack.assign(1, start);
      comp[start] = id;
      while (!stack.empty()) {
        const auto i = stack.back();
        stack.pop_back();
        ++sizes[id];
        const auto y = i / W, x = i % W;
        const std::int64_t nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
        for (const auto& n : nb) {
          if (n[0] < 0 || n[0] >= H || n[1] < 0 || n[1] >= W) continue;
          const auto j = n[0] * W + n[1];
          if (src[j] == c && comp[j] < 0) {
            comp[j] = id;
            stack.push_back(j);
          }
        }
      }
    }
    // Components are numbered in scan order of their first pixel, so a strict
    // comparison keeps the earliest among equal sizes.
    std::vector<std::int32_t> keep(static_cast<std::size_t>(classes), -1);
    for (std::int32_t id = 0; id < static_cast<std::int32_t>(sizes.size()); ++id) {
      auto& k = keep[cls_of[id]];
      if (k < 0 || sizes[id] > sizes[k]) k = id;
    }
    for (std::int64_t i = 0; i < P; ++i)
      if (comp[i] >= 0 && keep[src[i]] != comp[i]) dst[i] = 0;
  }
  return out;
}

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double std_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

MetricsReport score_predictions(const LabelMap& pred, const LabelMap& gt, const std::vector<std::uint32_t>& subjects,
                                int classes, const std::vector<std::string>& class_names,
                                bool keep_largest_component) {
  if (pred.batch != gt.batch || pred.h != gt.h || pred.w != gt.w) throw ShapeError("evaluate: prediction/GT shape mismatch");
  if (static_cast<std::int64_t>(subjects.size()) != gt.batch) throw ShapeError("evaluate: subject count mismatch");
  if (static_cast<int>(class_names.size()) != classes) throw std::invalid_argument("evaluate: need one name per class");
  const auto filtered = keep_largest_component ? largest_component(pred, classes) : pred;
  MetricsReport r;
  r.subjects = subjects;
  r.asd_sentinel = std::hypot(static_cast<double>(gt.h), static_cast<double>(gt.w));
  const auto fg = classes - 1;
  r.dice.assign(subjects.size(), std::vector<double>(static_cast<std::size_t>(fg)));
  r.asd = r.dice;
  std::vector<int> sentinels(static_cast<std::size_t>(fg), 0);
  for (std::int64_t b = 0; b < gt.batch; ++b) {
    for (int c = 1; c < classes; ++c) {
      const auto p = class_mask(filtered, b, static_cast<std::uint8_t>(c));
      const auto g = class_mask(gt, b, static_cast<std::uint8_t>(c));
      r.dice[b][c - 1] = dice(p, g);
      try {
        r.asd[b][c - 1] = asd(p, g, c);
      } catch (const EmptyMaskError& e) {
        r.asd[b][c - 1] = r.asd_sentinel;
        ++sentinels[c - 1];
        r.notes.push_back("subject " + std::to_string(subjects[b]) + ": " + e.what() + "; ASD recorded as " +
                          std::to_string(r.asd_sentinel));
      }
    }
  }
  std::vector<double> dcol(subjects.size()), acol(subjects.size());
  for (int c = 0; c < fg; ++c) {
    for (std::size_t s = 0; s < subjects.size(); ++s) {
      dcol[s] = r.dice[s][c];
      acol[s] = r.asd[s][c];
    }
    r.classes.push_back({class_names[c + 1], mean_of(dcol), std_of(dcol), mean_of(acol), std_of(acol), sentinels[c]});
  }
  double dm = 0, am = 0;
  for (const auto& c : r.classes) {
    dm += c.dice_mean;
    am += c.asd_mean;
  }
  r.dice_mean = fg > 0 ? dm / fg : 0.0;
  r.asd_mean = fg > 0 ? am / fg : 0.0;
  return r;
}

std::string report_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["dice_mean"] = r.dice_mean;
  j["asd_mean"] = r.asd_mean;
  j["asd_sentinel"] = r.asd_sentinel;
  auto& cls = j["classes"] = nlohmann::ordered_json::array();
  for (const auto& c : r.classes) {
    cls.push_back({{"name", c.name},
                   {"dice_mean", c.dice_mean},
                   {"dice_std", c.dice_std},
                   {"asd_mean", c.asd_mean},
                   {"asd_std", c.asd_std},
                   {"asd_sentinels", c.asd_sentinels}});
  }
  auto& subj = j["subjects"] = nlohmann::ordered_json::array();
  for (std::size_t s = 0; s < r.subjects.size(); ++s) {
    subj.push_back({{"subject", r.subjects[s]}, {"dice", r.dice[s]}, {"asd", r.asd[s]}});
  }
  j["notes"] = r.notes;
  return j.dump(2) + "\n";
}

std::string report_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << std::setprecision(17) << "subject";
  for (const auto& c : r.classes) os << ",dice_" << c.name;
  for (const auto& c : r.classes) os << ",asd_" << c.name;
  os << "\n";
  for (std::size_t s = 0; s < r.subjects.size(); ++s) {
    os << r.subjects[s];
    for (double v : r.dice[s]) os << "," << v;
    for (double v : r.asd[s]) os << "," << v;
    os << "\n";
  }
  return os.str();
}

void write_report(const MetricsReport& r, const std::filesystem::path& json_path, const std::filesystem::path& csv_path) {
  auto put = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + p.string() + " for writing");
    out << text;
  };
  put(json_path, report_json(r));
  put(csv_path, report_csv(r));
}

}  // namespace mhal
