#pragma once

// Dice, average surface distance, largest-component filtering and
// cross-subject aggregation.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mhal/labels.hpp"

namespace mhal {

struct Mask {
  std::int64_t h = 0, w = 0;
  std::vector<std::uint8_t> on;  // 0 or 1, row-major

  Mask() = default;
  Mask(std::int64_t hh, std::int64_t ww) : h(hh), w(ww), on(static_cast<std::size_t>(hh * ww), 0) {}
  std::int64_t count() const;
  bool empty() const { return count() == 0; }
};

// Binary mask of `cls` in plane b of a label map.
Mask class_mask(const LabelMap& labels, std::int64_t b, std::uint8_t cls);

struct EmptyMaskError : std::runtime_error {
  EmptyMaskError(const std::string& what, int cls) : std::runtime_error(what), class_id(cls) {}
  int class_id;
};

// 2|P n G| / (|P| + |G|); 1 when both are empty.
double dice(const Mask& pred, const Mask& gt);
// Foreground pixels with a background 4-neighbour; the border counts as background.
std::vector<std::pair<std::int64_t, std::int64_t>> boundary_points(const Mask& m);
// Symmetric mean of boundary-to-boundary nearest distances, in pixels.
// Throws EmptyMaskError (class_id = cls) when either mask is empty.
double asd(const Mask& pred, const Mask& gt, int cls = -1);

// Per foreground class, keep only the largest 4-connected component; ties
// go to the component whose first pixel comes first in scan order.
LabelMap largest_component(const LabelMap& labels, int classes);

struct ClassStats {
  std::string name;
  double dice_mean = 0, dice_std = 0;
  double asd_mean = 0, asd_std = 0;
  int asd_sentinels = 0;  // empty predictions or ground truths scored as the image diagonal
};

struct MetricsReport {
  std::vector<ClassStats> classes;  // foreground classes, in label order
  double dice_mean = 0, asd_mean = 0;
  std::vector<std::uint32_t> subjects;
  std::vector<std::vector<double>> dice;  // [subject][class]
  std::vector<std::vector<double>> asd;
  std::vector<std::string> notes;
  double asd_sentinel = 0;
};

// Population std over subjects.
double mean_of(std::span<const double> v);
double std_of(std::span<const double> v);

// Scores hard predictions against ground truth: largest component filtering,
// then per-class, per-subject Dice and ASD.
MetricsReport score_predictions(const LabelMap& pred, const LabelMap& gt, const std::vector<std::uint32_t>& subjects,
                                int classes, const std::vector<std::string>& class_names,
                                bool keep_largest_component = true);

std::string report_json(const MetricsReport& r);
// One row per subject: subject, dice per class, asd per class.
std::string report_csv(const MetricsReport& r);
void write_report(const MetricsReport& r, const std::filesystem::path& json_path, const std::filesystem::path& csv_path);

}  // namespace mhal
