#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "mhal/synth.hpp"

using namespace mhal;
namespace fs = std::filesystem;

namespace {

SynthConfig small() {
  SynthConfig c;
  c.source_subjects = 6;
  c.shots = 2;
  c.target_train = 4;
  c.target_val = 2;
  c.target_test = 3;
  c.seed = 21;
  return c;
}

fs::path tmp(const std::string& name) { return fs::temp_directory_path() / name; }

}  // namespace

TEST_CASE("synth: generation is deterministic in the seed") {
  auto a = generate(small()), b = generate(small());
  CHECK(a.source == b.source);
  CHECK(a.target_test == b.target_test);
  auto c = small();
  c.seed = 22;
  CHECK(!(generate(c).source == a.source));
}

TEST_CASE("synth: every class is present and labels stay in range") {
  auto b = generate(small());
  for (std::int64_t i = 0; i < b.source.size(); ++i) {
    std::set<int> seen;
    for (std::int64_t p = 0; p < b.source.plane(); ++p) seen.insert(b.source.labels.values[i * b.source.plane() + p]);
    CHECK(seen.size() == static_cast<std::size_t>(kClasses));
  }
}

TEST_CASE("synth: class_at follows the nesting of the geometry") {
  auto g = sample_geometry(small(), 3);
  CHECK(class_at(g, g.cx, g.cy) == 3);
  CHECK(class_at(g, g.cx + 0.5 * (g.r_inner + g.r_outer), g.cy) == 4);
  CHECK(class_at(g, g.aa.cx, g.aa.cy) == 1);
  CHECK(class_at(g, g.lac.cx, g.lac.cy) == 2);
  CHECK(class_at(g, 0.0, 0.0) == 0);
}

TEST_CASE("synth: source-like map inverts the target intensity remap") {
  DomainDataset t;
  t.domain = Domain::target;
  t.h = t.w = 2;
  t.labels = LabelMap(0, 2, 2);
  const double gamma = 1.5;
  std::vector<float> src{0.1f, 0.3f, 0.6f, 0.9f}, img;
  for (float v : src) img.push_back(static_cast<float>(1.0 - std::pow(v, gamma)));
  t.push(img, 7, nullptr);
  auto s = make_source_like(t, gamma);
  CHECK(s.domain == Domain::source_like);
  for (int i = 0; i < 4; ++i) CHECK(s.images[i] == doctest::Approx(src[i]).epsilon(1e-5));
  CHECK(s.subjects == t.subjects);
}

TEST_CASE("synth: few-shot split keeps k whole subjects") {
  auto b = generate(small());
  auto split = few_shot_split(b.source, 2, 4);
  CHECK(split.labeled_subjects.size() == 2);
  CHECK(split.labeled.size() + split.unlabeled.size() == b.source.size());
  CHECK(split.unlabeled.labeled_indices().empty());
  CHECK(split.labeled.unlabeled_indices().empty());
  for (auto s : split.unlabeled.subjects)
    CHECK(std::find(split.labeled_subjects.begin(), split.labeled_subjects.end(), s) == split.labeled_subjects.end());
  CHECK(few_shot_split(b.source, 2, 4).labeled_subjects == split.labeled_subjects);
  CHECK_THROWS(few_shot_split(b.source, 7, 0));
}

TEST_CASE("synth: file round trip and size") {
  auto b = generate(small());
  auto split = few_shot_split(b.source, 2, 1);
  DomainDataset mixed = split.labeled;
  for (std::int64_t i = 0; i < split.unlabeled.size(); ++i)
    mixed.push(split.unlabeled.image(i), split.unlabeled.subjects[i], nullptr);
  const auto path = tmp("mhal_test_mixed.mhal");
  save_dataset(mixed, path);
  CHECK(fs::file_size(path) == dataset_file_size(mixed));
  CHECK(load_dataset(path) == mixed);
  fs::remove(path);
}

TEST_CASE("synth: corrupted files are rejected") {
  auto b = generate(small());
  const auto path = tmp("mhal_test_bad.mhal");
  save_dataset(b.target_test, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
  }
  CHECK_THROWS_AS(load_dataset(path), FormatError);
  save_dataset(b.target_test, path);
  fs::resize_file(path, fs::file_size(path) - 1);
  CHECK_THROWS_AS(load_dataset(path), FormatError);
  fs::remove(path);
}

TEST_CASE("synth: batches are z-scored and unlabeled items have no labels") {
  auto b = generate(small());
  auto x = image_batch<double>(b.source, {0, 2});
  const auto plane = b.source.plane();
  for (int r = 0; r < 2; ++r) {
    double m = 0, v = 0;
    for (std::int64_t p = 0; p < plane; ++p) m += x[r * plane + p];
    m /= plane;
    for (std::int64_t p = 0; p < plane; ++p) v += (x[r * plane + p] - m) * (x[r * plane + p] - m);
    CHECK(std::abs(m) < 1e-6);
    CHECK(v / plane == doctest::Approx(1.0).epsilon(1e-4));
  }
  auto split = few_shot_split(b.source, 2, 0);
  CHECK_THROWS(label_batch(split.unlabeled, {0}));
}
