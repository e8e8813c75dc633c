#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mhal/config.hpp"
#include "mhal/datadir.hpp"
#include "mhal/plot.hpp"
#include "mhal/trainer.hpp"

using namespace mhal;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig small_config() {
  return parse_config(R"({
    "data": {"source_subjects": 4, "shots": 2, "target_train": 6, "target_val": 2, "target_test": 3, "seed": 7},
    "train": {"epochs": 2, "train_pairs": 2, "test_pairs": 1, "labeled_batch": 2, "augmented": 2,
              "unlabeled_batch": 3, "unet": {"depth": 2, "base_channels": 4},
              "hallucinator": {"channels": [4, 4], "hidden": 8}}
  })");
}

}  // namespace

TEST_CASE("config: defaults follow the published settings") {
  const auto c = parse_config("{}");
  CHECK(c.train.epochs == 150);
  CHECK(c.train.train_pairs == 16);
  CHECK(c.train.test_pairs == 8);
  CHECK(c.train.labeled_batch == 8);
  CHECK(c.train.augmented == 8);
  CHECK(c.train.unlabeled_batch == 16);
  CHECK(c.train.ema_beta == 0.99);
  CHECK(c.train.schedule.peak_lr == 0.005);
  CHECK(c.train.schedule.warmup_epochs == 30);
  CHECK(c.train.schedule.inner_lr == 0.001);
  CHECK(c.data.shots == 4);
}

TEST_CASE("config: unknown keys and bad values are rejected") {
  CHECK_THROWS_AS(parse_config(R"({"train": {"epochz": 3}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"extra": 1})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"train": {"mode": "best"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"train": {"ema_beta": 2}})"), ConfigError);
  CHECK_THROWS_AS(parse_config("{ not json"), ConfigError);
}

TEST_CASE("config: the echoed config parses back to the same config") {
  auto c = small_config();
  c.train.mode = Mode::meta_hal;
  c.train.hallucinator.kind = TransformKind::dense;
  const auto echo = config_to_json(c);
  CHECK(config_to_json(parse_config(echo)) == echo);
}

TEST_CASE("gen-data: identical seeds give byte-identical files") {
  const auto a = fs::temp_directory_path() / "mhal_app_a", b = fs::temp_directory_path() / "mhal_app_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const auto cfg = small_config();
  const auto summary = write_data_dir(cfg, a);
  write_data_dir(cfg, b);
  CHECK(summary.labeled_subjects.size() == 2);
  for (const auto& e : fs::directory_iterator(a)) CHECK(slurp(e.path()) == slurp(b / e.path().filename()));
  const auto data = load_data_dir(a);
  CHECK(data.labeled_source.size() == 2);
  CHECK(data.source_like_test.size() == 3);
  fs::remove_all(b);

  // Train briefly, evaluate the checkpoint and plot the run.
  const auto run = fs::temp_directory_path() / "mhal_app_run";
  fs::remove_all(run);
  auto tcfg = cfg.train;
  tcfg.mode = Mode::no_adapt;
  Trainer tr(tcfg, data);
  tr.train(run);
  const auto params = load_params<float>(run / "state" / "student.mhck");
  UNet<float> net(infer_unet_config(params));
  const auto report = evaluate_params(net, params, data.target_test);
  CHECK(report.classes.size() == 4);
  const auto csv_path = run / "report.csv";
  write_report(report, run / "report.json", csv_path);
  std::ifstream csv(csv_path);
  int lines = 0;
  for (std::string line; std::getline(csv, line);) ++lines;
  CHECK(lines == 1 + 3);

  const auto p1 = write_plots(run, run / "plots1");
  const auto p2 = write_plots(run, run / "plots2");
  REQUIRE(p1.size() == 3);
  for (std::size_t i = 0; i < p1.size(); ++i) CHECK(slurp(p1[i]) == slurp(p2[i]));
  CHECK(slurp(p1[0]).rfind("<svg", 0) == 0);
  CHECK_THROWS(write_plots(run / "plots1", run / "nothing"));
  fs::remove_all(run);
  fs::remove_all(a);
}

TEST_CASE("plot: box plot draws one box per group") {
  const auto svg = box_plot_svg("t", "y", {{"a", {1, 2, 3, 4}}, {"b", {2, 2.5}}, {"c", {}}});
  std::size_t boxes = 0;
  for (auto pos = svg.find("<rect x="); pos != std::string::npos; pos = svg.find("<rect x=", pos + 1)) ++boxes;
  CHECK(boxes == 1 + 2);  // frame plus two non-empty groups
}
