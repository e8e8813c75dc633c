// mhal: data generation, training, evaluation, verification and plots.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mhal/config.hpp"
#include "mhal/datadir.hpp"
#include "mhal/kernels.hpp"
#include "mhal/nets.hpp"
#include "mhal/trainer.hpp"
#include "mhal/plot.hpp"
#include "mhal/verify.hpp"

namespace fs = std::filesystem;
using namespace mhal;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kNumeric = 2;

RunConfig config_or_default(const std::string& path) { return path.empty() ? RunConfig{} : load_config(path); }

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + p.string() + " for writing");
  out << s;
}

int cmd_gen_data(const std::string& config, const std::string& out, std::optional<std::uint64_t> seed,
                 std::optional<int> shots, std::optional<std::uint64_t> split_seed) {
  auto cfg = config_or_default(config);
  if (seed) cfg.data.seed = *seed;
  if (shots) cfg.data.shots = *shots;
  if (split_seed) cfg.split_seed = *split_seed;
  cfg.data.validate();
  const fs::path dir = out.empty() ? fs::path(cfg.data_dir) : fs::path(out);
  const auto summary = write_data_dir(cfg, dir);
  for (const auto& [name, n] : summary.files) std::cout << name << ": " << n << " items\n";
  std::cout << "labeled subjects:";
  for (auto s : summary.labeled_subjects) std::cout << " " << s;
  std::cout << "\nwrote " << (dir / "dataset.json").string() << "\n";
  return kOk;
}

int cmd_train(const std::string& config, const std::string& mode, const std::string& out, const std::string& data,
              std::optional<std::uint64_t> seed, std::optional<int> epochs) {
  auto cfg = config_or_default(config);
  if (!mode.empty()) cfg.train.mode = parse_mode(mode);
  if (seed) cfg.train.seed = *seed;
  if (epochs) {
    cfg.train.epochs = *epochs;
  }
  cfg.train.validate();
  fs::path run_dir = out.empty() ? fs::path(cfg.run_dir) : fs::path(out);
  if (const char* env = std::getenv("MHAL_RUN_DIR"); env && *env) run_dir = env;
  cfg.run_dir = run_dir.string();
  if (!data.empty()) cfg.data_dir = data;
  // Record the generator settings of the data actually used.
  if (const auto side = fs::path(cfg.data_dir) / "dataset.json"; fs::exists(side)) {
    std::ifstream in(side);
    const auto j = nlohmann::json::parse(in);
    const auto gen = parse_config(nlohmann::json{{"data", j.at("generator")}}.dump());
    cfg.data = gen.data;
    cfg.split_seed = gen.split_seed;
    cfg.train.hallucinator.height = cfg.data.height;
    cfg.train.hallucinator.width = cfg.data.width;
  }
  const auto train_data = load_data_dir(cfg.data_dir);
  fs::create_directories(run_dir);
  write_text(run_dir / "config.json", config_to_json(cfg));
  Trainer trainer(cfg.train, train_data);
  const auto started = std::chrono::steady_clock::now();
  auto run_info = [&](const char* status) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    nlohmann::ordered_json j = {{"status", status},
                                {"mode", mode_name(cfg.train.mode)},
                                {"seed", cfg.train.seed},
                                {"epochs_completed", trainer.state().epoch},
                                {"threads", kernels::max_threads()},
                                {"wall_seconds", secs}};
    write_text(run_dir / "run.json", j.dump(2) + "\n");
  };
  try {
    trainer.train(run_dir, [](const EpochLog& e) {
      std::cout << "epoch " << e.epoch << "  L_seg " << e.seg << "  L_trans " << e.trans << "  L_con " << e.con
                << "  lambda " << e.lambda_con << "  lr " << e.lr << "  val_dice " << e.val_dice << std::endl;
    });
  } catch (const DivergenceError& e) {
    std::cerr << e.what() << "\nlast good checkpoint kept under " << (run_dir / "state").string() << "\n";
    run_info("aborted");
    return kNumeric;
  }
  const auto report = trainer.evaluate(trainer.test_set(), cfg.train.evaluate_teacher);
  write_report(report, run_dir / "report.json", run_dir / "report.csv");
  const auto other = trainer.evaluate(trainer.test_set(), !cfg.train.evaluate_teacher);
  const std::string tag = cfg.train.evaluate_teacher ? "student" : "teacher";
  write_report(other, run_dir / ("report_" + tag + ".json"), run_dir / ("report_" + tag + ".csv"));
  const auto& c = trainer.state().counters;
  nlohmann::ordered_json counters = {{"seg_terms", c.seg_terms},       {"trans_terms", c.trans_terms},
                                     {"con_terms", c.con_terms},       {"transforms", c.transforms},
                                     {"target_terms", c.target_terms}, {"steps", c.steps}};
  write_text(run_dir / "counters.json", counters.dump(2) + "\n");
  run_info("ok");
  std::cout << "test dice " << report.dice_mean << "  asd " << report.asd_mean << "  (" << mode_name(cfg.train.mode)
            << ", " << tag << " dice " << other.dice_mean << ")\n";
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& report_prefix,
             const std::string& set) {
  if (!fs::exists(checkpoint)) throw std::runtime_error("checkpoint not found: " + checkpoint);
  const auto params = load_params<float>(checkpoint);
  const auto net_cfg = infer_unet_config(params);
  UNet<float> net(net_cfg);
  if (!params.same_layout(net.init(0))) throw FormatError("checkpoint is not a segmenter parameter file");
  const auto ds = load_dataset(fs::path(data) / (set + ".mhal"));
  const auto report = evaluate_params(net, params, ds);
  write_report(report, report_prefix + ".json", report_prefix + ".csv");
  std::cout << "dice " << report.dice_mean << "  asd " << report.asd_mean << "  subjects " << report.subjects.size()
            << "\n";
  for (const auto& c : report.classes) {
    std::cout << "  " << c.name << ": dice " << c.dice_mean << " +- " << c.dice_std << ", asd " << c.asd_mean
              << " +- " << c.asd_std << "\n";
  }
  return kOk;
}

int cmd_verify(const std::string& suite) {
  std::vector<CheckResult> results;
  if (suite == "grad" || suite == "all") append(results, grad_suite());
  if (suite == "metrics" || suite == "all") append(results, metrics_suite());
  if (suite == "schedules" || suite == "all") append(results, schedule_suite());
  if (suite != "grad" && suite != "metrics" && suite != "schedules" && suite != "all") {
    throw CLI::ValidationError("--suite", "expected grad, metrics, schedules or all");
  }
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
    ok = ok && r.passed;
  }
  return ok ? kOk : kUsage;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot domain adaptation with meta-learned hallucination"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "OpenMP threads (0 = runtime default)");

  std::string config, out, mode, data, checkpoint, report, set = "source_like_test", suite = "all", run_dir;
  std::optional<std::uint64_t> seed, split_seed;
  std::optional<int> shots, epochs;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic benchmark");
  gen->add_option("--config", config, "JSON run configuration");
  gen->add_option("--out", out, "Output directory (default: paths.data_dir)");
  gen->add_option("--seed", seed, "Generator seed");
  gen->add_option("--shots", shots, "Labeled source subjects");
  gen->add_option("--split-seed", split_seed, "Seed for the choice of labeled subjects");

  auto* train = app.add_subcommand("train", "Train one arm");
  train->add_option("--config", config, "JSON run configuration");
  train->add_option("--mode", mode, "no_adapt | supervised_only | mt | meta_seg | meta_hal | full");
  train->add_option("--out", out, "Run directory (default: paths.run_dir; MHAL_RUN_DIR overrides)");
  train->add_option("--data", data, "Data directory (default: paths.data_dir)");
  train->add_option("--seed", seed, "Training seed");
  train->add_option("--epochs", epochs, "Override the number of epochs");

  auto* ev = app.add_subcommand("eval", "Evaluate a segmenter checkpoint");
  ev->add_option("--checkpoint", checkpoint, "Segmenter parameter file (.mhck)")->required();
  ev->add_option("--data", data, "Data directory")->required();
  ev->add_option("--report", report, "Report path prefix (writes .json and .csv)")->required();
  ev->add_option("--set", set, "Dataset name inside the data directory");

  auto* ver = app.add_subcommand("verify", "Run the oracle suites");
  ver->add_option("--suite", suite, "grad | metrics | schedules | all");

  auto* plot = app.add_subcommand("plot", "Write SVG figures for runs");
  plot->add_option("--run-dir", run_dir, "A run directory or a directory of runs")->required();
  plot->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }
  if (threads > 0) kernels::set_threads(threads);
  try {
    if (*gen) return cmd_gen_data(config, out, seed, shots, split_seed);
    if (*train) return cmd_train(config, mode, out, data, seed, epochs);
    if (*ev) return cmd_eval(checkpoint, data, report, set);
    if (*ver) return cmd_verify(suite);
    if (*plot) {
      const auto files = write_plots(run_dir, out);
      for (const auto& f : files) std::cout << "wrote " << f << "\n";
      return kOk;
    }
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
