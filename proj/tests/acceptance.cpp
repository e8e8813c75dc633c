// Acceptance suite: one PASS/FAIL line per criterion. Criteria 7 and 8 read
// the experiment runs produced by tools/run_experiments.sh.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "json.hpp"
#include "mhal/config.hpp"
#include "mhal/kernels.hpp"
#include "mhal/trainer.hpp"
#include "mhal/verify.hpp"

using namespace mhal;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Tolerances and thresholds.
constexpr double kGradSeconds = 120.0;
constexpr double kConsistencyNull = 1e-10;
constexpr double kIdentityStart = 1e-6;
constexpr int kMinSeeds = 5;
constexpr double kGapNoAdapt = 10.0;  // Dice points
constexpr double kGapMt = 2.0;
constexpr double kRunSeconds = 30 * 60.0;
constexpr double kSuiteSeconds = 5 * 3600.0;
constexpr int kOneShotSeeds = 4;
constexpr double kTranslationTol = 0.05;
constexpr int kRegistrationSteps = 500;

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fixed(double v, int digits = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

Outcome all_of(const std::vector<CheckResult>& rs) {
  bool ok = true;
  std::string failed;
  for (const auto& r : rs) {
    if (!r.passed) failed += (failed.empty() ? "" : "; ") + r.name + " (" + r.detail + ")";
    ok = ok && r.passed;
  }
  return {ok, ok ? std::to_string(rs.size()) + " checks" : failed};
}

RunConfig desk_config() { return load_config(fs::path(MHAL_SOURCE_DIR) / "configs" / "desk.json"); }

TrainData make_data(const RunConfig& cfg) {
  const auto b = generate(cfg.data);
  TrainData d;
  d.labeled_source = few_shot_split(b.source, cfg.data.shots, cfg.split_seed).labeled;
  d.target_train = b.target_train;
  d.source_like_train = make_source_like(b.target_train, cfg.data.gamma);
  d.target_val = b.target_val;
  d.source_like_val = make_source_like(b.target_val, cfg.data.gamma);
  d.target_test = b.target_test;
  d.source_like_test = make_source_like(b.target_test, cfg.data.gamma);
  return d;
}

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rs = grad_suite(20, 1);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  double worst = 0;
  for (const auto& r : rs) worst = std::max(worst, r.value / r.threshold);
  auto o = all_of(rs);
  o.pass = o.pass && secs < kGradSeconds;
  o.detail = std::to_string(rs.size()) + " primitives x 20 instances, worst error/bound " + sci(worst) + ", " +
             fixed(secs) + " s" + (o.pass ? "" : "; " + o.detail);
  return o;
}

Outcome schedules() {
  std::vector<CheckResult> rs;
  for (auto& r : schedule_suite())
    if (r.name.rfind("ema", 0) != 0) rs.push_back(r);
  auto o = all_of(rs);
  std::string d;
  for (const auto& r : rs) d += (d.empty() ? "" : "; ") + r.detail;
  return {o.pass, d};
}

Outcome ema() {
  std::vector<CheckResult> rs;
  for (auto& r : schedule_suite())
    if (r.name.rfind("ema", 0) == 0) rs.push_back(r);
  auto o = all_of(rs);
  std::string d;
  for (const auto& r : rs) d += (d.empty() ? "" : "; ") + r.name + ": " + r.detail;
  return {o.pass, d};
}

Outcome consistency_null(const RunConfig& cfg, const TrainData& data) {
  UNet<float> net(cfg.train.unet);
  const auto p = net.init(17);
  const auto x = image_batch<float>(data.source_like_train, {0, 1, 2, 3});
  const double l = consistency_loss(net, p, p, SpatialTransform<float>::identity(4), x, NoiseConfig{0.0, 3}).item();
  return {l < kConsistencyNull, "L_con = " + sci(l) + " (bound " + sci(kConsistencyNull) + ")"};
}

Outcome identity_start(RunConfig cfg, const TrainData& data) {
  cfg.train.mode = Mode::full;
  Trainer full(cfg.train, data);
  cfg.train.mode = Mode::meta_seg;
  Trainer seg(cfg.train, data);
  const auto ep = full.episode(1, 0);
  const auto a = full.meta_train_loss(full.state().student, full.state().hallucinator, ep, 1.0, nullptr);
  const auto b = seg.meta_train_loss(seg.state().student, seg.state().hallucinator, ep, 1.0, nullptr);
  const double d = std::abs(a.seg - b.seg);
  return {d < kIdentityStart, "full L_seg " + fixed(a.seg, 6) + ", meta_seg L_seg " + fixed(b.seg, 6) + ", |diff| " +
                                  sci(d) + " (bound " + sci(kIdentityStart) + ")"};
}

struct Run {
  std::string mode;
  std::uint64_t seed = 0;
  double dice = 0, seconds = 0;
  bool ok = false;
  json config;
};

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("missing " + p.string());
  return json::parse(in);
}

std::vector<Run> read_runs(const fs::path& dir) {
  std::vector<Run> runs;
  if (!fs::is_directory(dir)) return runs;
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "run.json")) paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) {
    Run r;
    const auto info = read_json(p / "run.json");
    r.config = read_json(p / "config.json");
    r.mode = info.at("mode").get<std::string>();
    r.seed = r.config.at("train").at("seed").get<std::uint64_t>();
    r.seconds = info.at("wall_seconds").get<double>();
    r.ok = info.at("status").get<std::string>() == "ok";
    if (r.ok) r.dice = 100.0 * read_json(p / "report.json").at("dice_mean").get<double>();
    runs.push_back(std::move(r));
  }
  return runs;
}

bool desk_scale(const json& c, int shots) {
  const auto& d = c.at("data");
  return d.at("height") == 64 && d.at("width") == 64 && d.at("shots") == shots && c.at("train").at("epochs") == 150;
}

Outcome ablation(const fs::path& results) {
  const auto runs = read_runs(results / "4shot");
  if (runs.empty()) return {false, "no runs under " + (results / "4shot").string() + " (run tools/run_experiments.sh)"};
  std::map<std::string, std::vector<double>> dice;
  double total = 0, longest = 0;
  std::string problems;
  for (const auto& r : runs) {
    total += r.seconds;
    longest = std::max(longest, r.seconds);
    if (!r.ok) problems += " " + r.mode + "/seed" + std::to_string(r.seed) + " aborted;";
    if (!desk_scale(r.config, 4)) problems += " " + r.mode + "/seed" + std::to_string(r.seed) + " not at desk scale;";
    if (r.ok) dice[r.mode].push_back(r.dice);
  }
  auto mean = [&](const std::string& m) { return dice.count(m) ? mean_of(dice[m]) : std::nan(""); };
  const std::vector<std::string> order{"full", "meta_hal", "meta_seg", "mt", "no_adapt"};
  std::ostringstream d;
  bool pass = problems.empty();
  for (const auto& m : {"full", "meta_hal", "meta_seg", "mt", "no_adapt", "supervised_only"}) {
    const auto n = dice.count(m) ? dice[m].size() : 0;
    if (n < static_cast<std::size_t>(kMinSeeds)) {
      pass = false;
      problems += std::string(" ") + m + " has " + std::to_string(n) + " seeds;";
    }
    d << m << " " << fixed(mean(m)) << " (n=" << n << ", sd " << (n ? fixed(std_of(dice[m])) : "-") << "), ";
  }
  for (std::size_t i = 0; i + 1 < order.size(); ++i)
    if (!(mean(order[i]) >= mean(order[i + 1]))) {
      pass = false;
      problems += " " + order[i] + " < " + order[i + 1] + ";";
    }
  const double g1 = mean("full") - mean("no_adapt"), g2 = mean("full") - mean("mt");
  if (!(g1 >= kGapNoAdapt)) pass = false, problems += " full-no_adapt " + fixed(g1) + " < 10;";
  if (!(g2 >= kGapMt)) pass = false, problems += " full-mt " + fixed(g2) + " < 2;";
  if (!(mean("supervised_only") > mean("full"))) pass = false, problems += " supervised_only does not exceed full;";
  if (longest > kRunSeconds) pass = false, problems += " a run took " + fixed(longest / 60, 1) + " min;";
  if (total > kSuiteSeconds) pass = false, problems += " suite took " + fixed(total / 3600, 2) + " h;";
  d << "full-no_adapt " << fixed(g1) << ", full-mt " << fixed(g2) << ", longest run " << fixed(longest / 60, 1)
    << " min, suite " << fixed(total / 3600, 2) << " h";
  if (!problems.empty()) d << ";" << problems;
  return {pass, d.str()};
}

Outcome one_shot(const fs::path& results) {
  const auto runs = read_runs(results / "1shot");
  if (runs.empty()) return {false, "no runs under " + (results / "1shot").string() + " (run tools/run_experiments.sh)"};
  std::map<std::string, std::vector<double>> dice;
  int aborted = 0;
  bool scale_ok = true;
  for (const auto& r : runs) {
    if (!r.ok) ++aborted;
    else dice[r.mode].push_back(r.dice);
    scale_ok = scale_ok && desk_scale(r.config, 1);
  }
  const auto nf = dice["full"].size(), nm = dice["mt"].size();
  const double f = nf ? mean_of(dice["full"]) : std::nan(""), m = nm ? mean_of(dice["mt"]) : std::nan("");
  const bool pass = aborted == 0 && scale_ok && nf >= kOneShotSeeds && nm >= kOneShotSeeds && f - m >= kGapMt;
  return {pass, "full " + fixed(f) + " (n=" + std::to_string(nf) + "), mt " + fixed(m) + " (n=" + std::to_string(nm) +
                    "), gap " + fixed(f - m) + ", aborted runs " + std::to_string(aborted) +
                    (scale_ok ? "" : ", some runs not at desk scale")};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism(RunConfig cfg, const TrainData& data) {
  kernels::set_threads(1);
  cfg.train.mode = Mode::full;
  cfg.train.epochs = 3;
  const auto root = fs::temp_directory_path() / "mhal_acceptance_determinism";
  fs::remove_all(root);
  for (const char* name : {"a", "b"}) {
    Trainer t(cfg.train, data);
    t.train(root / name);
  }
  const auto a = slurp(root / "a" / "metrics.csv"), b = slurp(root / "b" / "metrics.csv");
  fs::remove_all(root);
  const bool same = !a.empty() && a == b;
  return {same, "metrics.csv of two single-threaded 3-epoch full runs: " + std::to_string(a.size()) + " bytes, " +
                    (same ? "identical" : "different")};
}

Outcome registration() {
  SynthConfig c;
  c.source_subjects = c.shots = 1;
  c.target_train = c.target_val = c.target_test = 1;
  c.seed = 3;
  const auto b = generate(c);
  const auto moving = image_batch<float>(b.source, {0});
  const float tx = 0.15f, ty = -0.10f;
  const auto fixed_img = warp(moving, SpatialTransform<float>::translation({tx}, {ty}));
  Hallucinator<float> hal(HallucinatorConfig{});
  auto psi = hal.init(1);
  psi.set_requires_grad(true);
  Adam<float> adam(psi);
  for (int it = 0; it < kRegistrationSteps; ++it) {
    Tape<float> tape;
    TapeScope<float> scope(tape);
    psi.clear_grads();
    tape.backward(trans_loss(hal.hallucinate(psi, moving, fixed_img).moved, fixed_img));
    adam.step(psi, psi.gradients(), 1e-3);
  }
  NoGradScope<float> off;
  const auto theta = hal.transform(psi, moving, fixed_img).params;
  const double ex = std::abs(theta[2] - tx), ey = std::abs(theta[5] - ty);
  return {ex < kTranslationTol && ey < kTranslationTol,
          "true (" + fixed(tx, 3) + ", " + fixed(ty, 3) + "), recovered (" + fixed(theta[2], 4) + ", " +
              fixed(theta[5], 4) + "), error " + sci(std::max(ex, ey)) + " (bound 0.05)"};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path results = MHAL_RESULTS_DIR;
  if (const char* env = std::getenv("MHAL_RESULTS"); env && *env) results = env;
  if (argc > 1) results = argv[1];
  const auto cfg = desk_config();
  const auto data = make_data(cfg);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient checks", gradients},
      {"metric oracles", [] { return all_of(metrics_suite(100, 2)); }},
      {"schedules", schedules},
      {"EMA contract", ema},
      {"consistency null case", [&] { return consistency_null(cfg, data); }},
      {"identity start", [&] { return identity_start(cfg, data); }},
      {"ablation ordering", [&] { return ablation(results); }},
      {"1-shot robustness", [&] { return one_shot(results); }},
      {"determinism", [&] { return determinism(cfg, data); }},
      {"registration", registration},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << (i + 1) << " (" << criteria[i].first
              << "): " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
