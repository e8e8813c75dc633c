#include "mhal/datadir.hpp"

#include <fstream>

#include "json.hpp"

namespace mhal {

DataDirSummary write_data_dir(const RunConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto bundle = generate(cfg.data);
  const auto split = few_shot_split(bundle.source, cfg.data.shots, cfg.split_seed);
  DataDirSummary out;
  out.labeled_subjects = split.labeled_subjects;
  auto put = [&](const std::string& name, const DomainDataset& ds) {
    save_dataset(ds, dir / name);
    out.files.emplace_back(name, ds.size());
  };
  put("source_labeled.mhal", split.labeled);
  put("source_unlabeled.mhal", split.unlabeled);
  put("target_train.mhal", bundle.target_train);
  put("source_like_train.mhal", make_source_like(bundle.target_train, cfg.data.gamma));
  put("target_val.mhal", bundle.target_val);
  put("source_like_val.mhal", make_source_like(bundle.target_val, cfg.data.gamma));
  put("target_test.mhal", bundle.target_test);
  put("source_like_test.mhal", make_source_like(bundle.target_test, cfg.data.gamma));

  nlohmann::ordered_json j = nlohmann::ordered_json::parse(config_to_json(cfg))["data"];
  nlohmann::ordered_json side;
  side["generator"] = j;
  side["shots"] = cfg.data.shots;
  side["labeled_subjects"] = out.labeled_subjects;
  side["classes"] = std::vector<std::string>(kClassNames.begin(), kClassNames.end());
  auto& files = side["files"] = nlohmann::ordered_json::array();
  for (const auto& [name, n] : out.files) files.push_back({{"name", name}, {"items", n}});
  side["notes"] =
      "target_* files carry ground truth; training reads it only for the supervised upper bound and for evaluation";
  std::ofstream f(dir / "dataset.json", std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + (dir / "dataset.json").string());
  f << side.dump(2) << "\n";
  return out;
}

TrainData load_data_dir(const std::filesystem::path& dir) {
  TrainData d;
  d.labeled_source = load_dataset(dir / "source_labeled.mhal");
  d.target_train = load_dataset(dir / "target_train.mhal");
  d.source_like_train = load_dataset(dir / "source_like_train.mhal");
  d.target_val = load_dataset(dir / "target_val.mhal");
  d.source_like_val = load_dataset(dir / "source_like_val.mhal");
  d.target_test = load_dataset(dir / "target_test.mhal");
  d.source_like_test = load_dataset(dir / "source_like_test.mhal");
  return d;
}

}  // namespace mhal
