#pragma once

// Layout of a generated data directory.

#include <filesystem>
#include <string>
#include <vector>

#include "mhal/config.hpp"
#include "mhal/trainer.hpp"

namespace mhal {

struct DataDirSummary {
  std::vector<std::pair<std::string, std::int64_t>> files;  // file name, item count
  std::vector<std::uint32_t> labeled_subjects;
};

// Generates, splits and writes every dataset plus dataset.json.
DataDirSummary write_data_dir(const RunConfig& cfg, const std::filesystem::path& dir);
TrainData load_data_dir(const std::filesystem::path& dir);

}  // namespace mhal
