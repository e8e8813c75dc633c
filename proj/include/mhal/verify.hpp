#pragma once

// Oracle suites shared by `mhal verify` and the acceptance tests.

#include <cstdint>
#include <string>
#include <vector>

namespace mhal {

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0;      // observed error or quantity
  double threshold = 0;  // bound it was held to
  std::string detail;
};

inline void append(std::vector<CheckResult>& to, std::vector<CheckResult> from) {
  to.insert(to.end(), from.begin(), from.end());
}

// Central finite differences at 64-bit on every differentiable primitive.
// Bound 1e-5 relative (1e-4 for grid_sample and max_pool, sampled away from kinks).
std::vector<CheckResult> grad_suite(int instances = 20, std::uint64_t seed = 1);
// Dice, ASD and largest-component against brute-force references on random 32x32 maps.
std::vector<CheckResult> metrics_suite(int instances = 100, std::uint64_t seed = 2);
// Ramp and warmup formulas, plus the EMA contract on scalar probes.
std::vector<CheckResult> schedule_suite();

}  // namespace mhal
