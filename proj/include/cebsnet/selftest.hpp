#pragma once

// Invariant suites covering every module, runnable from the CLI and the
// acceptance harness. Checks run in double precision.

#include <string>
#include <vector>

namespace cebsnet {

struct CheckResult {
  std::string suite;
  std::string name;
  bool pass = true;
  std::string detail;
};

// `scratch_dir` hosts dataset/checkpoint fixtures; it is created and removed.
std::vector<CheckResult> run_selftest(const std::string& scratch_dir);

}  // namespace cebsnet
