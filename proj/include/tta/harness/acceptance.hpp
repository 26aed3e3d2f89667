#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tta/harness/config.hpp"
#include "tta/harness/experiments.hpp"

namespace tta::harness {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
};

struct AcceptanceReport {
  std::vector<CriterionResult> criteria;
  double wall_seconds = 0.0;
  bool all_passed() const;
  /// One "criterion N: PASS|FAIL name (detail)" line per criterion.
  std::string format() const;
};

struct AcceptanceOptions {
  /// Repeat the pipeline with the same seed and compare CSV bytes.
  bool repeat_run = true;
  double budget_minutes = 45.0;
};

/// Trains the source model, runs the rotation, gamma and growth experiments
/// and evaluates criteria 1 to 10. CSVs, the checkpoint and report.txt are
/// written to `out_dir`.
AcceptanceReport run_acceptance(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                const AcceptanceOptions& opt = {}, const Logger& log = {});

}  // namespace tta::harness
