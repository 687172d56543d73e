#pragma once

#include <string>
#include <vector>

namespace sda::train {

struct SuiteOptions {
  double op_tolerance = 1e-6;
  double composite_tolerance = 1e-4;
  double step = 1e-4;
  std::size_t seeds = 10;
  std::vector<std::string> only;  // empty runs every case
  /// Case whose first recorded backward rule has its input gradients scaled
  /// by fault_scale. Used to prove the suite catches broken rules.
  std::string fault;
  double fault_scale = 1.05;
};

struct SuiteCase {
  std::string name;
  bool composite = false;
  std::size_t seeds = 0;
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  std::string worst;  // "seed N: tensor"
  bool finite = true;
  bool passed = true;
  double seconds = 0.0;
};

struct SuiteReport {
  std::vector<SuiteCase> cases;
  double seconds = 0.0;

  bool passed() const;
  /// One line per case: PASS|FAIL, name, max rel. error, tolerance, seeds.
  std::string text() const;
};

std::vector<std::string> gradcheck_case_names();

/// Double-precision central differences for every op and composite.
SuiteReport run_gradcheck_suite(const SuiteOptions& opts = {});

}  // namespace sda::train
