#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sda/tensor/tape.hpp"

namespace sda {

template <typename T>
struct GradTarget {
  std::string name;
  Parameter<T>* param;
};

struct GradCheckEntry {
  std::string name;
  double max_abs_error = 0.0;
  /// max|g_a - g_n| / max(1e-8, max|g_a| + max|g_n|) over the tensor.
  double rel_error = 0.0;
  bool finite = true;
  bool passed = true;
};

struct GradCheckReport {
  std::string label;
  double tolerance = 0.0;
  std::vector<GradCheckEntry> entries;

  bool passed() const;
  double max_rel_error() const;
  std::vector<GradCheckEntry> failures() const;
};

/// Builds the graph on the supplied tape and returns a single-element loss.
/// Must read target values through tape.param() so perturbations are seen.
template <typename T>
using GraphBuilder = std::function<Var<T>(Tape<T>&)>;

/// Compares tape gradients against central differences for every element of
/// every target. Non-finite values are flagged and the sweep continues.
template <typename T>
GradCheckReport grad_check(const GraphBuilder<T>& build, std::span<const GradTarget<T>> targets, double step,
                           double tolerance, std::string label = {});

}  // namespace sda
