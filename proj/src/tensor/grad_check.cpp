#include "sda/tensor/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace sda {

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.finite ? e.rel_error : INFINITY);
  return m;
}

std::vector<GradCheckEntry> GradCheckReport::failures() const {
  std::vector<GradCheckEntry> out;
  std::copy_if(entries.begin(), entries.end(), std::back_inserter(out), [](const auto& e) { return !e.passed; });
  return out;
}

namespace {

template <typename T>
double evaluate(const GraphBuilder<T>& build) {
  Tape<T> tape;
  return static_cast<double>(build(tape).value().item());
}

}  // namespace

template <typename T>
GradCheckReport grad_check(const GraphBuilder<T>& build, std::span<const GradTarget<T>> targets, double step,
                           double tolerance, std::string label) {
  GradCheckReport report;
  report.label = std::move(label);
  report.tolerance = tolerance;

  for (const auto& t : targets) t.param->zero_grad();
  {
    Tape<T> tape;
    auto loss = build(tape);
    tape.backward(loss);
  }

  for (const auto& t : targets) {
    GradCheckEntry entry;
    entry.name = t.name;
    auto values = t.param->value.data();
    auto analytic = t.param->grad.data();
    double max_diff = 0.0, max_a = 0.0, max_n = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T original = values[i];
      values[i] = static_cast<T>(original + step);
      const double plus = evaluate(build);
      values[i] = static_cast<T>(original - step);
      const double minus = evaluate(build);
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * step);
      const double ga = static_cast<double>(analytic[i]);
      if (!std::isfinite(numeric) || !std::isfinite(ga)) {
        entry.finite = false;
        continue;
      }
      max_diff = std::max(max_diff, std::abs(ga - numeric));
      max_a = std::max(max_a, std::abs(ga));
      max_n = std::max(max_n, std::abs(numeric));
    }
    entry.max_abs_error = max_diff;
    entry.rel_error = max_diff / std::max(1e-8, max_a + max_n);
    entry.passed = entry.finite && entry.rel_error < tolerance;
    report.entries.push_back(entry);
  }
  return report;
}

template GradCheckReport grad_check<float>(const GraphBuilder<float>&, std::span<const GradTarget<float>>, double,
                                           double, std::string);
template GradCheckReport grad_check<double>(const GraphBuilder<double>&, std::span<const GradTarget<double>>,
                                            double, double, std::string);

}  // namespace sda
