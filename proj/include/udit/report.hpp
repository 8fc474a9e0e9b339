#pragma once
// Chart output for bias reports: one grouped bar chart per robustness
// measure (misclassification rate, drop in confidence, feature distance)
// plus a diversity table, written as byte-deterministic SVG files.

#include <string>
#include <vector>

#include "udit/metrics.hpp"

namespace udit::report {

// One method's report, labeled for the legend (e.g. "baseline", "udit").
struct LabeledReport {
  std::string method;
  metrics::BiasReport report;
};

// Renders the three bar-chart panels and the diversity table into out_dir
// and returns the created file paths in render order. Bars are grouped by
// direction with one bar per method. Rendering the same reports twice
// produces byte-identical files. Empty input or a duplicated
// (method, direction) cell is a ConfigError.
std::vector<std::string> render_report(
    const std::vector<LabeledReport>& reports, const std::string& out_dir);

}  // namespace udit::report
