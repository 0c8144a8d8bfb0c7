#pragma once

#include <string>

#include "datacl/metrics.hpp"

namespace datacl {

// Scans results_dir for run subdirectories (metrics.json + matrix CSV),
// writes summary.txt / summary.csv and one SVG accuracy chart per run.
// Returns the number of runs found; 0 means nothing to report.
std::size_t write_report(const std::string& results_dir);

// Line chart of per-task accuracy against training progress with an FP line
// and a Forget annotation. `acc` uses the 0-100 scale.
std::string accuracy_chart_svg(const AccuracyMatrix& acc, const std::string& title);

}  // namespace datacl
