#pragma once

#include <string>

#include "datacl/trainer.hpp"

namespace datacl {

// Executes a run and writes metrics.json, metrics.csv, accuracy matrices,
// the per-step log and per-task checkpoints under out_dir. Outputs are
// byte-reproducible for a fixed config. `resume_path` continues from a
// checkpoint written by an earlier (interrupted) run of the same config.
void run_to_files(const RunConfig& cfg, const std::string& out_dir,
                  const std::string& resume_path = "");

// Matrix CSV helpers shared by the runner and the report generator. Run
// outputs carry the 0-100 presentation scale.
void write_accuracy_csv(const AccuracyMatrix& acc, const std::string& path, double scale = 1.0);
AccuracyMatrix read_accuracy_csv(const std::string& path);

}  // namespace datacl
