#pragma once

#include <string>

#include "rflab/config.hpp"

namespace rflab {

struct SweepOptions {
  bool export_data = false;
};

// Executes the full experiment matrix: per seed, pre-training, every
// fine-tuning method, evaluations, and post-hoc sweeps; then the aggregate
// tables. A failing cell is recorded in errors.csv and the rest continues.
void run_sweep(const ExperimentConfig& cfg, const std::string& out_dir,
               const SweepOptions& opts = {});

// Builds the aggregate tables and consolidated summary from the reports
// already on disk.
void write_report(const std::string& out_dir);

int run_cli(int argc, const char* const* argv);

}  // namespace rflab
