#pragma once

// Read-only summaries of run directories: iteration tables, reduction series
// and prediction overlays (SVG).

#include "selftransfer/orchestrator.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace selftransfer {

struct ReductionSeries {
  std::vector<int> indices;
  std::vector<IterationKind> kinds;
  std::vector<Scalar> avg_val_mse;
  std::vector<Scalar> reductions;
};

ReductionSeries reduction_series(const RunRecord& run);

/// Tab-delimited table: one row per iteration (kind, per-seed MSEs, average,
/// reduction) and a trailing test-MSE line when the run is complete.
std::string summarize_run(const RunRecord& run);
std::string summarize_run(const std::filesystem::path& run_dir);

/// Line chart of relative reduction per iteration.
std::string reduction_svg(const ReductionSeries& series);

/// Writes one SVG per sample id (truth vs prediction, denormalized when the
/// dataset carries normalization parameters) and returns the file paths.
/// The caption holds the per-sample MSE in normalized units.
std::vector<std::filesystem::path> plot_predictions(const Checkpoint& checkpoint,
                                                    const Dataset& dataset,
                                                    const std::vector<std::string>& sample_ids,
                                                    const std::filesystem::path& out_dir);

/// Writes summary.tsv, reductions.svg and, with `plots`, overlays of the
/// chosen model on the validation snapshot under run_dir/report.
std::vector<std::filesystem::path> write_report(const std::filesystem::path& run_dir, bool plots);

}  // namespace selftransfer
