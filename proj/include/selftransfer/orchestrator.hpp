#pragma once

// Iterative self-transfer schedule: direct training on the small target set,
// then blocks of pseudo-label iterations each followed by one transfer
// iteration, then a final training evaluated once on the test set.

#include "selftransfer/checkpoint.hpp"
#include "selftransfer/data_gen.hpp"
#include "selftransfer/training.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace selftransfer {

enum class IterationKind { direct, pl, dantr, final };

std::string_view to_string(IterationKind kind);
IterationKind iteration_kind_from_string(std::string_view s);

enum class FinalArch { surrogate_default, pluggable };

std::string_view to_string(FinalArch arch);
FinalArch final_arch_from_string(std::string_view s);

struct FrameworkConfig {
  int n_inits = 3;
  int pl_per_block = 2;
  /// Iterations before the final training, the direct one included.
  int max_iterations = 7;
  Scalar stop_epsilon = 0.02;
  /// Consecutive low-reduction iterations that end the run (0 disables early stop).
  int stop_patience = 2;
  std::size_t pseudo_count_per_iter = 500;
  FinalArch final_arch = FinalArch::surrogate_default;
  std::uint64_t master_seed = 0;
  /// Final training on every pseudo dataset of the run instead of the latest one.
  bool accumulate_pseudo = false;
  /// Enlarge the transfer target set with the pseudo samples on which teacher
  /// and student agree best.
  bool enlarge_target = false;
  Scalar enlarge_fraction = 0.1;
};

void validate(const FrameworkConfig& config);

/// Everything a framework run needs besides the data.
struct RunConfig {
  CaseStudyConfig data{};
  SurrogateArch surrogate{};
  /// Used by the final training when final_arch is pluggable.
  SurrogateArch final_surrogate{};
  DanTrArch dantr{};
  TrainConfig train{};
  TrainConfig dantr_train{};
  MkMmdConfig mmd{};
  FrameworkConfig framework{};
};

void validate(const RunConfig& config);

/// Desk-scale settings sized for a single CPU core.
RunConfig desk_scale_config();

struct IterationRecord {
  int index = 0;
  IterationKind kind = IterationKind::direct;
  std::vector<std::uint64_t> seeds;
  std::vector<Scalar> per_seed_val_mse;
  Scalar avg_val_mse = 0;
  /// 1 - avg / previous avg; 0 for the first iteration.
  Scalar relative_reduction = 0;
  /// Per-seed checkpoints, relative to the run directory.
  std::vector<std::string> checkpoints;
  int chosen_init = 0;
  std::string chosen_checkpoint;
  /// Pseudo-label parent (empty for direct).
  std::string parent_checkpoint;
  std::string source_dataset_ref;
  std::string target_dataset_ref;
  /// Set on the final record only.
  std::optional<Scalar> test_mse;
};

struct RunRecord {
  std::uint64_t master_seed = 0;
  std::vector<IterationRecord> iterations;
  int test_accesses = 0;
  bool complete = false;

  const IterationRecord* final_record() const;
};

/// Normalized datasets consumed by the framework.
struct FrameworkData {
  Dataset target;
  Dataset val;
  Dataset test;
  Dataset pool;
  NormalizationParams norm;
};

/// Normalizes a generated case study with its attached parameters.
FrameworkData prepare_data(const CaseStudy& study);

/// Read-once wrapper: every open() is counted so a run can prove the test set
/// was used exactly once.
class SealedDataset {
 public:
  explicit SealedDataset(const Dataset& data) : data_(&data) {}
  const Dataset& open() {
    ++accesses_;
    return *data_;
  }
  int accesses() const { return accesses_; }

 private:
  const Dataset* data_;
  int accesses_ = 0;
};

/// True when the last stop_patience reductions are all below stop_epsilon, or
/// the history already holds max_iterations records.
bool should_stop(const std::vector<IterationRecord>& history, const FrameworkConfig& config);

/// Kind of the iteration at `index` (0 = direct) in the block schedule.
IterationKind scheduled_kind(int index, const FrameworkConfig& config);

/// Seed for one training within one iteration.
std::uint64_t iteration_seed(std::uint64_t master, int iteration, int init);

struct FrameworkHooks {
  /// Called after each persisted iteration; returning false stops the run
  /// early, leaving a resumable directory.
  std::function<bool(const IterationRecord&)> after_iteration;
  std::ostream* log = nullptr;
};

/// Runs (or resumes) the whole schedule in `run_dir`. An existing run
/// directory must hold the same frozen config.
RunRecord run_framework(const RunConfig& config, const FrameworkData& data,
                        const std::filesystem::path& run_dir, const FrameworkHooks& hooks = {});

/// Reads the records file of a run directory.
RunRecord read_run(const std::filesystem::path& run_dir);

/// Single steps, exposed for tests and the CLI. `state` paths are relative to run_dir.
class Framework {
 public:
  Framework(RunConfig config, const FrameworkData& data, std::filesystem::path run_dir,
            FrameworkHooks hooks = {});

  IterationRecord run_direct();
  IterationRecord run_pl_iteration();
  IterationRecord run_dantr_iteration();
  IterationRecord run_final();

  /// Appends a record to the history and the records file.
  void commit(const IterationRecord& record);
  /// Replays persisted records without training.
  void restore(const std::vector<IterationRecord>& records);

  const std::vector<IterationRecord>& history() const { return history_; }
  int test_accesses() const { return test_.accesses(); }
  const std::filesystem::path& run_dir() const { return run_dir_; }

 private:
  int next_index() const { return static_cast<int>(history_.size()); }
  IterationRecord finish(IterationRecord record) const;
  std::string latest_pseudo_ref() const;
  Dataset load_snapshot(const std::string& ref) const;
  std::string save_snapshot(const Dataset& d, const std::string& name) const;
  Network chosen_network() const;
  Dataset transfer_target() const;

  RunConfig config_;
  const FrameworkData* data_;
  std::filesystem::path run_dir_;
  FrameworkHooks hooks_;
  SealedDataset test_;
  std::vector<IterationRecord> history_;
};

}  // namespace selftransfer
