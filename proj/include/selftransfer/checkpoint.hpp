#pragma once

// JSON checkpoints. Parameter values are written with round-trip precision,
// so a saved network reloads bit-for-bit.

#include "selftransfer/dantr.hpp"
#include "selftransfer/network.hpp"
#include "selftransfer/optim.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace selftransfer {

enum class CheckpointKind { surrogate, dantr };

std::string to_string(CheckpointKind kind);

struct Checkpoint {
  CheckpointKind kind = CheckpointKind::surrogate;
  /// Set for surrogate checkpoints.
  Network network;
  std::optional<Network> teacher;
  /// Predict with the teacher instead of the student.
  bool predict_with_teacher = false;
  /// Set for dantr checkpoints.
  DanTrParams dantr;
  std::optional<Adam> optimizer;
  std::string rng_state;
  std::map<std::string, std::string> metadata;

  std::string fingerprint() const;
  /// The network used for prediction: the surrogate (or its teacher), or the target branch.
  Network predictor() const;
};

Checkpoint make_checkpoint(Network net);
Checkpoint make_checkpoint(DanTrParams params);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& file);

/// Throws Error when the file is malformed or, if `expected_fingerprint` is
/// non-empty, when the stored architecture differs from it.
Checkpoint load_checkpoint(const std::filesystem::path& file,
                           const std::string& expected_fingerprint = {});

}  // namespace selftransfer
