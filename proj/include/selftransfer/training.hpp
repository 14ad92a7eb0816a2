#pragma once

#include "selftransfer/core_data.hpp"
#include "selftransfer/dantr.hpp"
#include "selftransfer/network.hpp"
#include "selftransfer/optim.hpp"

#include <functional>
#include <optional>
#include <ostream>

namespace selftransfer {

struct TrainConfig {
  long long n_steps = 2000;
  Index batch_size = 16;
  Scalar base_lr = 1e-3;
  Scalar lr_min = 1e-4;
  AdamConfig adam{};
  bool mean_teacher = true;
  Scalar ema_alpha = 0.999;
  Scalar consistency_weight_max = 1.0;
  Scalar consistency_ramp_fraction = 0.3;
  Scalar input_noise_std = 0.01;
  /// Apply the consistency loss inside DAN-TR training as well.
  bool consistency_in_dantr = false;
  /// Per-sample weight of real-labeled samples relative to pseudo-labeled ones.
  Scalar labeled_weight = 1.0;
  /// Rescale gradients whose global norm exceeds this value (0 disables).
  Scalar max_grad_norm = 0.0;
  long long eval_interval = 200;
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& config);

/// Effective EMA weight at a step: the configured alpha, ramped in as
/// 1 - 1/(step + 1) so the teacher is not anchored to the initialization.
Scalar ema_alpha_at(long long step, Scalar alpha);

/// Consistency weight, linearly ramped from 0 over the first ramp fraction of steps.
Scalar consistency_weight_at(long long step, const TrainConfig& config);

struct MetricPoint {
  long long step = 0;
  Scalar train_loss = 0;
  Scalar val_mse = 0;
  /// Teacher validation MSE (NaN when no teacher is kept).
  Scalar val_mse_teacher = 0;
  Scalar reg = 0;
  Scalar mmd = 0;
  Scalar lambda = 0;
  Scalar lr = 0;
  Scalar wall_seconds = 0;
};

struct StepTrace {
  long long step = 0;
  Scalar reg = 0;
  Scalar mmd = 0;
  Scalar lambda = 0;
};

/// Writes one JSON object per metric point (line-delimited).
class MetricsSink {
 public:
  explicit MetricsSink(std::ostream* out = nullptr, std::string tag = {})
      : out_(out), tag_(std::move(tag)) {}
  void record(const MetricPoint& point) const;

 private:
  std::ostream* out_;
  std::string tag_;
};

/// Builds input/output batches from dataset samples.
SequenceBatch input_batch(const Dataset& dataset, const std::vector<std::size_t>& indices);
SequenceBatch output_batch(const Dataset& dataset, const std::vector<std::size_t>& indices);

/// Predicted output series for every sample (chunked forward passes).
std::vector<Vector> predict_dataset(const Network& net, const Dataset& dataset);

/// Mean over samples of the per-sample mean squared error.
Scalar evaluate_mse(const Network& net, const Dataset& dataset);

struct SupervisedResult {
  Network student;
  Network teacher;
  std::vector<MetricPoint> history;
  Scalar student_val_mse = 0;
  Scalar teacher_val_mse = 0;
  Adam optimizer;
  std::string rng_state;
};

/// Minibatch MSE training, optionally with a mean teacher: the teacher is an
/// EMA of the student and a consistency term pulls the student's output on
/// noised inputs toward the teacher's output on clean inputs.
SupervisedResult train_supervised(const SurrogateArch& arch, const Dataset& train,
                                  const TrainConfig& config, const Dataset& val,
                                  const MetricsSink& sink = MetricsSink());

/// Same loop starting from given parameters (used by tests and fine-tuning).
SupervisedResult train_supervised(Network init, const Dataset& train, const TrainConfig& config,
                                  const Dataset& val, const MetricsSink& sink = MetricsSink());

/// Labels `count` pool samples, chosen uniformly without replacement, with
/// the model's predictions. The result is a pseudo-source dataset.
Dataset pseudo_label(const Network& model, const Dataset& pool, std::size_t count,
                     std::uint64_t seed);

struct DanTrOptions {
  /// Drop the MMD term entirely (lambda treated as 0).
  bool disable_mmd = false;
  bool detach_adaptation_mmd = false;
};

struct DanTrResult {
  DanTrParams params;
  std::vector<MetricPoint> history;
  std::vector<StepTrace> trace;
  /// Validation MSE of the target branch.
  Scalar val_mse = 0;
  Adam optimizer;
  std::string rng_state;
};

/// Each step draws a source minibatch and a target minibatch (the target set
/// is reshuffled and recycled when exhausted) and minimizes
/// reg + mmd_weight(step, N) * MK-MMD over all parameters.
DanTrResult train_dantr(const DanTrArch& arch, const Dataset& source, const Dataset& target,
                        const TrainConfig& config, const MkMmdConfig& mmd, const Dataset& val,
                        const DanTrOptions& options = {}, const MetricsSink& sink = MetricsSink());

DanTrResult train_dantr(DanTrParams init, const Dataset& source, const Dataset& target,
                        const TrainConfig& config, const MkMmdConfig& mmd, const Dataset& val,
                        const DanTrOptions& options = {}, const MetricsSink& sink = MetricsSink());

}  // namespace selftransfer
