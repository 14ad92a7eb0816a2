#pragma once

// Three-branch transfer network: a shared recurrent encoder feeding a
// source-tailored head and a target-tailored head. The adaptation branch runs
// target inputs through the shared encoder and the *source* head, so it owns
// no parameters; its tailored activations are pulled toward the target head's
// by the layer-wise MK-MMD term.

#include "selftransfer/mkmmd.hpp"
#include "selftransfer/network.hpp"

namespace selftransfer {

struct DanTrArch {
  int shared_recurrent_layers = 2;
  int tailored_recurrent_layers = 2;
  /// Including the linear output layer.
  int tailored_dense_layers = 2;
  Index hidden_dim = 128;
  Index input_dim = 1;
  Index output_dim = 1;
};

void validate(const DanTrArch& arch);

struct DanTrParams {
  Network shared;
  Network source;
  Network target;
};

DanTrParams init_dantr(const DanTrArch& arch, std::uint64_t seed);
DanTrParams zeros_like(const DanTrParams& params);
Index parameter_count(const DanTrParams& params);
std::string fingerprint(const DanTrParams& params);
/// shared, then source, then target arrays.
std::vector<std::span<Scalar>> parameter_arrays(DanTrParams& params);
std::vector<std::span<const Scalar>> parameter_arrays(const DanTrParams& params);

/// Shared encoder + target head as one standalone network.
Network target_branch(const DanTrParams& params);
/// Shared encoder + source head (also the adaptation branch).
Network source_branch(const DanTrParams& params);

struct ForwardBundle {
  SequenceBatch y_hat_s;
  SequenceBatch y_hat_t;
  /// Empty when the adaptation branch was skipped.
  SequenceBatch y_hat_st;
  /// One d x B sample set per tailored layer; only the MMD layer range is filled.
  std::vector<Matrix> hidden_adapt;
  std::vector<Matrix> hidden_target;
  bool has_adaptation = false;

  ForwardCache shared_s;
  ForwardCache shared_t;
  ForwardCache source_s;
  ForwardCache target_t;
  ForwardCache adapt_t;
};

ForwardBundle forward_dantr(const DanTrParams& params, const SequenceBatch& x_source,
                            const SequenceBatch& x_target, const MkMmdConfig& mmd,
                            bool with_adaptation = true);

/// One vector per sample from a layer's d x (T * B) activations.
Matrix summarize_layer(const Matrix& activations, Index steps, Index batch, bool recurrent,
                       Representation representation);
/// Adjoint of summarize_layer: spreads a d x B gradient back over time.
Matrix expand_layer_gradient(const Matrix& grad, Index steps, Index batch, bool recurrent,
                             Representation representation);

struct DanTrLoss {
  Scalar total = 0;
  Scalar reg = 0;
  Scalar reg_source = 0;
  Scalar reg_target = 0;
  Scalar mmd = 0;
  Scalar lambda = 0;
  /// Bandwidths used for each MMD layer.
  std::vector<std::vector<Scalar>> sigmas;
};

/// Mean squared error over every entry.
Scalar mse(const Matrix& prediction, const Matrix& target);

/// reg = MSE(y_hat_s, Y_s) + MSE(y_hat_t, Y_t); mmd = layer-wise MK-MMD between
/// adaptation and target tailored activations; lambda = mmd_weight(n_b, N).
/// `frozen_sigmas`, when given, replaces per-batch bandwidth estimation.
DanTrLoss dantr_loss(const ForwardBundle& bundle, const SequenceBatch& y_source,
                     const SequenceBatch& y_target, long long n_b, long long N,
                     const MkMmdConfig& mmd,
                     const std::vector<std::vector<Scalar>>* frozen_sigmas = nullptr);

struct DanTrGradOptions {
  bool include_mmd = true;
  /// Keep MMD gradients out of the adaptation path (source head, shared on X_t).
  bool detach_adaptation_mmd = false;
};

/// Loss plus its gradient, accumulated into `grad`. y_hat_st never receives
/// a regression gradient; the MMD term reaches the source head through the
/// adaptation path and the target head through the target path.
DanTrLoss dantr_gradient(const DanTrParams& params, const ForwardBundle& bundle,
                         const SequenceBatch& y_source, const SequenceBatch& y_target,
                         long long n_b, long long N, const MkMmdConfig& mmd,
                         const DanTrGradOptions& options, DanTrParams& grad,
                         const std::vector<std::vector<Scalar>>* frozen_sigmas = nullptr);

}  // namespace selftransfer
