#pragma once

// Sequence-to-sequence layer stacks (LSTM layers followed by per-step dense
// layers) with hand-written backpropagation through time.
//
// A batch of B sequences of T steps with feature size d is stored as a single
// d x (T * B) matrix; column t * B + b holds step t of sample b. Input
// projections and all parameter gradients then reduce to single GEMMs.

#include "selftransfer/common.hpp"

#include <span>
#include <string>
#include <variant>
#include <vector>

namespace selftransfer {

struct SequenceBatch {
  Matrix data;
  Index steps = 0;
  Index batch = 0;

  SequenceBatch() = default;
  SequenceBatch(Matrix values, Index steps_, Index batch_);

  Index features() const { return data.rows(); }
  auto step(Index t) { return data.middleCols(t * batch, batch); }
  auto step(Index t) const { return data.middleCols(t * batch, batch); }
  /// Series of one feature for one sample.
  Vector series(Index sample, Index feature = 0) const;
};

/// Packs equally long series into a 1 x (T * B) batch.
SequenceBatch pack_series(const std::vector<const Vector*>& series);

/// Standard LSTM cell; gate rows are ordered input, forget, cell, output.
struct LstmLayer {
  Matrix w_input;      // 4H x d_in
  Matrix w_recurrent;  // 4H x H
  Vector bias;         // 4H

  Index input_dim() const { return w_input.cols(); }
  Index hidden_dim() const { return w_recurrent.cols(); }
};

enum class Activation { identity, relu };

struct DenseLayer {
  Matrix weight;  // d_out x d_in
  Vector bias;    // d_out
  Activation activation = Activation::identity;

  Index input_dim() const { return weight.cols(); }
  Index output_dim() const { return weight.rows(); }
};

using Layer = std::variant<LstmLayer, DenseLayer>;

struct Network {
  std::vector<Layer> layers;

  Index input_dim() const;
  Index output_dim() const;
  bool empty() const { return layers.empty(); }
};

bool is_recurrent(const Layer& layer);
Index output_dim(const Layer& layer);

/// Describes layer kinds and shapes, e.g. "lstm(1,16)|dense(16,16,relu)".
std::string fingerprint(const Network& net);
Index parameter_count(const Network& net);

/// Every parameter array in a fixed order (weights before biases, layer by layer).
std::vector<std::span<Scalar>> parameter_arrays(Network& net);
std::vector<std::span<const Scalar>> parameter_arrays(const Network& net);

Network zeros_like(const Network& net);
/// Layers of `lower` followed by layers of `upper`.
Network stack(const Network& lower, const Network& upper);

struct LayerCache {
  Matrix output;  // d_out x (T * B)
  Matrix gates;   // LSTM only: 4H x (T * B), post-activation
  Matrix cell;    // LSTM only: H x (T * B)
  Matrix cell_tanh;
};

struct ForwardCache {
  SequenceBatch input;
  std::vector<LayerCache> layers;

  const Matrix& output() const { return layers.back().output; }
};

/// Runs the stack and keeps the activations needed for backward().
/// Throws Error naming the step index when an activation is not finite.
ForwardCache forward(const Network& net, const SequenceBatch& input);

/// Output of the stack only.
SequenceBatch predict(const Network& net, const SequenceBatch& input);

/// Accumulates parameter gradients into `grad` (same shape as `net`).
/// `d_output` is dL/d(final output) and may be empty (no gradient).
/// `injected[l]`, when non-empty, adds dL/d(output of layer l).
/// Returns dL/d(input) when `want_input_grad` is set, otherwise an empty matrix.
Matrix backward(const Network& net, const ForwardCache& cache, const Matrix& d_output,
                const std::vector<Matrix>& injected, Network& grad, bool want_input_grad);

struct SurrogateArch {
  int n_recurrent_layers = 3;
  /// Including the linear output layer.
  int n_dense_layers = 2;
  Index hidden_dim = 200;
  Index input_dim = 1;
  Index output_dim = 1;
};

void validate(const SurrogateArch& arch);

LstmLayer make_lstm(Index input_dim, Index hidden_dim, Rng& rng);
DenseLayer make_dense(Index input_dim, Index output_dim, Activation activation, Rng& rng);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, forget-gate bias 1.
Network init_surrogate(const SurrogateArch& arch, std::uint64_t seed);

/// B x T predictions of a single-output network, one row per sample.
Matrix forward_surrogate(const Network& net, const SequenceBatch& input);

}  // namespace selftransfer
