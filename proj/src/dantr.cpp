#include "selftransfer/dantr.hpp"

namespace selftransfer {

void validate(const DanTrArch& a) {
  if (a.hidden_dim < 1) throw Error("dan-tr arch: hidden_dim must be >= 1");
  if (a.shared_recurrent_layers < 1) throw Error("dan-tr arch: need at least one shared layer");
  if (a.tailored_recurrent_layers < 0 || a.tailored_dense_layers < 1)
    throw Error("dan-tr arch: tailored head needs at least the output layer");
}

namespace {

Network make_head(const DanTrArch& a, Rng& rng) {
  Network head;
  for (int i = 0; i < a.tailored_recurrent_layers; ++i)
    head.layers.emplace_back(make_lstm(a.hidden_dim, a.hidden_dim, rng));
  for (int i = 0; i + 1 < a.tailored_dense_layers; ++i)
    head.layers.emplace_back(make_dense(a.hidden_dim, a.hidden_dim, Activation::relu, rng));
  head.layers.emplace_back(make_dense(a.hidden_dim, a.output_dim, Activation::identity, rng));
  return head;
}

}  // namespace

DanTrParams init_dantr(const DanTrArch& a, std::uint64_t seed) {
  validate(a);
  DanTrParams p;
  {
    Rng rng(derive_seed(seed, 0));
    Index in = a.input_dim;
    for (int i = 0; i < a.shared_recurrent_layers; ++i) {
      p.shared.layers.emplace_back(make_lstm(in, a.hidden_dim, rng));
      in = a.hidden_dim;
    }
  }
  Rng rs(derive_seed(seed, 1));
  p.source = make_head(a, rs);
  Rng rt(derive_seed(seed, 2));
  p.target = make_head(a, rt);
  return p;
}

DanTrParams zeros_like(const DanTrParams& p) {
  return {zeros_like(p.shared), zeros_like(p.source), zeros_like(p.target)};
}

Index parameter_count(const DanTrParams& p) {
  return parameter_count(p.shared) + parameter_count(p.source) + parameter_count(p.target);
}

std::string fingerprint(const DanTrParams& p) {
  return "shared[" + fingerprint(p.shared) + "]source[" + fingerprint(p.source) + "]target[" +
         fingerprint(p.target) + "]";
}

std::vector<std::span<Scalar>> parameter_arrays(DanTrParams& p) {
  auto out = parameter_arrays(p.shared);
  for (auto* n : {&p.source, &p.target}) {
    auto more = parameter_arrays(*n);
    out.insert(out.end(), more.begin(), more.end());
  }
  return out;
}

std::vector<std::span<const Scalar>> parameter_arrays(const DanTrParams& p) {
  auto out = parameter_arrays(p.shared);
  for (const auto* n : {&p.source, &p.target}) {
    auto more = parameter_arrays(*n);
    out.insert(out.end(), more.begin(), more.end());
  }
  return out;
}

Network target_branch(const DanTrParams& p) { return stack(p.shared, p.target); }
Network source_branch(const DanTrParams& p) { return stack(p.shared, p.source); }

Matrix summarize_layer(const Matrix& act, Index T, Index B, bool recurrent, Representation rep) {
  if (recurrent && rep == Representation::final_step) return act.rightCols(B);
  Matrix mean = Matrix::Zero(act.rows(), B);
  for (Index t = 0; t < T; ++t) mean += act.middleCols(t * B, B);
  return mean / static_cast<Scalar>(T);
}

Matrix expand_layer_gradient(const Matrix& g, Index T, Index B, bool recurrent,
                             Representation rep) {
  Matrix out = Matrix::Zero(g.rows(), T * B);
  if (recurrent && rep == Representation::final_step) {
    out.rightCols(B) = g;
    return out;
  }
  const Matrix share = g / static_cast<Scalar>(T);
  for (Index t = 0; t < T; ++t) out.middleCols(t * B, B) = share;
  return out;
}

namespace {

std::vector<Matrix> collect_hidden(const Network& head, const ForwardCache& cache,
                                   const MkMmdConfig& mmd) {
  const auto L = head.layers.size();
  if (static_cast<std::size_t>(mmd.layer_last) >= L)
    throw Error("dan-tr: MMD layer range exceeds the tailored head (" + std::to_string(L) +
                " layers)");
  std::vector<Matrix> hidden(L);
  for (auto l = static_cast<std::size_t>(mmd.layer_first); l <= static_cast<std::size_t>(mmd.layer_last); ++l)
    hidden[l] = summarize_layer(cache.layers[l].output, cache.input.steps, cache.input.batch,
                                is_recurrent(head.layers[l]), mmd.representation);
  return hidden;
}

SequenceBatch as_batch(const ForwardCache& c) {
  return {c.output(), c.input.steps, c.input.batch};
}

}  // namespace

ForwardBundle forward_dantr(const DanTrParams& p, const SequenceBatch& xs, const SequenceBatch& xt,
                            const MkMmdConfig& mmd, bool with_adaptation) {
  if (xs.features() != xt.features()) throw Error("dan-tr: source/target feature mismatch");
  ForwardBundle b;
  b.shared_s = forward(p.shared, xs);
  b.shared_t = forward(p.shared, xt);
  const SequenceBatch hs = as_batch(b.shared_s);
  const SequenceBatch ht = as_batch(b.shared_t);
  b.source_s = forward(p.source, hs);
  b.target_t = forward(p.target, ht);
  b.y_hat_s = as_batch(b.source_s);
  b.y_hat_t = as_batch(b.target_t);
  b.hidden_target = collect_hidden(p.target, b.target_t, mmd);
  if (with_adaptation) {
    b.adapt_t = forward(p.source, ht);
    b.y_hat_st = as_batch(b.adapt_t);
    b.hidden_adapt = collect_hidden(p.source, b.adapt_t, mmd);
    b.has_adaptation = true;
  }
  return b;
}

Scalar mse(const Matrix& prediction, const Matrix& target) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols())
    throw Error("mse: shape mismatch");
  if (prediction.size() == 0) throw Error("mse: empty input");
  return (prediction - target).squaredNorm() / static_cast<Scalar>(prediction.size());
}

DanTrLoss dantr_loss(const ForwardBundle& b, const SequenceBatch& ys, const SequenceBatch& yt,
                     long long n_b, long long N, const MkMmdConfig& mmd,
                     const std::vector<std::vector<Scalar>>* frozen_sigmas) {
  DanTrLoss loss;
  loss.reg_source = mse(b.y_hat_s.data, ys.data);
  loss.reg_target = mse(b.y_hat_t.data, yt.data);
  loss.reg = loss.reg_source + loss.reg_target;
  loss.lambda = mmd_weight(n_b, N);
  if (b.has_adaptation) {
    loss.sigmas = frozen_sigmas ? *frozen_sigmas
                                : layer_bandwidths(b.hidden_adapt, b.hidden_target, mmd);
    loss.mmd = layer_mmd_sum(b.hidden_adapt, b.hidden_target, mmd, loss.sigmas, false).value;
  }
  loss.total = loss.reg + loss.lambda * loss.mmd;
  return loss;
}

DanTrLoss dantr_gradient(const DanTrParams& p, const ForwardBundle& b, const SequenceBatch& ys,
                         const SequenceBatch& yt, long long n_b, long long N,
                         const MkMmdConfig& mmd, const DanTrGradOptions& opt, DanTrParams& grad,
                         const std::vector<std::vector<Scalar>>* frozen_sigmas) {
  DanTrLoss loss;
  loss.reg_source = mse(b.y_hat_s.data, ys.data);
  loss.reg_target = mse(b.y_hat_t.data, yt.data);
  loss.reg = loss.reg_source + loss.reg_target;
  loss.lambda = mmd_weight(n_b, N);

  const Matrix d_ys = 2.0 * (b.y_hat_s.data - ys.data) / static_cast<Scalar>(ys.data.size());
  const Matrix d_yt = 2.0 * (b.y_hat_t.data - yt.data) / static_cast<Scalar>(yt.data.size());

  std::vector<Matrix> inject_target, inject_adapt;
  const bool use_mmd = opt.include_mmd && b.has_adaptation;
  if (use_mmd) {
    loss.sigmas = frozen_sigmas ? *frozen_sigmas
                                : layer_bandwidths(b.hidden_adapt, b.hidden_target, mmd);
    const LayerMmd term = layer_mmd_sum(b.hidden_adapt, b.hidden_target, mmd, loss.sigmas, true);
    loss.mmd = term.value;
    const Index T = b.target_t.input.steps, B = b.target_t.input.batch;
    inject_target.resize(p.target.layers.size());
    inject_adapt.resize(p.source.layers.size());
    for (auto l = static_cast<std::size_t>(mmd.layer_first); l <= static_cast<std::size_t>(mmd.layer_last); ++l) {
      inject_target[l] = loss.lambda * expand_layer_gradient(term.grad_t[l], T, B,
                                                             is_recurrent(p.target.layers[l]),
                                                             mmd.representation);
      if (!opt.detach_adaptation_mmd)
        inject_adapt[l] = loss.lambda * expand_layer_gradient(term.grad_s[l], T, B,
                                                              is_recurrent(p.source.layers[l]),
                                                              mmd.representation);
    }
  } else if (b.has_adaptation) {
    loss.mmd = dantr_loss(b, ys, yt, n_b, N, mmd, frozen_sigmas).mmd;
  }
  loss.total = loss.reg + loss.lambda * loss.mmd;

  // Source path: X_s -> shared -> source head.
  const Matrix dhs = backward(p.source, b.source_s, d_ys, {}, grad.source, true);
  backward(p.shared, b.shared_s, dhs, {}, grad.shared, false);

  // Target path, plus the adaptation path when the MMD term reaches it.
  Matrix dht = backward(p.target, b.target_t, d_yt, inject_target, grad.target, true);
  if (use_mmd && !opt.detach_adaptation_mmd)
    dht += backward(p.source, b.adapt_t, Matrix(), inject_adapt, grad.source, true);
  backward(p.shared, b.shared_t, dht, {}, grad.shared, false);
  return loss;
}

}  // namespace selftransfer
