#include "selftransfer/mkmmd.hpp"

namespace selftransfer {

void validate(const MkMmdConfig& c) {
  if (c.bandwidth_mode == BandwidthMode::median_ladder) {
    if (c.n_kernels < 1) throw Error("mk-mmd: n_kernels must be >= 1");
    if (!(c.ladder_factor > 1)) throw Error("mk-mmd: ladder_factor must be > 1");
  } else {
    if (c.fixed_sigmas.empty()) throw Error("mk-mmd: fixed bandwidth mode needs fixed_sigmas");
    for (Scalar s : c.fixed_sigmas)
      if (!(s > 0)) throw Error("mk-mmd: fixed sigmas must be positive");
  }
  if (c.layer_first < 0 || c.layer_first > c.layer_last)
    throw Error("mk-mmd: layer range must satisfy 0 <= l1 <= l2");
}

namespace {

void check_layers(const std::vector<Matrix>& hs, const std::vector<Matrix>& ht,
                  const MkMmdConfig& c) {
  validate(c);
  const auto last = static_cast<std::size_t>(c.layer_last);
  if (hs.size() <= last || ht.size() <= last)
    throw Error("layer_mmd_sum: missing layer " + std::to_string(c.layer_last));
  for (auto l = static_cast<std::size_t>(c.layer_first); l <= last; ++l)
    if (hs[l].size() == 0 || ht[l].size() == 0)
      throw Error("layer_mmd_sum: missing layer " + std::to_string(l));
}

}  // namespace

std::vector<std::vector<Scalar>> layer_bandwidths(const std::vector<Matrix>& hs,
                                                  const std::vector<Matrix>& ht,
                                                  const MkMmdConfig& c) {
  check_layers(hs, ht, c);
  std::vector<std::vector<Scalar>> sigmas(hs.size());
  for (auto l = static_cast<std::size_t>(c.layer_first); l <= static_cast<std::size_t>(c.layer_last); ++l)
    sigmas[l] = kernel_bandwidths(hs[l], ht[l], c);
  return sigmas;
}

LayerMmd layer_mmd_sum(const std::vector<Matrix>& hs, const std::vector<Matrix>& ht,
                       const MkMmdConfig& c, const std::vector<std::vector<Scalar>>& sigmas,
                       bool with_gradient) {
  check_layers(hs, ht, c);
  if (sigmas.size() <= static_cast<std::size_t>(c.layer_last))
    throw Error("layer_mmd_sum: bandwidths missing for layer " + std::to_string(c.layer_last));
  LayerMmd out;
  if (with_gradient) {
    out.grad_s.resize(hs.size());
    out.grad_t.resize(ht.size());
  }
  for (auto l = static_cast<std::size_t>(c.layer_first); l <= static_cast<std::size_t>(c.layer_last); ++l) {
    auto term = mk_mmd_fixed(hs[l], ht[l], sigmas[l], c.estimator, with_gradient);
    out.value += term.value;
    if (with_gradient) {
      out.grad_s[l] = std::move(term.grad_s);
      out.grad_t[l] = std::move(term.grad_t);
    }
  }
  return out;
}

LayerMmd layer_mmd_sum(const std::vector<Matrix>& hs, const std::vector<Matrix>& ht,
                       const MkMmdConfig& c, bool with_gradient) {
  return layer_mmd_sum(hs, ht, c, layer_bandwidths(hs, ht, c), with_gradient);
}

Scalar mmd_weight(long long n_b, long long N) {
  if (N < 1) throw Error("mmd_weight: N must be >= 1");
  if (n_b < 0 || n_b > N) throw Error("mmd_weight: n_b must lie in [0, N]");
  return 2.0 / (1.0 + std::exp(-10.0 * static_cast<Scalar>(n_b) / static_cast<Scalar>(N))) - 1.0;
}

}  // namespace selftransfer
