#pragma once

// Multi-kernel maximum mean discrepancy between two sample sets.
//
// Sample sets are matrices with one sample per column (d x n), which is the
// layout the recurrent layers produce for a batch. All kernels are Gaussian
// exp(-|x - y|^2 / (2 sigma^2)) and are averaged with equal weights.

#include "selftransfer/common.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

namespace selftransfer {

enum class BandwidthMode { median_ladder, fixed };
enum class MmdEstimator { biased, unbiased };
/// How a per-step recurrent activation sequence becomes one vector per sample.
/// Dense per-step layers always use the mean over time.
enum class Representation { final_step, mean_over_time };

struct MkMmdConfig {
  int n_kernels = 5;
  BandwidthMode bandwidth_mode = BandwidthMode::median_ladder;
  Scalar ladder_factor = 2.0;
  std::vector<Scalar> fixed_sigmas;
  MmdEstimator estimator = MmdEstimator::biased;
  /// Inclusive range of tailored-head layer indices entering the sum.
  int layer_first = 0;
  int layer_last = 2;
  Representation representation = Representation::final_step;
};

void validate(const MkMmdConfig& config);

template <typename DerivedX, typename DerivedY>
typename DerivedX::Scalar gaussian_kernel(const Eigen::MatrixBase<DerivedX>& x,
                                          const Eigen::MatrixBase<DerivedY>& y,
                                          typename DerivedX::Scalar sigma) {
  if (x.size() != y.size()) throw Error("gaussian_kernel: dimension mismatch");
  if (!(sigma > 0)) throw Error("gaussian_kernel: sigma must be positive");
  return std::exp(-(x - y).squaredNorm() / (2 * sigma * sigma));
}

struct Bandwidth {
  Scalar sigma = 1.0;
  /// Set when every pairwise distance is zero and the fallback sigma = 1 is used.
  bool degenerate = false;
};

/// Median of the non-zero pairwise Euclidean distances over the pooled columns.
template <typename DerivedX, typename DerivedY>
Bandwidth median_bandwidth(const Eigen::MatrixBase<DerivedX>& X,
                           const Eigen::MatrixBase<DerivedY>& Y) {
  const Index nx = X.cols(), ny = Y.cols(), n = nx + ny;
  if (n == 0) throw Error("median_bandwidth: empty pooled set");
  if (nx > 0 && ny > 0 && X.rows() != Y.rows())
    throw Error("median_bandwidth: dimension mismatch");
  auto col = [&](Index i) { return i < nx ? X.col(i).eval() : Y.col(i - nx).eval(); };
  std::vector<Scalar> dist;
  dist.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Index i = 0; i < n; ++i) {
    const auto zi = col(i);
    for (Index j = i + 1; j < n; ++j) {
      const Scalar d = (zi - col(j)).norm();
      if (d > 0) dist.push_back(d);
    }
  }
  if (dist.empty()) return {1.0, true};
  const std::size_t mid = dist.size() / 2;
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
  if (dist.size() % 2 == 1) return {dist[mid], false};
  const Scalar upper = dist[mid];
  const Scalar lower = *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid));
  return {0.5 * (lower + upper), false};
}

/// Kernel bandwidths for one pair of sets: the configured fixed list, or the
/// median ladder sigma_m = median * factor^(m - ceil(M / 2)), m = 1..M.
template <typename DerivedS, typename DerivedT>
std::vector<Scalar> kernel_bandwidths(const Eigen::MatrixBase<DerivedS>& Hs,
                                      const Eigen::MatrixBase<DerivedT>& Ht,
                                      const MkMmdConfig& config) {
  if (config.bandwidth_mode == BandwidthMode::fixed) return config.fixed_sigmas;
  const Scalar median = median_bandwidth(Hs, Ht).sigma;
  const int M = config.n_kernels;
  const int centre = (M + 1) / 2;
  std::vector<Scalar> sigmas;
  for (int m = 1; m <= M; ++m) sigmas.push_back(median * std::pow(config.ladder_factor, m - centre));
  return sigmas;
}

struct MmdValue {
  Scalar value = 0;
  /// d value / d Hs and d value / d Ht, same shapes as the inputs.
  Matrix grad_s;
  Matrix grad_t;
};

namespace detail {

inline void check_sets(Index ns, Index nt, Index ds, Index dt, MmdEstimator est) {
  if (ns == 0 || nt == 0) throw Error("mk_mmd: both sample sets must be non-empty");
  if (ds != dt) throw Error("mk_mmd: dimension mismatch between sample sets");
  if (est == MmdEstimator::unbiased && (ns < 2 || nt < 2))
    throw Error("mk_mmd: unbiased estimator needs at least 2 samples per set");
}

}  // namespace detail

/// MMD^2 estimate under the averaged kernel with explicit sigmas. The
/// gradient treats the sigmas as constants.
template <typename DerivedS, typename DerivedT>
MmdValue mk_mmd_fixed(const Eigen::MatrixBase<DerivedS>& Hs, const Eigen::MatrixBase<DerivedT>& Ht,
                      const std::vector<Scalar>& sigmas, MmdEstimator estimator, bool with_gradient) {
  const Index ns = Hs.cols(), nt = Ht.cols(), n = ns + nt;
  detail::check_sets(ns, nt, Hs.rows(), Ht.rows(), estimator);
  if (sigmas.empty()) throw Error("mk_mmd: no kernel bandwidths");
  for (Scalar s : sigmas)
    if (!(s > 0)) throw Error("mk_mmd: kernel bandwidths must be positive");

  Matrix Z(Hs.rows(), n);
  Z.leftCols(ns) = Hs;
  Z.rightCols(nt) = Ht;

  // Averaged kernel K and its radial derivative factor D = sum_m k_m / (M sigma_m^2).
  const auto M = static_cast<Scalar>(sigmas.size());
  Matrix K(n, n), D(n, n);
  for (Index a = 0; a < n; ++a) {
    K(a, a) = 1.0;
    D(a, a) = 0.0;
    for (Index b = a + 1; b < n; ++b) {
      const Scalar d2 = (Z.col(a) - Z.col(b)).squaredNorm();
      Scalar k = 0, dk = 0;
      for (Scalar s : sigmas) {
        const Scalar km = std::exp(-d2 / (2 * s * s));
        k += km;
        dk += km / (s * s);
      }
      K(a, b) = K(b, a) = k / M;
      D(a, b) = D(b, a) = dk / M;
    }
  }

  const bool unbiased = estimator == MmdEstimator::unbiased;
  const Scalar w_ss = unbiased ? 1.0 / static_cast<Scalar>(ns * (ns - 1)) : 1.0 / static_cast<Scalar>(ns * ns);
  const Scalar w_tt = unbiased ? 1.0 / static_cast<Scalar>(nt * (nt - 1)) : 1.0 / static_cast<Scalar>(nt * nt);
  const Scalar w_st = -1.0 / static_cast<Scalar>(ns * nt);

  Scalar sum_ss = K.topLeftCorner(ns, ns).sum();
  Scalar sum_tt = K.bottomRightCorner(nt, nt).sum();
  if (unbiased) {
    sum_ss -= static_cast<Scalar>(ns);
    sum_tt -= static_cast<Scalar>(nt);
  }
  const Scalar sum_st = K.topRightCorner(ns, nt).sum();

  MmdValue out;
  out.value = w_ss * sum_ss + w_tt * sum_tt + 2.0 * (w_st * sum_st);
  if (with_gradient) {
    // Estimator = sum_ab W_ab K_ab, so d/dz_a = -2 sum_b W_ab D_ab (z_a - z_b).
    Matrix G = D;
    G.topLeftCorner(ns, ns) *= w_ss;
    G.bottomRightCorner(nt, nt) *= w_tt;
    G.topRightCorner(ns, nt) *= w_st;
    G.bottomLeftCorner(nt, ns) *= w_st;
    const Vector row_sum = G.rowwise().sum();
    const Matrix grad = -2.0 * (Z * row_sum.asDiagonal() - Z * G);
    out.grad_s = grad.leftCols(ns);
    out.grad_t = grad.rightCols(nt);
  }
  return out;
}

template <typename DerivedS, typename DerivedT>
MmdValue mk_mmd_with_gradient(const Eigen::MatrixBase<DerivedS>& Hs,
                              const Eigen::MatrixBase<DerivedT>& Ht, const MkMmdConfig& config) {
  detail::check_sets(Hs.cols(), Ht.cols(), Hs.rows(), Ht.rows(), config.estimator);
  return mk_mmd_fixed(Hs, Ht, kernel_bandwidths(Hs, Ht, config), config.estimator, true);
}

template <typename DerivedS, typename DerivedT>
Scalar mk_mmd(const Eigen::MatrixBase<DerivedS>& Hs, const Eigen::MatrixBase<DerivedT>& Ht,
              const MkMmdConfig& config) {
  detail::check_sets(Hs.cols(), Ht.cols(), Hs.rows(), Ht.rows(), config.estimator);
  return mk_mmd_fixed(Hs, Ht, kernel_bandwidths(Hs, Ht, config), config.estimator, false).value;
}

struct LayerMmd {
  Scalar value = 0;
  /// Indexed like the inputs; entries outside the layer range stay empty.
  std::vector<Matrix> grad_s;
  std::vector<Matrix> grad_t;
};

/// Sum of mk_mmd over layers [layer_first, layer_last]; every layer gets its
/// own median bandwidth. `hidden_s[l]` / `hidden_t[l]` hold layer l's sets.
LayerMmd layer_mmd_sum(const std::vector<Matrix>& hidden_s, const std::vector<Matrix>& hidden_t,
                       const MkMmdConfig& config, bool with_gradient = false);

/// Per-layer bandwidths as layer_mmd_sum would choose them (empty outside the range).
std::vector<std::vector<Scalar>> layer_bandwidths(const std::vector<Matrix>& hidden_s,
                                                  const std::vector<Matrix>& hidden_t,
                                                  const MkMmdConfig& config);

/// layer_mmd_sum with bandwidths supplied by the caller instead of re-estimated.
LayerMmd layer_mmd_sum(const std::vector<Matrix>& hidden_s, const std::vector<Matrix>& hidden_t,
                       const MkMmdConfig& config,
                       const std::vector<std::vector<Scalar>>& sigmas, bool with_gradient);

/// Ramp weight 2 / (1 + exp(-10 n_b / N)) - 1 for the MMD term.
Scalar mmd_weight(long long n_b, long long N);

}  // namespace selftransfer
