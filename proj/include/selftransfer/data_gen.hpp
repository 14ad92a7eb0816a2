#pragma once

#include "selftransfer/core_data.hpp"

#include <array>
#include <filesystem>
#include <utility>

namespace selftransfer {

struct SineMixConfig {
  int n_components = 3;
  std::pair<Scalar, Scalar> period_range{0.8, 6.0};
  std::pair<Scalar, Scalar> amplitude_range{0.2, 1.0};
  Index length = 256;
  Scalar dt = 0.05;
  /// When set, the series is rescaled so that max|u| equals this value.
  std::optional<Scalar> target_peak;
  /// Subtract u(0) before rescaling so the history starts from rest.
  bool start_at_rest = false;
};

void validate(const SineMixConfig& config);

/// Superposition of sinusoids with random amplitudes, periods and phases,
/// sampled at config.dt. Deterministic per seed.
Vector gen_sine_mix(const SineMixConfig& config, std::uint64_t seed);

/// Smooth hysteretic spring (Bouc-Wen). With beta = gamma = 0 and A = 1 the
/// model is linear elastic with stiffness k.
struct BoucWenParams {
  Scalar k = 100.0;
  Scalar alpha = 0.1;
  Scalar A = 1.0;
  Scalar beta = 0.5;
  Scalar gamma = 0.5;
  Scalar n_exp = 1.0;
  /// Inner RK4 step in seconds; non-positive means dt / 10.
  Scalar dt_sub = 0.0;
};

void validate(const BoucWenParams& params, Scalar dt);

/// Hysteretic variable z(t) and restoring force r(t) at the sample points.
struct BoucWenTrace {
  Vector z;
  Vector force;
};

/// Integrates the Bouc-Wen evolution law with classical RK4 at dt_sub. The
/// displacement is linearly interpolated between samples, so the velocity is
/// piecewise constant. u is shifted so that u(0) = 0.
BoucWenTrace boucwen_trace(const Vector& u, Scalar dt, const BoucWenParams& params);
Vector boucwen_response(const Vector& u, Scalar dt, const BoucWenParams& params);

enum class AugmentOp { slice, splice, weighted_average };

struct AugmentConfig {
  std::vector<AugmentOp> ops_enabled{AugmentOp::slice, AugmentOp::splice,
                                     AugmentOp::weighted_average};
  std::size_t count = 0;
  std::uint64_t seed = 0;
  Scalar min_slice_fraction = 0.5;
};

void validate(const AugmentConfig& config);

/// Copies u[start, start + length) to the head of a zero series of size u.size().
Vector slice_series(const Vector& u, Index start, Index length);
/// first[0, cut) followed by second[cut, T).
Vector splice_series(const Vector& first, const Vector& second, Index cut);
/// w * first + (1 - w) * second.
Vector weighted_average(const Vector& first, const Vector& second, Scalar w);

/// Produces `count` new unlabeled samples, each from one uniformly chosen
/// enabled operation applied to random parents from the pool.
Dataset augment_unlabeled(const Dataset& pool, const AugmentConfig& config);

struct CaseStudyConfig {
  std::size_t n_labeled = 400;
  SplitFractions splits{};
  /// Size of the small target set drawn from the training split (0 keeps none).
  std::size_t n_target = 10;
  std::size_t n_unlabeled = 2000;
  /// Raw sine mixes in the unlabeled pool; the rest are augmentations of them.
  std::size_t n_unlabeled_base = 200;
  SineMixConfig sine{};
  std::pair<Scalar, Scalar> peak_range{3.0, 3.5};
  std::pair<Scalar, Scalar> unlabeled_peak_range{3.0, 3.5};
  BoucWenParams boucwen{};
  AugmentConfig augment{};
  /// Fit bounds on all labeled samples instead of the training split only.
  bool joint_normalization = false;
  std::uint64_t seed = 2023;
};

/// Raw (physical-unit) datasets; each carries the fitted normalization params.
struct CaseStudy {
  Dataset train;
  Dataset val;
  Dataset test;
  Dataset target;
  Dataset unlabeled;
  NormalizationParams norm;
};

CaseStudy build_case_study(const CaseStudyConfig& config);

/// Writes train/, val/, test/, target/, unlabeled/ and report.json under dir.
void write_case_study(const CaseStudy& study, const CaseStudyConfig& config,
                      const std::filesystem::path& dir);
CaseStudy read_case_study(const std::filesystem::path& dir);

}  // namespace selftransfer
