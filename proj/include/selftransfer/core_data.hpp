#pragma once

#include "selftransfer/common.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

namespace selftransfer {

enum class Provenance { real_label, pseudo_label, unlabeled };

enum class Role { target_labeled, unlabeled_pool, pseudo_source, validation, test };

std::string_view to_string(Provenance p);
std::string_view to_string(Role r);
Provenance provenance_from_string(std::string_view s);
Role role_from_string(std::string_view s);

/// One displacement history with an optional reaction-force history.
struct TimeSeriesSample {
  std::string id;
  Vector input;
  std::optional<Vector> output;
  Provenance provenance = Provenance::unlabeled;

  Index length() const { return input.size(); }
  bool labeled() const { return output.has_value(); }
};

/// Min-max bounds in the physical units of the raw data.
struct NormalizationParams {
  Scalar input_min = -1.0;
  Scalar input_max = 1.0;
  Scalar output_min = -1.0;
  Scalar output_max = 1.0;
};

struct Dataset {
  std::vector<TimeSeriesSample> samples;
  Role role = Role::target_labeled;
  std::optional<NormalizationParams> norm;
  /// True once `norm` has been applied to the stored values.
  bool normalized = false;
  Scalar dt = 1.0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

/// Checks the sample invariants (lengths, finiteness, provenance/output agreement).
void validate(const TimeSeriesSample& sample);

/// Checks every sample plus dataset-level invariants (unique ids, role-consistent provenance).
void validate(const Dataset& dataset);

void validate(const NormalizationParams& params);

/// Global min/max over all inputs and, for labeled datasets, all outputs.
/// Unlabeled datasets keep the default output bounds.
NormalizationParams fit_normalization(const Dataset& dataset);

/// Maps v to 2 (v - min) / (max - min) - 1 per channel. Values outside the
/// fitted bounds are passed through without clipping.
TimeSeriesSample normalize(const TimeSeriesSample& sample, const NormalizationParams& params);
TimeSeriesSample denormalize(const TimeSeriesSample& sample, const NormalizationParams& params);

/// Applies `params` to every sample and records them on the returned dataset.
Dataset normalize(const Dataset& dataset, const NormalizationParams& params);
Dataset denormalize(const Dataset& dataset);

Vector normalize_values(const Vector& values, Scalar lo, Scalar hi);
Vector denormalize_values(const Vector& values, Scalar lo, Scalar hi);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Seeded random partition. Validation and test get round(fraction * n)
/// samples and the training split takes the remainder.
std::tuple<Dataset, Dataset, Dataset> split_dataset(const Dataset& dataset,
                                                    const SplitFractions& fractions,
                                                    std::uint64_t seed);

/// Random subset of `count` samples (seeded), keeping role and metadata.
Dataset sample_subset(const Dataset& dataset, std::size_t count, std::uint64_t seed);

/// Concatenates samples; the result takes `role` and the first non-empty norm.
Dataset merge(const Dataset& a, const Dataset& b, Role role);

/// Directory layout: `manifest` plus `<id>.input` and optional `<id>.output`
/// two-column (t_index, value) files. Values are written in shortest
/// round-trip decimal form, so reading reproduces every double exactly.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

enum class RecordKind { displacement, acceleration };

struct ImportOptions {
  RecordKind kind = RecordKind::displacement;
  /// Zero-based column; negative counts from the end (-1 is the last column).
  int column = -1;
  Scalar dt = 0.02;
  /// When set, records are truncated or zero-padded to this many steps.
  std::optional<Index> target_length;
};

/// Reads a whitespace/comma delimited numeric record. Lines that do not parse
/// as numbers (headers, comments) are skipped. Acceleration records are
/// integrated twice with the trapezoid rule and linearly detrended.
TimeSeriesSample import_column_file(const std::filesystem::path& file, const ImportOptions& options);

/// Imports every regular file in `dir` (sorted by name) as an unlabeled pool.
Dataset import_unlabeled_directory(const std::filesystem::path& dir, const ImportOptions& options);

}  // namespace selftransfer
