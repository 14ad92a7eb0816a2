#include "selftransfer/data_gen.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>

namespace selftransfer {

namespace fs = std::filesystem;

void validate(const SineMixConfig& c) {
  if (c.n_components < 1) throw Error("sine mix: n_components must be >= 1");
  if (!(c.period_range.first > 0 && c.period_range.first <= c.period_range.second))
    throw Error("sine mix: period_range must be positive and ordered");
  if (!(c.amplitude_range.first > 0 && c.amplitude_range.first <= c.amplitude_range.second))
    throw Error("sine mix: amplitude_range must be positive and ordered");
  if (c.length < 2) throw Error("sine mix: length must be >= 2");
  if (!(c.dt > 0)) throw Error("sine mix: dt must be positive");
  if (static_cast<Scalar>(c.length) * c.dt < c.period_range.second)
    throw Error("sine mix: length * dt must cover the longest period");
  if (c.target_peak && !(*c.target_peak > 0)) throw Error("sine mix: target_peak must be positive");
}

Vector gen_sine_mix(const SineMixConfig& c, std::uint64_t seed) {
  validate(c);
  Rng rng(seed);
  std::uniform_real_distribution<Scalar> amp(c.amplitude_range.first, c.amplitude_range.second);
  std::uniform_real_distribution<Scalar> period(c.period_range.first, c.period_range.second);
  std::uniform_real_distribution<Scalar> phase(0.0, 2.0 * std::numbers::pi);
  const Vector t = Vector::LinSpaced(c.length, 0.0, c.dt * static_cast<Scalar>(c.length - 1));
  Vector u = Vector::Zero(c.length);
  for (int i = 0; i < c.n_components; ++i) {
    const Scalar a = amp(rng);
    const Scalar p = period(rng);
    const Scalar phi = phase(rng);
    u.array() += a * (2.0 * std::numbers::pi * t.array() / p + phi).sin();
  }
  if (c.start_at_rest) u.array() -= u[0];
  if (c.target_peak) {
    const Scalar peak = u.cwiseAbs().maxCoeff();
    if (peak > 0) u *= *c.target_peak / peak;
  }
  return u;
}

// ---------------------------------------------------------------------------
// Bouc-Wen

void validate(const BoucWenParams& p, Scalar dt) {
  if (!(p.k > 0)) throw Error("bouc-wen: k must be positive");
  if (!(p.alpha > 0 && p.alpha <= 1)) throw Error("bouc-wen: alpha must lie in (0, 1]");
  if (!(p.n_exp >= 1)) throw Error("bouc-wen: n_exp must be >= 1");
  if (!(dt > 0)) throw Error("bouc-wen: dt must be positive");
  if (p.dt_sub > dt) throw Error("bouc-wen: dt_sub must not exceed the series dt");
}

namespace {

Scalar zdot(Scalar z, Scalar v, const BoucWenParams& p) {
  const Scalar az = std::abs(z);
  // |z|^(n-1) * z and |z|^n; n = 1 is the common case and avoids pow.
  const Scalar zn = p.n_exp == 1.0 ? az : std::pow(az, p.n_exp);
  const Scalar zn1z = p.n_exp == 1.0 ? z : std::pow(az, p.n_exp - 1.0) * z;
  return p.A * v - p.beta * std::abs(v) * zn1z - p.gamma * v * zn;
}

}  // namespace

BoucWenTrace boucwen_trace(const Vector& u_raw, Scalar dt, const BoucWenParams& p) {
  validate(p, dt);
  if (u_raw.size() < 2) throw Error("bouc-wen: input needs at least 2 steps");
  if (!u_raw.allFinite()) throw Error("bouc-wen: non-finite input");
  const Vector u = u_raw.array() - u_raw[0];
  const Scalar dt_sub = p.dt_sub > 0 ? p.dt_sub : dt / 10.0;
  const auto n_sub = static_cast<int>(std::ceil(dt / dt_sub - 1e-9));
  const Scalar h = dt / n_sub;

  BoucWenTrace out{Vector::Zero(u.size()), Vector::Zero(u.size())};
  Scalar z = 0.0;
  for (Index i = 1; i < u.size(); ++i) {
    const Scalar v = (u[i] - u[i - 1]) / dt;
    for (int s = 0; s < n_sub; ++s) {
      const Scalar k1 = zdot(z, v, p);
      const Scalar k2 = zdot(z + 0.5 * h * k1, v, p);
      const Scalar k3 = zdot(z + 0.5 * h * k2, v, p);
      const Scalar k4 = zdot(z + h * k3, v, p);
      z += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (!std::isfinite(z))
      throw Error("bouc-wen: hysteretic state diverged at step " + std::to_string(i));
    out.z[i] = z;
  }
  out.force = p.alpha * p.k * u.array() + (1.0 - p.alpha) * p.k * out.z.array();
  return out;
}

Vector boucwen_response(const Vector& u, Scalar dt, const BoucWenParams& p) {
  return boucwen_trace(u, dt, p).force;
}

// ---------------------------------------------------------------------------
// Augmentation

void validate(const AugmentConfig& c) {
  if (c.ops_enabled.empty()) throw Error("augment: at least one operation must be enabled");
  if (!(c.min_slice_fraction > 0 && c.min_slice_fraction < 1))
    throw Error("augment: min_slice_fraction must lie in (0, 1)");
}

Vector slice_series(const Vector& u, Index start, Index length) {
  if (start < 0 || length < 1 || start + length > u.size())
    throw Error("slice_series: window out of range");
  Vector out = Vector::Zero(u.size());
  out.head(length) = u.segment(start, length);
  return out;
}

Vector splice_series(const Vector& first, const Vector& second, Index cut) {
  if (first.size() != second.size()) throw Error("splice_series: length mismatch");
  if (cut < 0 || cut > first.size()) throw Error("splice_series: cut out of range");
  Vector out = second;
  out.head(cut) = first.head(cut);
  return out;
}

Vector weighted_average(const Vector& first, const Vector& second, Scalar w) {
  if (first.size() != second.size()) throw Error("weighted_average: length mismatch");
  return w * first + (1.0 - w) * second;
}

Dataset augment_unlabeled(const Dataset& pool, const AugmentConfig& c) {
  validate(c);
  Dataset out;
  out.role = Role::unlabeled_pool;
  out.dt = pool.dt;
  out.norm = pool.norm;
  out.normalized = pool.normalized;
  if (c.count == 0) return out;
  if (pool.size() < 2) throw Error("augment: pool needs at least 2 samples");
  const Index T = pool.samples.front().length();
  for (const auto& s : pool.samples)
    if (s.length() != T) throw Error("augment: incompatible lengths in pool ('" + s.id + "')");

  Rng rng(c.seed);
  std::uniform_int_distribution<std::size_t> pick_op(0, c.ops_enabled.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_parent(0, pool.size() - 1);
  std::uniform_real_distribution<Scalar> unit(0.0, 1.0);
  const auto min_len = std::max<Index>(
      1, static_cast<Index>(std::ceil(c.min_slice_fraction * static_cast<Scalar>(T))));

  out.samples.reserve(c.count);
  for (std::size_t k = 0; k < c.count; ++k) {
    const AugmentOp op = c.ops_enabled[pick_op(rng)];
    const std::size_t a = pick_parent(rng);
    std::size_t b = pick_parent(rng);
    while (b == a) b = pick_parent(rng);
    const Vector& ua = pool.samples[a].input;
    const Vector& ub = pool.samples[b].input;
    TimeSeriesSample s;
    char id[32];
    std::snprintf(id, sizeof(id), "aug-%06zu", k);
    s.id = id;
    s.provenance = Provenance::unlabeled;
    switch (op) {
      case AugmentOp::slice: {
        const Index len = std::uniform_int_distribution<Index>(min_len, T)(rng);
        const Index start = std::uniform_int_distribution<Index>(0, T - len)(rng);
        s.input = slice_series(ua, start, len);
        break;
      }
      case AugmentOp::splice: {
        const Index cut = std::uniform_int_distribution<Index>(1, T - 1)(rng);
        s.input = splice_series(ua, ub, cut);
        break;
      }
      case AugmentOp::weighted_average:
        s.input = weighted_average(ua, ub, unit(rng));
        break;
    }
    out.samples.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Case study

namespace {

std::string indexed_id(const char* prefix, std::size_t i) {
  char id[32];
  std::snprintf(id, sizeof(id), "%s-%05zu", prefix, i);
  return id;
}

Scalar uniform_in(std::pair<Scalar, Scalar> range, std::uint64_t seed) {
  Rng rng(seed);
  return std::uniform_real_distribution<Scalar>(range.first, range.second)(rng);
}

// Streams for derive_seed; fixed so regenerated datasets are byte-identical.
enum Stream : std::uint64_t {
  kLabeledInput = 1,
  kLabeledPeak,
  kSplit,
  kTarget,
  kUnlabeledInput,
  kUnlabeledPeak,
  kAugment
};

}  // namespace

CaseStudy build_case_study(const CaseStudyConfig& c) {
  validate(c.sine);
  validate(c.boucwen, c.sine.dt);

  Dataset labeled;
  labeled.role = Role::target_labeled;
  labeled.dt = c.sine.dt;
  labeled.samples.resize(c.n_labeled);
  for (std::size_t i = 0; i < c.n_labeled; ++i) {
    SineMixConfig sc = c.sine;
    sc.start_at_rest = true;
    sc.target_peak = uniform_in(c.peak_range, derive_seed(c.seed, kLabeledPeak, i));
    auto& s = labeled.samples[i];
    s.id = indexed_id("lab", i);
    s.input = gen_sine_mix(sc, derive_seed(c.seed, kLabeledInput, i));
    s.output = boucwen_response(s.input, c.sine.dt, c.boucwen);
    s.provenance = Provenance::real_label;
  }

  CaseStudy study;
  std::tie(study.train, study.val, study.test) =
      split_dataset(labeled, c.splits, derive_seed(c.seed, kSplit));
  study.norm = fit_normalization(c.joint_normalization ? labeled : study.train);

  if (c.n_target > 0) study.target = sample_subset(study.train, c.n_target, derive_seed(c.seed, kTarget));
  study.target.role = Role::target_labeled;
  study.target.dt = c.sine.dt;

  Dataset base;
  base.role = Role::unlabeled_pool;
  base.dt = c.sine.dt;
  const std::size_t n_base = std::min(c.n_unlabeled_base, c.n_unlabeled);
  for (std::size_t i = 0; i < n_base; ++i) {
    SineMixConfig sc = c.sine;
    sc.start_at_rest = true;
    sc.target_peak = uniform_in(c.unlabeled_peak_range, derive_seed(c.seed, kUnlabeledPeak, i));
    TimeSeriesSample s;
    s.id = indexed_id("unl", i);
    s.input = gen_sine_mix(sc, derive_seed(c.seed, kUnlabeledInput, i));
    base.samples.push_back(std::move(s));
  }
  AugmentConfig ac = c.augment;
  ac.count = c.n_unlabeled - n_base;
  ac.seed = derive_seed(c.seed, kAugment);
  study.unlabeled = merge(base, augment_unlabeled(base, ac), Role::unlabeled_pool);
  study.unlabeled.dt = c.sine.dt;

  for (Dataset* d : {&study.train, &study.val, &study.test, &study.target, &study.unlabeled})
    d->norm = study.norm;
  return study;
}

namespace {

nlohmann::json histogram(const std::vector<Scalar>& values, int bins) {
  if (values.empty()) return nlohmann::json::object();
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const Scalar lo = *lo_it, hi = *hi_it;
  std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
  for (Scalar v : values) {
    auto b = hi > lo ? static_cast<int>((v - lo) / (hi - lo) * bins) : 0;
    counts[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))]++;
  }
  return {{"min", lo}, {"max", hi}, {"counts", counts}};
}

std::vector<Scalar> peaks(const Dataset& d, bool output) {
  std::vector<Scalar> v;
  for (const auto& s : d.samples) {
    if (output && s.output)
      v.push_back(s.output->cwiseAbs().maxCoeff());
    else if (!output)
      v.push_back(s.input.cwiseAbs().maxCoeff());
  }
  return v;
}

}  // namespace

void write_case_study(const CaseStudy& s, const CaseStudyConfig& c, const fs::path& dir) {
  fs::create_directories(dir);
  write_dataset(s.train, dir / "train");
  write_dataset(s.val, dir / "val");
  write_dataset(s.test, dir / "test");
  write_dataset(s.target, dir / "target");
  write_dataset(s.unlabeled, dir / "unlabeled");

  Dataset all_labeled = merge(merge(s.train, s.val, Role::target_labeled), s.test, Role::target_labeled);
  nlohmann::json report = {
      {"seed", c.seed},
      {"counts",
       {{"train", s.train.size()},
        {"val", s.val.size()},
        {"test", s.test.size()},
        {"target", s.target.size()},
        {"unlabeled", s.unlabeled.size()},
        {"unlabeled_base", std::min(c.n_unlabeled_base, c.n_unlabeled)}}},
      {"length", c.sine.length},
      {"dt", c.sine.dt},
      {"normalization",
       {{"input_min", s.norm.input_min},
        {"input_max", s.norm.input_max},
        {"output_min", s.norm.output_min},
        {"output_max", s.norm.output_max},
        {"joint", c.joint_normalization}}},
      {"peak_displacement_histogram", histogram(peaks(all_labeled, false), 10)},
      {"peak_force_histogram", histogram(peaks(all_labeled, true), 10)},
      {"unlabeled_peak_displacement_histogram", histogram(peaks(s.unlabeled, false), 10)},
  };
  std::ofstream os(dir / "report.json");
  os << std::setw(2) << report << '\n';
  if (!os) throw Error("cannot write " + (dir / "report.json").string());
}

CaseStudy read_case_study(const fs::path& dir) {
  CaseStudy s;
  s.train = read_dataset(dir / "train");
  s.val = read_dataset(dir / "val");
  s.test = read_dataset(dir / "test");
  s.target = read_dataset(dir / "target");
  s.unlabeled = read_dataset(dir / "unlabeled");
  if (!s.train.norm) throw Error(dir.string() + ": training split has no normalization params");
  s.norm = *s.train.norm;
  return s;
}

}  // namespace selftransfer
