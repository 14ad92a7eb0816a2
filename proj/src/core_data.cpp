#include "selftransfer/core_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace selftransfer {

namespace fs = std::filesystem;

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::real_label: return "real-label";
    case Provenance::pseudo_label: return "pseudo-label";
    case Provenance::unlabeled: return "unlabeled";
  }
  return "?";
}

std::string_view to_string(Role r) {
  switch (r) {
    case Role::target_labeled: return "target-labeled";
    case Role::unlabeled_pool: return "unlabeled-pool";
    case Role::pseudo_source: return "pseudo-source";
    case Role::validation: return "validation";
    case Role::test: return "test";
  }
  return "?";
}

Provenance provenance_from_string(std::string_view s) {
  for (auto p : {Provenance::real_label, Provenance::pseudo_label, Provenance::unlabeled})
    if (to_string(p) == s) return p;
  throw Error("unknown provenance '" + std::string(s) + "'");
}

Role role_from_string(std::string_view s) {
  for (auto r : {Role::target_labeled, Role::unlabeled_pool, Role::pseudo_source, Role::validation,
                 Role::test})
    if (to_string(r) == s) return r;
  throw Error("unknown dataset role '" + std::string(s) + "'");
}

void validate(const TimeSeriesSample& s) {
  if (s.input.size() < 2) throw Error("sample '" + s.id + "': input needs at least 2 steps");
  if (!s.input.allFinite()) throw Error("sample '" + s.id + "': non-finite input value");
  if (s.output) {
    if (s.output->size() != s.input.size())
      throw Error("sample '" + s.id + "': output length " + std::to_string(s.output->size()) +
                  " != input length " + std::to_string(s.input.size()));
    if (!s.output->allFinite()) throw Error("sample '" + s.id + "': non-finite output value");
  }
  if ((s.provenance == Provenance::unlabeled) == s.output.has_value())
    throw Error("sample '" + s.id + "': provenance " + std::string(to_string(s.provenance)) +
                (s.output ? " but output present" : " but output missing"));
}

namespace {

Provenance expected_provenance(Role r) {
  switch (r) {
    case Role::unlabeled_pool: return Provenance::unlabeled;
    case Role::pseudo_source: return Provenance::pseudo_label;
    default: return Provenance::real_label;
  }
}

}  // namespace

void validate(const Dataset& d) {
  std::unordered_set<std::string> ids;
  const Provenance want = expected_provenance(d.role);
  for (const auto& s : d.samples) {
    validate(s);
    if (!ids.insert(s.id).second) throw Error("duplicate sample id '" + s.id + "'");
    if (s.provenance != want)
      throw Error("sample '" + s.id + "' has provenance " + std::string(to_string(s.provenance)) +
                  " inside a " + std::string(to_string(d.role)) + " dataset");
  }
  if (d.norm) validate(*d.norm);
}

void validate(const NormalizationParams& p) {
  if (!(p.input_min < p.input_max))
    throw Error("normalization: degenerate channel 'input' (min >= max)");
  if (!(p.output_min < p.output_max))
    throw Error("normalization: degenerate channel 'output' (min >= max)");
}

NormalizationParams fit_normalization(const Dataset& d) {
  if (d.empty()) throw Error("fit_normalization: empty dataset");
  Scalar in_lo = std::numeric_limits<Scalar>::infinity(), in_hi = -in_lo;
  Scalar out_lo = in_lo, out_hi = -in_lo;
  bool any_output = false;
  for (const auto& s : d.samples) {
    if (!s.input.allFinite()) throw Error("fit_normalization: non-finite input in '" + s.id + "'");
    in_lo = std::min(in_lo, s.input.minCoeff());
    in_hi = std::max(in_hi, s.input.maxCoeff());
    if (s.output) {
      if (!s.output->allFinite())
        throw Error("fit_normalization: non-finite output in '" + s.id + "'");
      out_lo = std::min(out_lo, s.output->minCoeff());
      out_hi = std::max(out_hi, s.output->maxCoeff());
      any_output = true;
    }
  }
  if (!(in_lo < in_hi)) throw Error("fit_normalization: degenerate channel 'input' (min == max)");
  NormalizationParams p;
  p.input_min = in_lo;
  p.input_max = in_hi;
  if (any_output) {
    if (!(out_lo < out_hi))
      throw Error("fit_normalization: degenerate channel 'output' (min == max)");
    p.output_min = out_lo;
    p.output_max = out_hi;
  }
  return p;
}

Vector normalize_values(const Vector& v, Scalar lo, Scalar hi) {
  return (2.0 * (v.array() - lo) / (hi - lo) - 1.0).matrix();
}

Vector denormalize_values(const Vector& v, Scalar lo, Scalar hi) {
  return ((v.array() + 1.0) * 0.5 * (hi - lo) + lo).matrix();
}

TimeSeriesSample normalize(const TimeSeriesSample& s, const NormalizationParams& p) {
  TimeSeriesSample out = s;
  out.input = normalize_values(s.input, p.input_min, p.input_max);
  if (s.output) out.output = normalize_values(*s.output, p.output_min, p.output_max);
  return out;
}

TimeSeriesSample denormalize(const TimeSeriesSample& s, const NormalizationParams& p) {
  TimeSeriesSample out = s;
  out.input = denormalize_values(s.input, p.input_min, p.input_max);
  if (s.output) out.output = denormalize_values(*s.output, p.output_min, p.output_max);
  return out;
}

Dataset normalize(const Dataset& d, const NormalizationParams& p) {
  if (d.normalized) throw Error("normalize: dataset is already normalized");
  validate(p);
  Dataset out = d;
  for (auto& s : out.samples) s = normalize(s, p);
  out.norm = p;
  out.normalized = true;
  return out;
}

Dataset denormalize(const Dataset& d) {
  if (!d.normalized || !d.norm) throw Error("denormalize: dataset is not normalized");
  Dataset out = d;
  for (auto& s : out.samples) s = denormalize(s, *d.norm);
  out.normalized = false;
  return out;
}

namespace {

Dataset with_samples(const Dataset& like, Role role) {
  Dataset d;
  d.role = role;
  d.norm = like.norm;
  d.normalized = like.normalized;
  d.dt = like.dt;
  return d;
}

}  // namespace

std::tuple<Dataset, Dataset, Dataset> split_dataset(const Dataset& d, const SplitFractions& f,
                                                    std::uint64_t seed) {
  if (!(f.train > 0 && f.val > 0 && f.test > 0))
    throw Error("split_dataset: fractions must be positive");
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw Error("split_dataset: fractions must sum to 1");
  const std::size_t n = d.size();
  if (n < 3) throw Error("split_dataset: need at least 3 samples");
  const auto n_val = static_cast<std::size_t>(std::llround(f.val * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::llround(f.test * static_cast<double>(n)));
  if (n_val == 0 || n_test == 0 || n_val + n_test >= n)
    throw Error("split_dataset: a split is empty after rounding (n=" + std::to_string(n) + ")");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  Dataset train = with_samples(d, d.role);
  Dataset val = with_samples(d, Role::validation);
  Dataset test = with_samples(d, Role::test);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& s = d.samples[order[k]];
    if (k < n_val)
      val.samples.push_back(s);
    else if (k < n_val + n_test)
      test.samples.push_back(s);
    else
      train.samples.push_back(s);
  }
  return {std::move(train), std::move(val), std::move(test)};
}

Dataset sample_subset(const Dataset& d, std::size_t count, std::uint64_t seed) {
  if (count > d.size())
    throw Error("sample_subset: requested " + std::to_string(count) + " of " +
                std::to_string(d.size()) + " samples");
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(count);
  std::sort(order.begin(), order.end());
  Dataset out = with_samples(d, d.role);
  for (auto i : order) out.samples.push_back(d.samples[i]);
  return out;
}

Dataset merge(const Dataset& a, const Dataset& b, Role role) {
  if (a.normalized != b.normalized && !a.empty() && !b.empty())
    throw Error("merge: cannot mix normalized and raw datasets");
  Dataset out = with_samples(a.empty() ? b : a, role);
  if (!out.norm) out.norm = b.norm;
  out.samples = a.samples;
  out.samples.insert(out.samples.end(), b.samples.begin(), b.samples.end());
  return out;
}

// ---------------------------------------------------------------------------
// File I/O

namespace {

std::string format_double(Scalar v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw Error("cannot format value");
  return std::string(buf, end);
}

bool parse_double(std::string_view text, Scalar& out) {
  while (!text.empty() && (text.front() == '+' || text.front() == ' ')) text.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

Scalar parse_double_or_throw(std::string_view text, const std::string& where) {
  Scalar v{};
  if (!parse_double(text, v)) throw Error(where + ": cannot parse number '" + std::string(text) + "'");
  return v;
}

void write_series(const fs::path& file, const Vector& v) {
  std::ofstream os(file);
  if (!os) throw Error("cannot write " + file.string());
  for (Index i = 0; i < v.size(); ++i) os << i << ' ' << format_double(v[i]) << '\n';
  if (!os) throw Error("write failed: " + file.string());
}

Vector read_series(const fs::path& file, Index declared_length) {
  std::ifstream is(file);
  if (!is) throw Error("cannot read " + file.string());
  std::vector<Scalar> values;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string idx, val;
    if (!(ls >> idx >> val))
      throw Error(file.string() + ": malformed row '" + line + "'");
    const Scalar row = parse_double_or_throw(idx, file.string());
    if (row != static_cast<Scalar>(values.size()))
      throw Error(file.string() + ": expected t_index " + std::to_string(values.size()));
    values.push_back(parse_double_or_throw(val, file.string()));
  }
  if (static_cast<Index>(values.size()) != declared_length)
    throw Error(file.string() + ": length mismatch, manifest declares " +
                std::to_string(declared_length) + " rows but file has " +
                std::to_string(values.size()));
  return Eigen::Map<Vector>(values.data(), static_cast<Index>(values.size()));
}

constexpr std::string_view kManifestMagic = "selftransfer-dataset";

}  // namespace

void write_dataset(const Dataset& d, const fs::path& dir) {
  validate(d);
  fs::create_directories(dir);
  std::ofstream m(dir / "manifest");
  if (!m) throw Error("cannot write manifest in " + dir.string());
  m << "format " << kManifestMagic << " 1\n";
  m << "role " << to_string(d.role) << '\n';
  m << "dt " << format_double(d.dt) << '\n';
  m << "normalized " << (d.normalized ? 1 : 0) << '\n';
  if (d.norm) {
    m << "norm " << format_double(d.norm->input_min) << ' ' << format_double(d.norm->input_max)
      << ' ' << format_double(d.norm->output_min) << ' ' << format_double(d.norm->output_max)
      << '\n';
  }
  m << "count " << d.size() << '\n';
  for (const auto& s : d.samples) {
    if (s.id.find_first_of(" \t\n/") != std::string::npos)
      throw Error("sample id '" + s.id + "' contains whitespace or '/'");
    m << "sample " << s.id << ' ' << to_string(s.provenance) << ' ' << s.length() << ' '
      << (s.output ? 1 : 0) << '\n';
    write_series(dir / (s.id + ".input"), s.input);
    if (s.output) write_series(dir / (s.id + ".output"), *s.output);
  }
  if (!m) throw Error("manifest write failed in " + dir.string());
}

Dataset read_dataset(const fs::path& dir) {
  std::ifstream m(dir / "manifest");
  if (!m) throw Error("missing manifest in " + dir.string());
  const std::string where = (dir / "manifest").string();
  Dataset d;
  bool have_format = false, have_role = false, have_dt = false, have_count = false;
  std::size_t count = 0;
  std::string line;
  while (std::getline(m, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      std::string magic;
      int version = 0;
      ls >> magic >> version;
      if (magic != kManifestMagic || version != 1) throw Error(where + ": unsupported format");
      have_format = true;
    } else if (key == "role") {
      std::string r;
      ls >> r;
      d.role = role_from_string(r);
      have_role = true;
    } else if (key == "dt") {
      std::string v;
      ls >> v;
      d.dt = parse_double_or_throw(v, where);
      have_dt = true;
    } else if (key == "normalized") {
      int flag = 0;
      ls >> flag;
      d.normalized = flag != 0;
    } else if (key == "norm") {
      std::string a, b, c, e;
      if (!(ls >> a >> b >> c >> e)) throw Error(where + ": malformed norm line");
      d.norm = NormalizationParams{parse_double_or_throw(a, where), parse_double_or_throw(b, where),
                                   parse_double_or_throw(c, where), parse_double_or_throw(e, where)};
    } else if (key == "count") {
      ls >> count;
      have_count = true;
    } else if (key == "sample") {
      TimeSeriesSample s;
      std::string prov;
      Index length = 0;
      int has_output = 0;
      if (!(ls >> s.id >> prov >> length >> has_output))
        throw Error(where + ": malformed sample line '" + line + "'");
      s.provenance = provenance_from_string(prov);
      s.input = read_series(dir / (s.id + ".input"), length);
      if (has_output) s.output = read_series(dir / (s.id + ".output"), length);
      d.samples.push_back(std::move(s));
    } else {
      throw Error(where + ": unknown key '" + key + "'");
    }
  }
  if (!have_format) throw Error(where + ": missing required 'format'");
  if (!have_role) throw Error(where + ": missing required 'role'");
  if (!have_dt) throw Error(where + ": missing required 'dt'");
  if (!have_count) throw Error(where + ": missing required 'count'");
  if (count != d.size())
    throw Error(where + ": declares " + std::to_string(count) + " samples but lists " +
                std::to_string(d.size()));
  if (d.normalized && !d.norm) throw Error(where + ": normalized dataset without norm params");
  validate(d);
  return d;
}

// ---------------------------------------------------------------------------
// Column-file importer

namespace {

std::vector<Scalar> parse_row(const std::string& line) {
  std::vector<Scalar> row;
  std::string token;
  auto flush = [&]() {
    if (token.empty()) return true;
    Scalar v{};
    if (!parse_double(token, v)) return false;
    row.push_back(v);
    token.clear();
    return true;
  };
  for (char ch : line) {
    if (ch == ',' || ch == ' ' || ch == '\t' || ch == ';' || ch == '\r') {
      if (!flush()) return {};
    } else {
      token.push_back(ch);
    }
  }
  if (!flush()) return {};
  return row;
}

Vector integrate_trapezoid(const Vector& v, Scalar dt) {
  Vector out = Vector::Zero(v.size());
  for (Index i = 1; i < v.size(); ++i) out[i] = out[i - 1] + 0.5 * dt * (v[i - 1] + v[i]);
  return out;
}

}  // namespace

TimeSeriesSample import_column_file(const fs::path& file, const ImportOptions& opt) {
  std::ifstream is(file);
  if (!is) throw Error("cannot read " + file.string());
  std::vector<Scalar> values;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line.front() == '#') continue;
    auto row = parse_row(line);
    if (row.empty()) continue;
    const int n = static_cast<int>(row.size());
    const int col = opt.column < 0 ? n + opt.column : opt.column;
    if (col < 0 || col >= n)
      throw Error(file.string() + ": column " + std::to_string(opt.column) + " out of range");
    values.push_back(row[static_cast<std::size_t>(col)]);
  }
  if (values.size() < 2) throw Error(file.string() + ": fewer than 2 numeric rows");
  Vector series = Eigen::Map<Vector>(values.data(), static_cast<Index>(values.size()));
  if (opt.kind == RecordKind::acceleration) {
    series = integrate_trapezoid(integrate_trapezoid(series, opt.dt), opt.dt);
    // Remove the linear drift left by integration constants.
    const Index n = series.size();
    const Scalar first = series[0];
    const Scalar slope = (series[n - 1] - first) / static_cast<Scalar>(n - 1);
    for (Index i = 0; i < n; ++i) series[i] -= first + slope * static_cast<Scalar>(i);
  }
  if (opt.target_length) {
    Vector resized = Vector::Zero(*opt.target_length);
    const Index keep = std::min(*opt.target_length, series.size());
    resized.head(keep) = series.head(keep);
    series = std::move(resized);
  }
  TimeSeriesSample s;
  s.id = file.stem().string();
  s.input = std::move(series);
  s.provenance = Provenance::unlabeled;
  validate(s);
  return s;
}

Dataset import_unlabeled_directory(const fs::path& dir, const ImportOptions& opt) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  Dataset d;
  d.role = Role::unlabeled_pool;
  d.dt = opt.dt;
  for (const auto& f : files) d.samples.push_back(import_column_file(f, opt));
  validate(d);
  return d;
}

}  // namespace selftransfer
