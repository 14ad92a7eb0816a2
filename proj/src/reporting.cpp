#include "selftransfer/reporting.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace selftransfer {

namespace fs = std::filesystem;

namespace {

std::string num(Scalar v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fixed(Scalar v, int digits) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file);
  if (!out) throw Error("report: cannot write " + file.string());
  out << text;
}

struct Frame {
  double x0 = 60, y0 = 20, w = 560, h = 260;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;

  double x(double v) const { return x0 + (v - xmin) / (xmax - xmin) * w; }
  double y(double v) const { return y0 + h - (v - ymin) / (ymax - ymin) * h; }
};

std::string polyline(const Frame& f, const std::vector<double>& xs, const std::vector<double>& ys,
                     const char* colour) {
  std::ostringstream os;
  os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < xs.size(); ++i)
    os << fixed(f.x(xs[i]), 2) << ',' << fixed(f.y(ys[i]), 2) << ' ';
  os << "\"/>\n";
  return os.str();
}

std::string axes(const Frame& f, const std::string& xlabel, const std::string& ylabel) {
  std::ostringstream os;
  os << "<rect x=\"" << f.x0 << "\" y=\"" << f.y0 << "\" width=\"" << f.w << "\" height=\"" << f.h
     << "\" fill=\"none\" stroke=\"#444\"/>\n";
  os << "<text x=\"" << f.x0 << "\" y=\"" << f.y0 + f.h + 16 << "\" font-size=\"11\">"
     << fixed(f.xmin, 2) << "</text>\n";
  os << "<text x=\"" << f.x0 + f.w << "\" y=\"" << f.y0 + f.h + 16
     << "\" font-size=\"11\" text-anchor=\"end\">" << fixed(f.xmax, 2) << "</text>\n";
  os << "<text x=\"" << f.x0 - 4 << "\" y=\"" << f.y0 + 10
     << "\" font-size=\"11\" text-anchor=\"end\">" << num(f.ymax) << "</text>\n";
  os << "<text x=\"" << f.x0 - 4 << "\" y=\"" << f.y0 + f.h
     << "\" font-size=\"11\" text-anchor=\"end\">" << num(f.ymin) << "</text>\n";
  os << "<text x=\"" << f.x0 + f.w / 2 << "\" y=\"" << f.y0 + f.h + 30
     << "\" font-size=\"12\" text-anchor=\"middle\">" << escape(xlabel) << "</text>\n";
  os << "<text x=\"14\" y=\"" << f.y0 + f.h / 2 << "\" font-size=\"12\" transform=\"rotate(-90 14 "
     << f.y0 + f.h / 2 << ")\" text-anchor=\"middle\">" << escape(ylabel) << "</text>\n";
  return os.str();
}

void fit_range(Frame& f, const std::vector<double>& ys) {
  const auto [lo, hi] = std::minmax_element(ys.begin(), ys.end());
  f.ymin = *lo;
  f.ymax = *hi;
  if (f.ymax - f.ymin < 1e-12) {
    f.ymin -= 0.5;
    f.ymax += 0.5;
  }
  const double pad = 0.05 * (f.ymax - f.ymin);
  f.ymin -= pad;
  f.ymax += pad;
}

}  // namespace

ReductionSeries reduction_series(const RunRecord& run) {
  ReductionSeries s;
  for (const auto& r : run.iterations) {
    s.indices.push_back(r.index);
    s.kinds.push_back(r.kind);
    s.avg_val_mse.push_back(r.avg_val_mse);
    s.reductions.push_back(r.relative_reduction);
  }
  return s;
}

std::string summarize_run(const RunRecord& run) {
  std::size_t n_seeds = 0;
  for (const auto& r : run.iterations) n_seeds = std::max(n_seeds, r.per_seed_val_mse.size());
  std::ostringstream os;
  os << "index\tkind";
  for (std::size_t i = 0; i < n_seeds; ++i) os << "\tval_mse_" << i;
  os << "\tavg_val_mse\trelative_reduction\n";
  for (const auto& r : run.iterations) {
    os << r.index << '\t' << to_string(r.kind);
    for (std::size_t i = 0; i < n_seeds; ++i)
      os << '\t' << (i < r.per_seed_val_mse.size() ? num(r.per_seed_val_mse[i]) : "");
    os << '\t' << num(r.avg_val_mse) << '\t' << num(r.relative_reduction) << '\n';
  }
  if (const auto* f = run.final_record(); f && f->test_mse) os << "test_mse\t" << num(*f->test_mse) << '\n';
  return os.str();
}

std::string summarize_run(const fs::path& run_dir) { return summarize_run(read_run(run_dir)); }

std::string reduction_svg(const ReductionSeries& s) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"340\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  Frame f;
  std::vector<double> xs, ys;
  for (std::size_t i = 1; i < s.indices.size(); ++i) {
    xs.push_back(s.indices[i]);
    ys.push_back(100.0 * s.reductions[i]);
  }
  if (!xs.empty()) {
    f.xmin = xs.front();
    f.xmax = std::max(xs.back(), xs.front() + 1);
    ys.push_back(0.0);
    fit_range(f, ys);
    ys.pop_back();
    os << axes(f, "iteration", "relative reduction (%)");
    os << "<line x1=\"" << f.x0 << "\" x2=\"" << f.x0 + f.w << "\" y1=\"" << fixed(f.y(0), 2)
       << "\" y2=\"" << fixed(f.y(0), 2) << "\" stroke=\"#bbb\" stroke-dasharray=\"4 3\"/>\n";
    os << polyline(f, xs, ys, "#1f77b4");
    for (std::size_t i = 0; i < xs.size(); ++i)
      os << "<text x=\"" << fixed(f.x(xs[i]), 2) << "\" y=\"" << fixed(f.y(ys[i]) - 6, 2)
         << "\" font-size=\"10\" text-anchor=\"middle\">" << to_string(s.kinds[i + 1]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<fs::path> plot_predictions(const Checkpoint& checkpoint, const Dataset& dataset,
                                       const std::vector<std::string>& sample_ids,
                                       const fs::path& out_dir) {
  std::vector<fs::path> files;
  if (sample_ids.empty()) return files;
  std::vector<std::size_t> picked;
  for (const auto& id : sample_ids) {
    const auto it = std::find_if(dataset.samples.begin(), dataset.samples.end(),
                                 [&](const TimeSeriesSample& s) { return s.id == id; });
    if (it == dataset.samples.end()) throw Error("plot: unknown sample id '" + id + "'");
    if (!it->output) throw Error("plot: sample '" + id + "' has no output");
    picked.push_back(static_cast<std::size_t>(it - dataset.samples.begin()));
  }
  Dataset subset = dataset;
  subset.samples.clear();
  for (auto i : picked) subset.samples.push_back(dataset.samples[i]);
  const auto predictions = predict_dataset(checkpoint.predictor(), subset);
  fs::create_directories(out_dir);
  const bool denorm = dataset.normalized && dataset.norm.has_value();
  for (std::size_t k = 0; k < subset.size(); ++k) {
    const auto& s = subset.samples[k];
    const Vector& truth_n = *s.output;
    const Vector& pred_n = predictions[k];
    const Scalar mse_k = (pred_n - truth_n).squaredNorm() / static_cast<Scalar>(truth_n.size());
    Vector truth = truth_n, pred = pred_n;
    if (denorm) {
      truth = denormalize_values(truth_n, dataset.norm->output_min, dataset.norm->output_max);
      pred = denormalize_values(pred_n, dataset.norm->output_min, dataset.norm->output_max);
    }
    std::vector<double> xs(static_cast<std::size_t>(truth.size())), yt(xs.size()), yp(xs.size()), all;
    for (Index t = 0; t < truth.size(); ++t) {
      xs[static_cast<std::size_t>(t)] = static_cast<double>(t) * dataset.dt;
      yt[static_cast<std::size_t>(t)] = truth(t);
      yp[static_cast<std::size_t>(t)] = pred(t);
    }
    all = yt;
    all.insert(all.end(), yp.begin(), yp.end());
    Frame f;
    f.xmin = 0;
    f.xmax = std::max(xs.back(), 1e-12);
    fit_range(f, all);
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"360\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << axes(f, "time (s)", denorm ? "restoring force" : "restoring force (normalized)");
    os << polyline(f, xs, yt, "#1f77b4");
    os << polyline(f, xs, yp, "#ff7f0e");
    os << "<text x=\"" << f.x0 << "\" y=\"" << f.y0 + f.h + 50 << "\" font-size=\"12\">"
       << escape(s.id) << ": truth (blue) vs prediction (orange), MSE " << num(mse_k) << "</text>\n";
    os << "</svg>\n";
    const fs::path file = out_dir / (s.id + ".svg");
    write_text(file, os.str());
    files.push_back(file);
  }
  return files;
}

std::vector<fs::path> write_report(const fs::path& run_dir, bool plots) {
  const RunRecord run = read_run(run_dir);
  const fs::path out = run_dir / "report";
  fs::create_directories(out);
  std::vector<fs::path> files{out / "summary.tsv", out / "reductions.svg"};
  write_text(files[0], summarize_run(run));
  write_text(files[1], reduction_svg(reduction_series(run)));
  if (plots && !run.iterations.empty()) {
    const auto& last = run.iterations.back();
    const Checkpoint c = load_checkpoint(run_dir / last.chosen_checkpoint);
    const Dataset val = read_dataset(run_dir / "snapshots" / "val");
    std::vector<std::string> ids;
    for (const auto& s : val.samples) ids.push_back(s.id);
    auto written = plot_predictions(c, val, ids, out / "predictions");
    files.insert(files.end(), written.begin(), written.end());
  }
  return files;
}

}  // namespace selftransfer
