#include "selftransfer/training.hpp"

#include "json.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace selftransfer {

void validate(const TrainConfig& c) {
  if (c.n_steps < 1) throw Error("train config: n_steps must be >= 1");
  if (c.batch_size < 1) throw Error("train config: batch_size must be >= 1");
  if (!(c.ema_alpha >= 0 && c.ema_alpha < 1)) throw Error("train config: ema_alpha must lie in [0, 1)");
  if (!(c.base_lr > 0) || c.lr_min < 0) throw Error("train config: learning rates must be positive");
  if (c.consistency_weight_max < 0) throw Error("train config: consistency_weight_max must be >= 0");
  if (!(c.consistency_ramp_fraction > 0 && c.consistency_ramp_fraction <= 1))
    throw Error("train config: consistency_ramp_fraction must lie in (0, 1]");
  if (c.input_noise_std < 0) throw Error("train config: input_noise_std must be >= 0");
  if (!(c.labeled_weight > 0)) throw Error("train config: labeled_weight must be positive");
  if (c.eval_interval < 1) throw Error("train config: eval_interval must be >= 1");
}

Scalar ema_alpha_at(long long step, Scalar alpha) {
  return std::min(alpha, 1.0 - 1.0 / static_cast<Scalar>(step + 1));
}

Scalar consistency_weight_at(long long step, const TrainConfig& c) {
  const Scalar ramp_steps = c.consistency_ramp_fraction * static_cast<Scalar>(c.n_steps);
  if (ramp_steps <= 0) return c.consistency_weight_max;
  return c.consistency_weight_max * std::min(1.0, static_cast<Scalar>(step) / ramp_steps);
}

void MetricsSink::record(const MetricPoint& p) const {
  if (!out_) return;
  nlohmann::json j = {{"step", p.step},   {"train_loss", p.train_loss}, {"val_mse", p.val_mse},
                      {"reg", p.reg},     {"mmd", p.mmd},               {"lambda", p.lambda},
                      {"lr", p.lr},       {"wall_seconds", p.wall_seconds}};
  if (std::isfinite(p.val_mse_teacher)) j["val_mse_teacher"] = p.val_mse_teacher;
  if (!tag_.empty()) j["run"] = tag_;
  *out_ << j.dump() << '\n';
}

// ---------------------------------------------------------------------------
// Batching and evaluation

namespace {

Index common_length(const Dataset& d, const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw Error("empty batch");
  const Index T = d.samples.at(idx.front()).length();
  for (auto i : idx)
    if (d.samples.at(i).length() != T) throw Error("batch samples must share one length");
  return T;
}

class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch) : order_(n), batch_(std::min(batch, n)) {
    std::iota(order_.begin(), order_.end(), 0);
    pos_ = n;  // force a shuffle on first use
  }

  std::vector<std::size_t> next(Rng& rng) {
    if (pos_ + batch_ > order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng);
      pos_ = 0;
    }
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch_));
    pos_ += batch_;
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t pos_;
};

std::vector<std::vector<std::size_t>> chunks(const Dataset& d, std::size_t max_chunk) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (out.empty() || out.back().size() >= max_chunk ||
        d.samples[out.back().front()].length() != d.samples[i].length())
      out.emplace_back();
    out.back().push_back(i);
  }
  return out;
}

void require_labeled(const Dataset& d, const char* what) {
  if (d.empty()) throw Error(std::string(what) + ": empty dataset");
  for (const auto& s : d.samples)
    if (!s.output) throw Error(std::string(what) + ": sample '" + s.id + "' has no output");
}

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Scalar seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<Scalar>(std::chrono::steady_clock::now() - t0).count();
}

void add_noise(Matrix& m, Scalar std_dev, Rng& rng) {
  if (std_dev <= 0) return;
  std::normal_distribution<Scalar> noise(0.0, std_dev);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] += noise(rng);
}

void clip_gradients(const std::vector<std::span<Scalar>>& grads, Scalar max_norm) {
  if (max_norm <= 0) return;
  const Scalar norm = global_norm(read_only(grads));
  if (norm <= max_norm) return;
  const Scalar scale = max_norm / norm;
  for (auto g : grads)
    for (auto& v : g) v *= scale;
}

void check_loss(Scalar loss, long long step, const char* what) {
  if (!std::isfinite(loss))
    throw Error(std::string(what) + ": non-finite loss " + std::to_string(loss) + " at step " +
                std::to_string(step) + "; lower the learning rate or enable max_grad_norm");
}

}  // namespace

SequenceBatch input_batch(const Dataset& d, const std::vector<std::size_t>& idx) {
  common_length(d, idx);
  std::vector<const Vector*> series;
  for (auto i : idx) series.push_back(&d.samples[i].input);
  return pack_series(series);
}

SequenceBatch output_batch(const Dataset& d, const std::vector<std::size_t>& idx) {
  common_length(d, idx);
  std::vector<const Vector*> series;
  for (auto i : idx) {
    if (!d.samples[i].output) throw Error("sample '" + d.samples[i].id + "' has no output");
    series.push_back(&*d.samples[i].output);
  }
  return pack_series(series);
}

std::vector<Vector> predict_dataset(const Network& net, const Dataset& d) {
  std::vector<Vector> out(d.size());
  for (const auto& chunk : chunks(d, 64)) {
    const Matrix pred = forward_surrogate(net, input_batch(d, chunk));
    for (std::size_t k = 0; k < chunk.size(); ++k)
      out[chunk[k]] = pred.row(static_cast<Index>(k)).transpose();
  }
  return out;
}

Scalar evaluate_mse(const Network& net, const Dataset& d) {
  require_labeled(d, "evaluate_mse");
  const auto pred = predict_dataset(net, d);
  Scalar total = 0;
  for (std::size_t i = 0; i < d.size(); ++i)
    total += (pred[i] - *d.samples[i].output).squaredNorm() /
             static_cast<Scalar>(pred[i].size());
  return total / static_cast<Scalar>(d.size());
}

// ---------------------------------------------------------------------------
// Supervised training with a mean teacher

SupervisedResult train_supervised(const SurrogateArch& arch, const Dataset& train,
                                  const TrainConfig& config, const Dataset& val,
                                  const MetricsSink& sink) {
  return train_supervised(init_surrogate(arch, derive_seed(config.seed, 0x1417)), train, config,
                          val, sink);
}

SupervisedResult train_supervised(Network init, const Dataset& train, const TrainConfig& c,
                                  const Dataset& val, const MetricsSink& sink) {
  validate(c);
  require_labeled(train, "train_supervised");
  require_labeled(val, "train_supervised (validation)");

  SupervisedResult r;
  r.student = std::move(init);
  r.teacher = r.student;
  Network grad = zeros_like(r.student);
  auto params = parameter_arrays(r.student);
  auto grads = parameter_arrays(grad);
  auto teacher_params = parameter_arrays(r.teacher);
  r.optimizer = Adam(params, c.adam);

  Rng rng(c.seed);
  BatchSampler sampler(train.size(), static_cast<std::size_t>(c.batch_size));
  const auto t0 = std::chrono::steady_clock::now();
  const bool weighted = c.labeled_weight != 1.0;
  Scalar running = 0;
  long long running_n = 0;

  auto evaluate = [&](long long step, Scalar lr) {
    MetricPoint p;
    p.step = step;
    p.train_loss = running_n ? running / static_cast<Scalar>(running_n) : 0.0;
    p.val_mse = evaluate_mse(r.student, val);
    p.val_mse_teacher = c.mean_teacher ? evaluate_mse(r.teacher, val)
                                       : std::numeric_limits<Scalar>::quiet_NaN();
    p.reg = p.train_loss;
    p.lr = lr;
    p.wall_seconds = seconds_since(t0);
    r.history.push_back(p);
    sink.record(p);
    running = 0;
    running_n = 0;
  };

  for (long long step = 0; step < c.n_steps; ++step) {
    const Scalar lr = cosine_lr(step, c.n_steps, c.base_lr, c.lr_min);
    const auto idx = sampler.next(rng);
    const SequenceBatch x = input_batch(train, idx);
    const SequenceBatch y = output_batch(train, idx);
    const Scalar cw = c.mean_teacher ? consistency_weight_at(step, c) : 0.0;

    SequenceBatch x_in = x;
    if (cw > 0 || !c.mean_teacher) add_noise(x_in.data, c.input_noise_std, rng);
    const ForwardCache cache = forward(r.student, x_in);
    const Matrix& pred = cache.output();

    Matrix diff = pred - y.data;
    Scalar loss = 0;
    Matrix d_out;
    if (weighted) {
      Vector w(x.batch);
      for (Index b = 0; b < x.batch; ++b)
        w[b] = train.samples[idx[static_cast<std::size_t>(b)]].provenance == Provenance::real_label
                   ? c.labeled_weight
                   : 1.0;
      const Scalar norm = w.sum() * static_cast<Scalar>(x.steps);
      Matrix wcol(1, x.steps * x.batch);
      for (Index t = 0; t < x.steps; ++t) wcol.middleCols(t * x.batch, x.batch) = w.transpose();
      loss = (diff.array().square() * wcol.array()).sum() / norm;
      d_out = 2.0 * diff.cwiseProduct(wcol) / norm;
    } else {
      loss = diff.squaredNorm() / static_cast<Scalar>(diff.size());
      d_out = 2.0 * diff / static_cast<Scalar>(diff.size());
    }
    if (cw > 0) {
      const Matrix teacher_pred = predict(r.teacher, x).data;
      const Matrix cdiff = pred - teacher_pred;
      loss += cw * cdiff.squaredNorm() / static_cast<Scalar>(cdiff.size());
      d_out += cw * 2.0 * cdiff / static_cast<Scalar>(cdiff.size());
    }
    check_loss(loss, step, "train_supervised");
    running += loss;
    ++running_n;

    for (auto g : grads) std::fill(g.begin(), g.end(), 0.0);
    backward(r.student, cache, d_out, {}, grad, false);
    clip_gradients(grads, c.max_grad_norm);
    r.optimizer.step(params, read_only(grads), lr);
    if (c.mean_teacher) ema_update(teacher_params, read_only(params), ema_alpha_at(step, c.ema_alpha));

    if ((step + 1) % c.eval_interval == 0 || step + 1 == c.n_steps) evaluate(step + 1, lr);
  }
  if (!c.mean_teacher) r.teacher = r.student;
  r.student_val_mse = r.history.back().val_mse;
  r.teacher_val_mse = c.mean_teacher ? r.history.back().val_mse_teacher : r.student_val_mse;
  r.rng_state = rng_state(rng);
  return r;
}

Dataset pseudo_label(const Network& model, const Dataset& pool, std::size_t count,
                     std::uint64_t seed) {
  if (count > pool.size())
    throw Error("pseudo_label: count " + std::to_string(count) + " exceeds pool size " +
                std::to_string(pool.size()));
  Dataset picked = sample_subset(pool, count, seed);
  const auto labels = predict_dataset(model, picked);
  picked.role = Role::pseudo_source;
  for (std::size_t i = 0; i < picked.size(); ++i) {
    picked.samples[i].output = labels[i];
    picked.samples[i].provenance = Provenance::pseudo_label;
  }
  return picked;
}

// ---------------------------------------------------------------------------
// DAN-TR training

DanTrResult train_dantr(const DanTrArch& arch, const Dataset& source, const Dataset& target,
                        const TrainConfig& config, const MkMmdConfig& mmd, const Dataset& val,
                        const DanTrOptions& options, const MetricsSink& sink) {
  return train_dantr(init_dantr(arch, derive_seed(config.seed, 0xDA7)), source, target, config,
                     mmd, val, options, sink);
}

DanTrResult train_dantr(DanTrParams init, const Dataset& source, const Dataset& target,
                        const TrainConfig& c, const MkMmdConfig& mmd, const Dataset& val,
                        const DanTrOptions& options, const MetricsSink& sink) {
  validate(c);
  validate(mmd);
  require_labeled(source, "train_dantr (source)");
  require_labeled(target, "train_dantr (target)");
  require_labeled(val, "train_dantr (validation)");

  DanTrResult r;
  r.params = std::move(init);
  DanTrParams grad = zeros_like(r.params);
  auto params = parameter_arrays(r.params);
  auto grads = parameter_arrays(grad);
  r.optimizer = Adam(params, c.adam);

  const bool use_teacher = c.mean_teacher && c.consistency_in_dantr;
  DanTrParams teacher = r.params;
  auto teacher_params = parameter_arrays(teacher);

  Rng rng(c.seed);
  BatchSampler src_sampler(source.size(), static_cast<std::size_t>(c.batch_size));
  BatchSampler tgt_sampler(target.size(), static_cast<std::size_t>(c.batch_size));
  const auto t0 = std::chrono::steady_clock::now();
  DanTrGradOptions gopt;
  gopt.include_mmd = !options.disable_mmd;
  gopt.detach_adaptation_mmd = options.detach_adaptation_mmd;
  Scalar run_total = 0, run_reg = 0, run_mmd = 0;
  long long run_n = 0;

  for (long long step = 0; step < c.n_steps; ++step) {
    const Scalar lr = cosine_lr(step, c.n_steps, c.base_lr, c.lr_min);
    const auto si = src_sampler.next(rng);
    const auto ti = tgt_sampler.next(rng);
    const SequenceBatch xs = input_batch(source, si), ys = output_batch(source, si);
    const SequenceBatch xt = input_batch(target, ti), yt = output_batch(target, ti);
    const Scalar cw = use_teacher ? consistency_weight_at(step, c) : 0.0;

    SequenceBatch xt_in = xt;
    if (cw > 0) add_noise(xt_in.data, c.input_noise_std, rng);
    const ForwardBundle bundle = forward_dantr(r.params, xs, xt_in, mmd, !options.disable_mmd);

    for (auto g : grads) std::fill(g.begin(), g.end(), 0.0);
    DanTrLoss loss = dantr_gradient(r.params, bundle, ys, yt, step, c.n_steps, mmd, gopt, grad);
    if (options.disable_mmd) {
      loss.lambda = 0.0;
      loss.total = loss.reg;
    }
    if (cw > 0) {
      // Consistency on the target branch only; its gradient enters the target head.
      const Matrix tp = predict(target_branch(teacher), xt).data;
      const Matrix cdiff = bundle.y_hat_t.data - tp;
      loss.total += cw * cdiff.squaredNorm() / static_cast<Scalar>(cdiff.size());
      const Matrix d = cw * 2.0 * cdiff / static_cast<Scalar>(cdiff.size());
      const Matrix dh = backward(r.params.target, bundle.target_t, d, {}, grad.target, true);
      backward(r.params.shared, bundle.shared_t, dh, {}, grad.shared, false);
    }
    check_loss(loss.total, step, "train_dantr");
    r.trace.push_back({step, loss.reg, loss.mmd, loss.lambda});
    run_total += loss.total;
    run_reg += loss.reg;
    run_mmd += loss.mmd;
    ++run_n;

    clip_gradients(grads, c.max_grad_norm);
    r.optimizer.step(params, read_only(grads), lr);
    if (use_teacher) ema_update(teacher_params, read_only(params), ema_alpha_at(step, c.ema_alpha));

    if ((step + 1) % c.eval_interval == 0 || step + 1 == c.n_steps) {
      MetricPoint p;
      p.step = step + 1;
      p.train_loss = run_total / static_cast<Scalar>(run_n);
      p.reg = run_reg / static_cast<Scalar>(run_n);
      p.mmd = run_mmd / static_cast<Scalar>(run_n);
      p.lambda = loss.lambda;
      p.val_mse = evaluate_mse(target_branch(r.params), val);
      p.val_mse_teacher = std::numeric_limits<Scalar>::quiet_NaN();
      p.lr = lr;
      p.wall_seconds = seconds_since(t0);
      r.history.push_back(p);
      sink.record(p);
      run_total = run_reg = run_mmd = 0;
      run_n = 0;
    }
  }
  r.val_mse = r.history.back().val_mse;
  r.rng_state = rng_state(rng);
  return r;
}

}  // namespace selftransfer
