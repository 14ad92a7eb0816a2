#include "selftransfer/orchestrator.hpp"

#include "selftransfer/config.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace selftransfer {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(IterationKind kind) {
  switch (kind) {
    case IterationKind::direct: return "direct";
    case IterationKind::pl: return "pl";
    case IterationKind::dantr: return "dantr";
    case IterationKind::final: return "final";
  }
  return "?";
}

IterationKind iteration_kind_from_string(std::string_view s) {
  if (s == "direct") return IterationKind::direct;
  if (s == "pl") return IterationKind::pl;
  if (s == "dantr") return IterationKind::dantr;
  if (s == "final") return IterationKind::final;
  throw Error("unknown iteration kind '" + std::string(s) + "'");
}

std::string_view to_string(FinalArch arch) {
  return arch == FinalArch::surrogate_default ? "surrogate-default" : "pluggable";
}

FinalArch final_arch_from_string(std::string_view s) {
  if (s == "surrogate-default") return FinalArch::surrogate_default;
  if (s == "pluggable") return FinalArch::pluggable;
  throw Error("unknown final_arch '" + std::string(s) + "' (surrogate-default, pluggable)");
}

void validate(const FrameworkConfig& c) {
  if (c.n_inits < 1) throw Error("framework: n_inits must be >= 1");
  if (c.pl_per_block < 1) throw Error("framework: pl_per_block must be >= 1");
  if (c.max_iterations < 1) throw Error("framework: max_iterations must be >= 1");
  if (!(c.stop_epsilon >= 0)) throw Error("framework: stop_epsilon must be >= 0");
  if (c.stop_patience < 0) throw Error("framework: stop_patience must be >= 0");
  if (c.pseudo_count_per_iter == 0)
    throw Error(
        "framework: pseudo_count_per_iter must be > 0 (a zero count only repeats direct "
        "training on the target set; set max_iterations = 1 for that)");
  if (c.enlarge_target && !(c.enlarge_fraction > 0 && c.enlarge_fraction <= 1))
    throw Error("framework: enlarge_fraction must lie in (0, 1]");
}

void validate(const RunConfig& c) {
  validate(c.surrogate);
  validate(c.final_surrogate);
  validate(c.dantr);
  validate(c.train);
  validate(c.dantr_train);
  validate(c.mmd);
  validate(c.framework);
  validate(c.data.sine);
  validate(c.data.boucwen, c.data.sine.dt);
  validate(c.data.augment);
  const int tailored = c.dantr.tailored_recurrent_layers + c.dantr.tailored_dense_layers;
  if (c.mmd.layer_last >= tailored)
    throw Error("mk-mmd: layer_last " + std::to_string(c.mmd.layer_last) +
                " exceeds the tailored head (" + std::to_string(tailored) + " layers)");
  if (c.data.n_unlabeled < c.framework.pseudo_count_per_iter)
    throw Error("framework: pseudo_count_per_iter exceeds the unlabeled pool size");
  if (c.data.n_target < 1) throw Error("data: n_target must be >= 1");
}

RunConfig desk_scale_config() {
  RunConfig c;
  c.surrogate = {2, 2, 16, 1, 1};
  c.final_surrogate = c.surrogate;
  c.dantr = {1, 1, 2, 16, 1, 1};
  c.train.n_steps = 1500;
  c.train.batch_size = 16;
  c.train.base_lr = 5e-3;
  c.train.lr_min = 5e-4;
  c.train.ema_alpha = 0.99;
  c.train.eval_interval = 250;
  c.dantr_train = c.train;
  // Trained from scratch against two heads plus MMD; needs a longer budget.
  c.dantr_train.n_steps = 3000;
  c.framework.pseudo_count_per_iter = 500;
  return c;
}

const IterationRecord* RunRecord::final_record() const {
  if (iterations.empty() || iterations.back().kind != IterationKind::final) return nullptr;
  return &iterations.back();
}

FrameworkData prepare_data(const CaseStudy& s) {
  return {normalize(s.target, s.norm), normalize(s.val, s.norm), normalize(s.test, s.norm),
          normalize(s.unlabeled, s.norm), s.norm};
}

bool should_stop(const std::vector<IterationRecord>& h, const FrameworkConfig& c) {
  if (static_cast<int>(h.size()) >= c.max_iterations) return true;
  if (c.stop_patience == 0 || static_cast<int>(h.size()) <= c.stop_patience) return false;
  for (int k = 0; k < c.stop_patience; ++k)
    if (!(h[h.size() - 1 - k].relative_reduction < c.stop_epsilon)) return false;
  return true;
}

IterationKind scheduled_kind(int index, const FrameworkConfig& c) {
  if (index == 0) return IterationKind::direct;
  return (index - 1) % (c.pl_per_block + 1) < c.pl_per_block ? IterationKind::pl
                                                              : IterationKind::dantr;
}

std::uint64_t iteration_seed(std::uint64_t master, int iteration, int init) {
  return derive_seed(master, static_cast<std::uint64_t>(iteration), static_cast<std::uint64_t>(init));
}

namespace {

constexpr std::uint64_t pseudo_stream = 0x50534555;

json record_json(const IterationRecord& r) {
  json j = {{"index", r.index},
            {"kind", std::string(to_string(r.kind))},
            {"seeds", r.seeds},
            {"per_seed_val_mse", r.per_seed_val_mse},
            {"avg_val_mse", r.avg_val_mse},
            {"relative_reduction", r.relative_reduction},
            {"checkpoints", r.checkpoints},
            {"chosen_init", r.chosen_init},
            {"chosen_checkpoint", r.chosen_checkpoint},
            {"parent_checkpoint", r.parent_checkpoint},
            {"source_dataset_ref", r.source_dataset_ref},
            {"target_dataset_ref", r.target_dataset_ref}};
  if (r.test_mse) j["test_mse"] = *r.test_mse;
  return j;
}

IterationRecord record_from(const json& j) {
  IterationRecord r;
  r.index = j.at("index").get<int>();
  r.kind = iteration_kind_from_string(j.at("kind").get<std::string>());
  r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  r.per_seed_val_mse = j.at("per_seed_val_mse").get<std::vector<Scalar>>();
  r.avg_val_mse = j.at("avg_val_mse").get<Scalar>();
  r.relative_reduction = j.at("relative_reduction").get<Scalar>();
  r.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
  r.chosen_init = j.at("chosen_init").get<int>();
  r.chosen_checkpoint = j.at("chosen_checkpoint").get<std::string>();
  r.parent_checkpoint = j.at("parent_checkpoint").get<std::string>();
  r.source_dataset_ref = j.at("source_dataset_ref").get<std::string>();
  r.target_dataset_ref = j.at("target_dataset_ref").get<std::string>();
  if (j.contains("test_mse")) r.test_mse = j.at("test_mse").get<Scalar>();
  return r;
}

std::string tag(int iteration, int init) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "iter-%02d-init-%d", iteration, init);
  return buf;
}

std::string read_text(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot open " + file.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct Trained {
  Checkpoint checkpoint;
  Scalar val_mse = 0;
};

Trained surrogate_result(SupervisedResult r, bool mean_teacher) {
  const bool use_teacher = mean_teacher && r.teacher_val_mse < r.student_val_mse;
  Trained t{make_checkpoint(std::move(r.student)), use_teacher ? r.teacher_val_mse : r.student_val_mse};
  if (mean_teacher) t.checkpoint.teacher = std::move(r.teacher);
  t.checkpoint.predict_with_teacher = use_teacher;
  t.checkpoint.optimizer = std::move(r.optimizer);
  t.checkpoint.rng_state = std::move(r.rng_state);
  return t;
}

}  // namespace

RunRecord read_run(const fs::path& run_dir) {
  RunRecord run;
  const fs::path file = run_dir / "records";
  std::ifstream in(file);
  if (!in) throw Error("run: no records file in " + run_dir.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (j.contains("test_accesses")) {
        run.test_accesses = j.at("test_accesses").get<int>();
        continue;
      }
      run.iterations.push_back(record_from(j));
    } catch (const json::exception& e) {
      throw Error("run: malformed record on line " + std::to_string(line_no) + " of " +
                  file.string() + ": " + e.what());
    }
  }
  if (fs::exists(run_dir / "config-frozen"))
    run.master_seed = parse_config(read_text(run_dir / "config-frozen"), RunConfig{}).framework.master_seed;
  run.complete = run.final_record() != nullptr;
  return run;
}

Framework::Framework(RunConfig config, const FrameworkData& data, fs::path run_dir,
                     FrameworkHooks hooks)
    : config_(std::move(config)), data_(&data), run_dir_(std::move(run_dir)),
      hooks_(std::move(hooks)), test_(data.test) {
  validate(config_);
  if (data.pool.size() < config_.framework.pseudo_count_per_iter)
    throw Error("framework: unlabeled pool has " + std::to_string(data.pool.size()) +
                " samples, fewer than pseudo_count_per_iter");
  fs::create_directories(run_dir_ / "checkpoints");
  fs::create_directories(run_dir_ / "snapshots");
  fs::create_directories(run_dir_ / "metrics");
  if (!fs::exists(run_dir_ / "snapshots" / "target"))
    write_dataset(data.target, run_dir_ / "snapshots" / "target");
  if (!fs::exists(run_dir_ / "snapshots" / "val")) write_dataset(data.val, run_dir_ / "snapshots" / "val");
}

void Framework::restore(const std::vector<IterationRecord>& records) {
  history_ = records;
}

void Framework::commit(const IterationRecord& record) {
  history_.push_back(record);
  std::ofstream out(run_dir_ / "records", std::ios::app);
  if (!out) throw Error("framework: cannot append to " + (run_dir_ / "records").string());
  out << record_json(record).dump() << '\n';
  if (record.kind == IterationKind::final)
    out << json{{"test_accesses", test_.accesses()}}.dump() << '\n';
}

IterationRecord Framework::finish(IterationRecord r) const {
  r.index = next_index();
  const auto n = static_cast<Scalar>(r.per_seed_val_mse.size());
  r.avg_val_mse = std::accumulate(r.per_seed_val_mse.begin(), r.per_seed_val_mse.end(), 0.0) / n;
  r.relative_reduction = history_.empty() ? 0.0 : 1.0 - r.avg_val_mse / history_.back().avg_val_mse;
  const auto best = std::min_element(r.per_seed_val_mse.begin(), r.per_seed_val_mse.end());
  r.chosen_init = static_cast<int>(best - r.per_seed_val_mse.begin());
  r.chosen_checkpoint = r.checkpoints[static_cast<std::size_t>(r.chosen_init)];
  if (hooks_.log) {
    *hooks_.log << "iteration " << r.index << " (" << to_string(r.kind) << "): avg val mse "
                << r.avg_val_mse << ", reduction " << r.relative_reduction << '\n';
  }
  return r;
}

std::string Framework::latest_pseudo_ref() const {
  for (auto it = history_.rbegin(); it != history_.rend(); ++it)
    if (it->kind == IterationKind::pl) return it->source_dataset_ref;
  throw Error("framework: no pseudo-labeled dataset yet (a pl iteration must come first)");
}

Dataset Framework::load_snapshot(const std::string& ref) const { return read_dataset(run_dir_ / ref); }

std::string Framework::save_snapshot(const Dataset& d, const std::string& name) const {
  const std::string ref = "snapshots/" + name;
  const fs::path dir = run_dir_ / ref;
  // Snapshots are immutable once referenced; an interrupted write is redone.
  if (fs::exists(dir)) fs::remove_all(dir);
  write_dataset(d, dir);
  return ref;
}

Network Framework::chosen_network() const {
  if (history_.empty()) throw Error("framework: no chosen checkpoint yet (run direct training first)");
  return load_checkpoint(run_dir_ / history_.back().chosen_checkpoint).predictor();
}

Dataset Framework::transfer_target() const {
  if (!config_.framework.enlarge_target) return data_->target;
  const Dataset pseudo = load_snapshot(latest_pseudo_ref());
  const Checkpoint parent = load_checkpoint(run_dir_ / history_.back().chosen_checkpoint);
  if (parent.kind != CheckpointKind::surrogate || !parent.teacher) return data_->target;
  const auto student = predict_dataset(parent.network, pseudo);
  const auto teacher = predict_dataset(*parent.teacher, pseudo);
  std::vector<std::pair<Scalar, std::size_t>> gap;
  for (std::size_t i = 0; i < pseudo.size(); ++i)
    gap.emplace_back((student[i] - teacher[i]).squaredNorm(), i);
  std::sort(gap.begin(), gap.end());
  const auto keep = static_cast<std::size_t>(
      std::llround(config_.framework.enlarge_fraction * static_cast<Scalar>(pseudo.size())));
  Dataset out = data_->target;
  for (std::size_t k = 0; k < keep && k < gap.size(); ++k)
    out.samples.push_back(pseudo.samples[gap[k].second]);
  return out;
}

IterationRecord Framework::run_direct() {
  IterationRecord r;
  r.kind = IterationKind::direct;
  r.target_dataset_ref = "snapshots/target";
  const int index = next_index();
  for (int i = 0; i < config_.framework.n_inits; ++i) {
    TrainConfig tc = config_.train;
    tc.seed = iteration_seed(config_.framework.master_seed, index, i);
    std::ofstream metrics(run_dir_ / "metrics" / (tag(index, i) + ".jsonl"));
    auto t = surrogate_result(
        train_supervised(config_.surrogate, data_->target, tc, data_->val, MetricsSink(&metrics)),
        tc.mean_teacher);
    const std::string ref = "checkpoints/" + tag(index, i) + ".json";
    t.checkpoint.metadata = {{"iteration", std::to_string(index)}, {"kind", "direct"}};
    save_checkpoint(t.checkpoint, run_dir_ / ref);
    r.seeds.push_back(tc.seed);
    r.per_seed_val_mse.push_back(t.val_mse);
    r.checkpoints.push_back(ref);
  }
  return finish(std::move(r));
}

IterationRecord Framework::run_pl_iteration() {
  const int index = next_index();
  IterationRecord r;
  r.kind = IterationKind::pl;
  r.parent_checkpoint = history_.empty() ? "" : history_.back().chosen_checkpoint;
  const Network parent = chosen_network();
  Dataset pseudo = pseudo_label(parent, data_->pool, config_.framework.pseudo_count_per_iter,
                                derive_seed(config_.framework.master_seed, pseudo_stream,
                                            static_cast<std::uint64_t>(index)));
  char name[32];
  std::snprintf(name, sizeof name, "pseudo-%02d", index);
  r.source_dataset_ref = save_snapshot(pseudo, name);
  r.target_dataset_ref = "snapshots/target";
  // Train on what was written so a resumed run sees identical data.
  const Dataset train = merge(load_snapshot(r.source_dataset_ref), data_->target, Role::pseudo_source);
  for (int i = 0; i < config_.framework.n_inits; ++i) {
    TrainConfig tc = config_.train;
    tc.seed = iteration_seed(config_.framework.master_seed, index, i);
    std::ofstream metrics(run_dir_ / "metrics" / (tag(index, i) + ".jsonl"));
    auto t = surrogate_result(
        train_supervised(config_.surrogate, train, tc, data_->val, MetricsSink(&metrics)),
        tc.mean_teacher);
    const std::string ref = "checkpoints/" + tag(index, i) + ".json";
    t.checkpoint.metadata = {{"iteration", std::to_string(index)}, {"kind", "pl"}};
    save_checkpoint(t.checkpoint, run_dir_ / ref);
    r.seeds.push_back(tc.seed);
    r.per_seed_val_mse.push_back(t.val_mse);
    r.checkpoints.push_back(ref);
  }
  return finish(std::move(r));
}

IterationRecord Framework::run_dantr_iteration() {
  const int index = next_index();
  IterationRecord r;
  r.kind = IterationKind::dantr;
  r.parent_checkpoint = history_.empty() ? "" : history_.back().chosen_checkpoint;
  r.source_dataset_ref = latest_pseudo_ref();
  const Dataset source = load_snapshot(r.source_dataset_ref);
  const Dataset target = transfer_target();
  if (config_.framework.enlarge_target) {
    char name[32];
    std::snprintf(name, sizeof name, "target-%02d", index);
    r.target_dataset_ref = save_snapshot(target, name);
  } else {
    r.target_dataset_ref = "snapshots/target";
  }
  for (int i = 0; i < config_.framework.n_inits; ++i) {
    TrainConfig tc = config_.dantr_train;
    tc.seed = iteration_seed(config_.framework.master_seed, index, i);
    std::ofstream metrics(run_dir_ / "metrics" / (tag(index, i) + ".jsonl"));
    auto res = train_dantr(config_.dantr, source, target, tc, config_.mmd, data_->val, {},
                           MetricsSink(&metrics));
    Checkpoint c = make_checkpoint(std::move(res.params));
    c.optimizer = std::move(res.optimizer);
    c.rng_state = std::move(res.rng_state);
    c.metadata = {{"iteration", std::to_string(index)}, {"kind", "dantr"}};
    const std::string ref = "checkpoints/" + tag(index, i) + ".json";
    save_checkpoint(c, run_dir_ / ref);
    r.seeds.push_back(tc.seed);
    r.per_seed_val_mse.push_back(res.val_mse);
    r.checkpoints.push_back(ref);
  }
  return finish(std::move(r));
}

IterationRecord Framework::run_final() {
  if (history_.empty()) throw Error("framework: final training needs at least one iteration");
  const int index = next_index();
  IterationRecord r;
  r.kind = IterationKind::final;
  r.parent_checkpoint = history_.back().chosen_checkpoint;
  r.target_dataset_ref = "snapshots/target";
  Dataset train = data_->target;
  bool any_pseudo = false;
  for (const auto& h : history_) {
    if (h.kind != IterationKind::pl) continue;
    any_pseudo = true;
  }
  if (any_pseudo) {
    r.source_dataset_ref = latest_pseudo_ref();
    if (config_.framework.accumulate_pseudo) {
      for (const auto& h : history_)
        if (h.kind == IterationKind::pl)
          train = merge(load_snapshot(h.source_dataset_ref), train, Role::pseudo_source);
    } else {
      train = merge(load_snapshot(r.source_dataset_ref), train, Role::pseudo_source);
    }
  }
  const SurrogateArch arch = config_.framework.final_arch == FinalArch::pluggable
                                 ? config_.final_surrogate
                                 : config_.surrogate;
  std::vector<Network> models;
  for (int i = 0; i < config_.framework.n_inits; ++i) {
    TrainConfig tc = config_.train;
    tc.seed = iteration_seed(config_.framework.master_seed, index, i);
    std::ofstream metrics(run_dir_ / "metrics" / (tag(index, i) + ".jsonl"));
    auto t = surrogate_result(train_supervised(arch, train, tc, data_->val, MetricsSink(&metrics)),
                              tc.mean_teacher);
    const std::string ref = "checkpoints/" + tag(index, i) + ".json";
    t.checkpoint.metadata = {{"iteration", std::to_string(index)}, {"kind", "final"}};
    save_checkpoint(t.checkpoint, run_dir_ / ref);
    models.push_back(t.checkpoint.predictor());
    r.seeds.push_back(tc.seed);
    r.per_seed_val_mse.push_back(t.val_mse);
    r.checkpoints.push_back(ref);
  }
  r = finish(std::move(r));
  r.test_mse = evaluate_mse(models[static_cast<std::size_t>(r.chosen_init)], test_.open());
  if (hooks_.log) *hooks_.log << "final: test mse " << *r.test_mse << '\n';
  return r;
}

RunRecord run_framework(const RunConfig& config, const FrameworkData& data, const fs::path& run_dir,
                        const FrameworkHooks& hooks) {
  validate(config);
  const std::string frozen = dump_config(config);
  const fs::path frozen_file = run_dir / "config-frozen";
  std::vector<IterationRecord> previous;
  int previous_accesses = 0;
  if (fs::exists(frozen_file)) {
    if (read_text(frozen_file) != frozen)
      throw Error("framework: " + run_dir.string() +
                  " holds a run with a different config; use a fresh directory");
    if (fs::exists(run_dir / "records")) {
      RunRecord old = read_run(run_dir);
      if (old.complete) return old;
      previous = std::move(old.iterations);
      previous_accesses = old.test_accesses;
    }
  } else {
    fs::create_directories(run_dir);
    if (fs::exists(run_dir / "records"))
      throw Error("framework: " + run_dir.string() + " has records but no frozen config");
    std::ofstream out(frozen_file);
    out << frozen;
    if (!out) throw Error("framework: cannot write " + frozen_file.string());
  }
  if (previous_accesses != 0) throw Error("framework: test set already used by an unfinished run");

  Framework fw(config, data, run_dir, hooks);
  fw.restore(previous);
  auto step = [&](const IterationRecord& r) {
    fw.commit(r);
    return !hooks.after_iteration || hooks.after_iteration(r);
  };
  RunRecord run;
  run.master_seed = config.framework.master_seed;
  bool go_on = true;
  while (go_on && (fw.history().empty() || !should_stop(fw.history(), config.framework))) {
    const int index = static_cast<int>(fw.history().size());
    switch (scheduled_kind(index, config.framework)) {
      case IterationKind::direct: go_on = step(fw.run_direct()); break;
      case IterationKind::pl: go_on = step(fw.run_pl_iteration()); break;
      case IterationKind::dantr: go_on = step(fw.run_dantr_iteration()); break;
      case IterationKind::final: break;
    }
  }
  if (go_on) go_on = step(fw.run_final());
  run.iterations = fw.history();
  run.test_accesses = fw.test_accesses();
  run.complete = run.final_record() != nullptr;
  return run;
}

}  // namespace selftransfer
