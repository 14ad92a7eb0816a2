#include "selftransfer/config.hpp"

#include "json.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace selftransfer {

using nlohmann::json;

namespace {

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error("config: '" + path_ + "' must be an object");
  }

  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw Error("config: unknown key '" + where(key) + "'");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& at(const std::string& key) const { return j_.at(key); }
  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(key, "a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) fail(key, "an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned() == false && v.get<long long>() < 0) fail(key, "a non-negative integer");
      }
      out = v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(key, "a number");
      out = v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(key, "a string");
      out = v.get<std::string>();
    } else {
      static_assert(sizeof(T) == 0, "unsupported config type");
    }
  }

  void read_range(const std::string& key, std::pair<Scalar, Scalar>& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
      fail(key, "a two-element numeric array");
    out = {v[0].get<Scalar>(), v[1].get<Scalar>()};
  }

  [[noreturn]] void fail(const std::string& key, const std::string& expected) const {
    throw Error("config: '" + where(key) + "' must be " + expected);
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename E, typename Parse>
void read_enum(Section& s, const std::string& key, E& out, Parse parse) {
  std::string text;
  if (!s.has(key)) return;
  s.read(key, text);
  try {
    out = parse(text);
  } catch (const Error& e) {
    throw Error("config: '" + s.where(key) + "': " + e.what());
  }
}

AugmentOp augment_op_from(const std::string& s) {
  if (s == "slice") return AugmentOp::slice;
  if (s == "splice") return AugmentOp::splice;
  if (s == "weighted-average") return AugmentOp::weighted_average;
  throw Error("unknown augmentation '" + s + "' (slice, splice, weighted-average)");
}

std::string augment_op_name(AugmentOp op) {
  switch (op) {
    case AugmentOp::slice: return "slice";
    case AugmentOp::splice: return "splice";
    case AugmentOp::weighted_average: return "weighted-average";
  }
  return {};
}

void read_data(const json& j, CaseStudyConfig& c) {
  Section s(j, "data");
  s.read("n_labeled", c.n_labeled);
  if (s.has("splits")) {
    Section sp(s.at("splits"), "data.splits");
    sp.read("train", c.splits.train);
    sp.read("val", c.splits.val);
    sp.read("test", c.splits.test);
  }
  s.read("n_target", c.n_target);
  s.read("n_unlabeled", c.n_unlabeled);
  s.read("n_unlabeled_base", c.n_unlabeled_base);
  if (s.has("sine")) {
    Section ss(s.at("sine"), "data.sine");
    ss.read("n_components", c.sine.n_components);
    ss.read_range("period_range", c.sine.period_range);
    ss.read_range("amplitude_range", c.sine.amplitude_range);
    ss.read("length", c.sine.length);
    ss.read("dt", c.sine.dt);
    ss.read("start_at_rest", c.sine.start_at_rest);
  }
  s.read_range("peak_range", c.peak_range);
  s.read_range("unlabeled_peak_range", c.unlabeled_peak_range);
  if (s.has("boucwen")) {
    Section b(s.at("boucwen"), "data.boucwen");
    b.read("k", c.boucwen.k);
    b.read("alpha", c.boucwen.alpha);
    b.read("A", c.boucwen.A);
    b.read("beta", c.boucwen.beta);
    b.read("gamma", c.boucwen.gamma);
    b.read("n", c.boucwen.n_exp);
    b.read("dt_sub", c.boucwen.dt_sub);
  }
  if (s.has("augment")) {
    Section a(s.at("augment"), "data.augment");
    if (a.has("ops")) {
      const json& ops = a.at("ops");
      if (!ops.is_array()) a.fail("ops", "an array of strings");
      c.augment.ops_enabled.clear();
      for (const auto& op : ops) {
        if (!op.is_string()) a.fail("ops", "an array of strings");
        try {
          c.augment.ops_enabled.push_back(augment_op_from(op.get<std::string>()));
        } catch (const Error& e) {
          throw Error("config: 'data.augment.ops': " + std::string(e.what()));
        }
      }
    }
    a.read("min_slice_fraction", c.augment.min_slice_fraction);
  }
  s.read("joint_normalization", c.joint_normalization);
  s.read("seed", c.seed);
}

void read_surrogate(const json& j, SurrogateArch& a, const std::string& path) {
  Section s(j, path);
  s.read("recurrent_layers", a.n_recurrent_layers);
  s.read("dense_layers", a.n_dense_layers);
  s.read("hidden", a.hidden_dim);
}

void read_dantr(const json& j, DanTrArch& a) {
  Section s(j, "dantr");
  s.read("shared_recurrent_layers", a.shared_recurrent_layers);
  s.read("tailored_recurrent_layers", a.tailored_recurrent_layers);
  s.read("tailored_dense_layers", a.tailored_dense_layers);
  s.read("hidden", a.hidden_dim);
}

void read_train(const json& j, TrainConfig& c, const std::string& path) {
  Section s(j, path);
  s.read("steps", c.n_steps);
  s.read("batch_size", c.batch_size);
  s.read("base_lr", c.base_lr);
  s.read("lr_min", c.lr_min);
  s.read("adam_beta1", c.adam.beta1);
  s.read("adam_beta2", c.adam.beta2);
  s.read("adam_epsilon", c.adam.epsilon);
  s.read("mean_teacher", c.mean_teacher);
  s.read("ema_alpha", c.ema_alpha);
  s.read("consistency_weight_max", c.consistency_weight_max);
  s.read("consistency_ramp_fraction", c.consistency_ramp_fraction);
  s.read("input_noise_std", c.input_noise_std);
  s.read("consistency_in_dantr", c.consistency_in_dantr);
  s.read("labeled_weight", c.labeled_weight);
  s.read("max_grad_norm", c.max_grad_norm);
  s.read("eval_interval", c.eval_interval);
}

void read_mmd(const json& j, MkMmdConfig& c) {
  Section s(j, "mmd");
  s.read("n_kernels", c.n_kernels);
  read_enum(s, "bandwidth_mode", c.bandwidth_mode, [](const std::string& v) {
    if (v == "median-ladder") return BandwidthMode::median_ladder;
    if (v == "fixed") return BandwidthMode::fixed;
    throw Error("expected median-ladder or fixed, got '" + v + "'");
  });
  s.read("ladder_factor", c.ladder_factor);
  if (s.has("fixed_sigmas")) {
    const json& v = s.at("fixed_sigmas");
    if (!v.is_array()) s.fail("fixed_sigmas", "an array of numbers");
    c.fixed_sigmas.clear();
    for (const auto& x : v) {
      if (!x.is_number()) s.fail("fixed_sigmas", "an array of numbers");
      c.fixed_sigmas.push_back(x.get<Scalar>());
    }
  }
  read_enum(s, "estimator", c.estimator, [](const std::string& v) {
    if (v == "biased") return MmdEstimator::biased;
    if (v == "unbiased") return MmdEstimator::unbiased;
    throw Error("expected biased or unbiased, got '" + v + "'");
  });
  s.read("layer_first", c.layer_first);
  s.read("layer_last", c.layer_last);
  read_enum(s, "representation", c.representation, [](const std::string& v) {
    if (v == "final-step") return Representation::final_step;
    if (v == "mean-over-time") return Representation::mean_over_time;
    throw Error("expected final-step or mean-over-time, got '" + v + "'");
  });
}

void read_framework(const json& j, FrameworkConfig& c) {
  Section s(j, "framework");
  s.read("n_inits", c.n_inits);
  s.read("pl_per_block", c.pl_per_block);
  s.read("max_iterations", c.max_iterations);
  s.read("stop_epsilon", c.stop_epsilon);
  s.read("stop_patience", c.stop_patience);
  s.read("pseudo_count_per_iter", c.pseudo_count_per_iter);
  read_enum(s, "final_arch", c.final_arch,
            [](const std::string& v) { return final_arch_from_string(v); });
  s.read("master_seed", c.master_seed);
  s.read("accumulate_pseudo", c.accumulate_pseudo);
  s.read("enlarge_target", c.enlarge_target);
  s.read("enlarge_fraction", c.enlarge_fraction);
}

json train_json(const TrainConfig& c) {
  return {{"steps", c.n_steps},
          {"batch_size", c.batch_size},
          {"base_lr", c.base_lr},
          {"lr_min", c.lr_min},
          {"adam_beta1", c.adam.beta1},
          {"adam_beta2", c.adam.beta2},
          {"adam_epsilon", c.adam.epsilon},
          {"mean_teacher", c.mean_teacher},
          {"ema_alpha", c.ema_alpha},
          {"consistency_weight_max", c.consistency_weight_max},
          {"consistency_ramp_fraction", c.consistency_ramp_fraction},
          {"input_noise_std", c.input_noise_std},
          {"consistency_in_dantr", c.consistency_in_dantr},
          {"labeled_weight", c.labeled_weight},
          {"max_grad_norm", c.max_grad_norm},
          {"eval_interval", c.eval_interval}};
}

json surrogate_json(const SurrogateArch& a) {
  return {{"recurrent_layers", a.n_recurrent_layers},
          {"dense_layers", a.n_dense_layers},
          {"hidden", a.hidden_dim}};
}

json range_json(const std::pair<Scalar, Scalar>& r) { return json::array({r.first, r.second}); }

}  // namespace

RunConfig parse_config(const std::string& text, const RunConfig& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("config: not valid JSON: ") + e.what());
  }
  RunConfig c = base;
  try {
    Section top(j, "");
    if (top.has("data")) read_data(top.at("data"), c.data);
    if (top.has("surrogate")) read_surrogate(top.at("surrogate"), c.surrogate, "surrogate");
    if (top.has("final_surrogate"))
      read_surrogate(top.at("final_surrogate"), c.final_surrogate, "final_surrogate");
    if (top.has("dantr")) read_dantr(top.at("dantr"), c.dantr);
    if (top.has("train")) read_train(top.at("train"), c.train, "train");
    if (top.has("dantr_train")) read_train(top.at("dantr_train"), c.dantr_train, "dantr_train");
    if (top.has("mmd")) read_mmd(top.at("mmd"), c.mmd);
    if (top.has("framework")) read_framework(top.at("framework"), c.framework);
  } catch (const json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  try {
    validate(c);
  } catch (const Error& e) {
    throw Error(std::string("config: invalid values: ") + e.what());
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& file, const RunConfig& base) {
  std::ifstream in(file);
  if (!in) throw Error("config: cannot open " + file.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config(os.str(), base);
}

std::string dump_config(const RunConfig& c) {
  json ops = json::array();
  for (auto op : c.data.augment.ops_enabled) ops.push_back(augment_op_name(op));
  json j;
  j["data"] = {
      {"n_labeled", c.data.n_labeled},
      {"splits", {{"train", c.data.splits.train}, {"val", c.data.splits.val}, {"test", c.data.splits.test}}},
      {"n_target", c.data.n_target},
      {"n_unlabeled", c.data.n_unlabeled},
      {"n_unlabeled_base", c.data.n_unlabeled_base},
      {"sine",
       {{"n_components", c.data.sine.n_components},
        {"period_range", range_json(c.data.sine.period_range)},
        {"amplitude_range", range_json(c.data.sine.amplitude_range)},
        {"length", c.data.sine.length},
        {"dt", c.data.sine.dt},
        {"start_at_rest", c.data.sine.start_at_rest}}},
      {"peak_range", range_json(c.data.peak_range)},
      {"unlabeled_peak_range", range_json(c.data.unlabeled_peak_range)},
      {"boucwen",
       {{"k", c.data.boucwen.k},
        {"alpha", c.data.boucwen.alpha},
        {"A", c.data.boucwen.A},
        {"beta", c.data.boucwen.beta},
        {"gamma", c.data.boucwen.gamma},
        {"n", c.data.boucwen.n_exp},
        {"dt_sub", c.data.boucwen.dt_sub}}},
      {"augment", {{"ops", ops}, {"min_slice_fraction", c.data.augment.min_slice_fraction}}},
      {"joint_normalization", c.data.joint_normalization},
      {"seed", c.data.seed}};
  j["surrogate"] = surrogate_json(c.surrogate);
  j["final_surrogate"] = surrogate_json(c.final_surrogate);
  j["dantr"] = {{"shared_recurrent_layers", c.dantr.shared_recurrent_layers},
                {"tailored_recurrent_layers", c.dantr.tailored_recurrent_layers},
                {"tailored_dense_layers", c.dantr.tailored_dense_layers},
                {"hidden", c.dantr.hidden_dim}};
  j["train"] = train_json(c.train);
  j["dantr_train"] = train_json(c.dantr_train);
  j["mmd"] = {
      {"n_kernels", c.mmd.n_kernels},
      {"bandwidth_mode", c.mmd.bandwidth_mode == BandwidthMode::fixed ? "fixed" : "median-ladder"},
      {"ladder_factor", c.mmd.ladder_factor},
      {"fixed_sigmas", c.mmd.fixed_sigmas},
      {"estimator", c.mmd.estimator == MmdEstimator::unbiased ? "unbiased" : "biased"},
      {"layer_first", c.mmd.layer_first},
      {"layer_last", c.mmd.layer_last},
      {"representation",
       c.mmd.representation == Representation::mean_over_time ? "mean-over-time" : "final-step"}};
  j["framework"] = {{"n_inits", c.framework.n_inits},
                    {"pl_per_block", c.framework.pl_per_block},
                    {"max_iterations", c.framework.max_iterations},
                    {"stop_epsilon", c.framework.stop_epsilon},
                    {"stop_patience", c.framework.stop_patience},
                    {"pseudo_count_per_iter", c.framework.pseudo_count_per_iter},
                    {"final_arch", std::string(to_string(c.framework.final_arch))},
                    {"master_seed", c.framework.master_seed},
                    {"accumulate_pseudo", c.framework.accumulate_pseudo},
                    {"enlarge_target", c.framework.enlarge_target},
                    {"enlarge_fraction", c.framework.enlarge_fraction}};
  return j.dump(2) + "\n";
}

}  // namespace selftransfer
