#include "selftransfer/checkpoint.hpp"
#include "selftransfer/config.hpp"
#include "selftransfer/orchestrator.hpp"
#include "selftransfer/reporting.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>
#include <optional>

using namespace selftransfer;
namespace fs = std::filesystem;

namespace {

RunConfig config_from(const std::string& file, std::optional<std::uint64_t> seed) {
  RunConfig c = file.empty() ? desk_scale_config() : load_config(file);
  if (seed) c.framework.master_seed = *seed;
  return c;
}

CaseStudy study_from(const std::string& data_dir, const RunConfig& c) {
  return data_dir.empty() ? build_case_study(c.data) : read_case_study(data_dir);
}

Dataset normalized(Dataset d) {
  if (d.normalized) return d;
  if (!d.norm) throw Error("dataset carries no normalization parameters");
  return normalize(d, *d.norm);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-iterative transfer learning for small-sample sequence surrogates"};
  app.require_subcommand(1);

  std::string config_file, out_dir, data_dir, checkpoint_file, dataset_dir, run_dir, kind = "surrogate";
  std::optional<std::uint64_t> seed;
  bool plots = false;

  auto* gen = app.add_subcommand("gen-data", "Generate the Bouc-Wen case study datasets");
  gen->add_option("--config", config_file, "JSON config file");
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--seed", seed, "Override the data seed");

  auto* train = app.add_subcommand("train", "Train one surrogate or transfer model");
  train->add_option("--config", config_file, "JSON config file");
  train->add_option("--data", data_dir, "Case study directory (generated from the config if omitted)");
  train->add_option("--out", out_dir, "Output directory")->required();
  train->add_option("--kind", kind, "surrogate or dantr")->check(CLI::IsMember({"surrogate", "dantr"}));
  train->add_option("--source", dataset_dir, "Pseudo-labeled source dataset (dantr only)");
  train->add_option("--seed", seed, "Training seed");

  auto* eval = app.add_subcommand("evaluate", "Mean squared error of a checkpoint on a dataset");
  eval->add_option("--checkpoint", checkpoint_file, "Checkpoint file")->required();
  eval->add_option("--dataset", dataset_dir, "Labeled dataset directory")->required();

  auto* iterate = app.add_subcommand("iterate", "Run the full iterative framework");
  iterate->add_option("--config", config_file, "JSON config file");
  iterate->add_option("--out", out_dir, "Run directory")->required();
  iterate->add_option("--data", data_dir, "Case study directory (generated from the config if omitted)");
  iterate->add_option("--seed", seed, "Override framework.master_seed");

  auto* report = app.add_subcommand("report", "Summarize a run directory");
  report->add_option("--run", run_dir, "Run directory")->required();
  report->add_flag("--plots", plots, "Also write prediction overlays for the validation set");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      RunConfig c = config_from(config_file, std::nullopt);
      if (seed) c.data.seed = *seed;
      const CaseStudy study = build_case_study(c.data);
      write_case_study(study, c.data, out_dir);
      std::cout << "wrote " << study.train.size() << " train, " << study.val.size() << " val, "
                << study.test.size() << " test, " << study.target.size() << " target and "
                << study.unlabeled.size() << " unlabeled samples to " << out_dir << '\n';
    } else if (train->parsed()) {
      const RunConfig c = config_from(config_file, std::nullopt);
      const FrameworkData data = prepare_data(study_from(data_dir, c));
      fs::create_directories(out_dir);
      std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl");
      Checkpoint ck;
      Scalar val = 0;
      if (kind == "surrogate") {
        TrainConfig tc = c.train;
        tc.seed = seed.value_or(c.framework.master_seed);
        auto r = train_supervised(c.surrogate, data.target, tc, data.val, MetricsSink(&metrics));
        const bool use_teacher = tc.mean_teacher && r.teacher_val_mse < r.student_val_mse;
        val = use_teacher ? r.teacher_val_mse : r.student_val_mse;
        ck = make_checkpoint(std::move(r.student));
        if (tc.mean_teacher) ck.teacher = std::move(r.teacher);
        ck.predict_with_teacher = use_teacher;
        ck.optimizer = std::move(r.optimizer);
        ck.rng_state = std::move(r.rng_state);
      } else {
        if (dataset_dir.empty()) throw Error("train --kind dantr needs --source <dataset dir>");
        TrainConfig tc = c.dantr_train;
        tc.seed = seed.value_or(c.framework.master_seed);
        const Dataset source = normalized(read_dataset(dataset_dir));
        auto r = train_dantr(c.dantr, source, data.target, tc, c.mmd, data.val, {},
                             MetricsSink(&metrics));
        val = r.val_mse;
        ck = make_checkpoint(std::move(r.params));
        ck.optimizer = std::move(r.optimizer);
        ck.rng_state = std::move(r.rng_state);
      }
      save_checkpoint(ck, fs::path(out_dir) / "checkpoint.json");
      std::cout << "validation mse " << val << '\n';
    } else if (eval->parsed()) {
      const Checkpoint ck = load_checkpoint(checkpoint_file);
      std::cout << evaluate_mse(ck.predictor(), normalized(read_dataset(dataset_dir))) << '\n';
    } else if (iterate->parsed()) {
      const RunConfig c = config_from(config_file, seed);
      const FrameworkData data = prepare_data(study_from(data_dir, c));
      FrameworkHooks hooks;
      hooks.log = &std::cerr;
      const RunRecord run = run_framework(c, data, out_dir, hooks);
      std::cout << summarize_run(run);
    } else if (report->parsed()) {
      for (const auto& f : write_report(run_dir, plots)) std::cout << f.string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
