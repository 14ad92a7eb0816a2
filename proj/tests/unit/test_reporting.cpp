#include "doctest.h"
#include "oracles.hpp"

#include "selftransfer/reporting.hpp"

#include <cstdlib>
#include <fstream>

using namespace selftransfer;

namespace {

const std::filesystem::path kFixtures = SELFTRANSFER_FIXTURES;

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::size_t count_svg(const std::filesystem::path& dir) {
  std::size_t n = 0;
  if (!std::filesystem::exists(dir)) return 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) n += e.path().extension() == ".svg";
  return n;
}

int run_cli(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string("\"") + SELFTRANSFER_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  return std::system(cmd.c_str());
}

const char* kTinyConfig = R"({
  "data": {"n_labeled": 40, "n_target": 4, "n_unlabeled": 30, "n_unlabeled_base": 10,
           "sine": {"length": 128}},
  "surrogate": {"recurrent_layers": 1, "dense_layers": 1, "hidden": 4},
  "final_surrogate": {"recurrent_layers": 1, "dense_layers": 1, "hidden": 4},
  "dantr": {"hidden": 4},
  "train": {"steps": 8, "batch_size": 4, "eval_interval": 4},
  "dantr_train": {"steps": 8, "batch_size": 4, "eval_interval": 4},
  "framework": {"n_inits": 2, "max_iterations": 4, "stop_patience": 0,
                "pseudo_count_per_iter": 10, "master_seed": 5}
})";

}  // namespace

TEST_SUITE("reporting") {
  TEST_CASE("summary matches the golden table") {
    CHECK(summarize_run(kFixtures / "run") == read_text(kFixtures / "summary.golden.tsv"));
  }

  TEST_CASE("reductions recompute from the averages") {
    const RunRecord run = read_run(kFixtures / "run");
    CHECK(run.complete);
    CHECK(run.test_accesses == 1);
    const auto s = reduction_series(run);
    REQUIRE(s.reductions.size() == 3);
    for (std::size_t i = 1; i < s.reductions.size(); ++i)
      CHECK(std::abs(s.reductions[i] - (1.0 - s.avg_val_mse[i] / s.avg_val_mse[i - 1])) < 1e-12);
    const std::string svg = reduction_svg(s);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("final") != std::string::npos);
  }

  TEST_CASE("incomplete runs have no test line") {
    RunRecord run = read_run(kFixtures / "run");
    run.iterations.pop_back();
    const std::string table = summarize_run(run);
    CHECK(table.find("test_mse") == std::string::npos);
    CHECK(std::count(table.begin(), table.end(), '\n') == 3);
  }

  TEST_CASE("prediction overlays") {
    const auto dir = oracle::temp_dir("plots");
    Dataset d = read_dataset(kFixtures / "dataset");
    const Checkpoint c = make_checkpoint(init_surrogate({1, 1, 4, 1, 1}, 1));
    CHECK(plot_predictions(c, d, {}, dir / "none").empty());
    CHECK(count_svg(dir / "none") == 0);
    const auto files = plot_predictions(c, d, {"fixture-0", "fixture-2"}, dir / "two");
    CHECK(files.size() == 2);
    CHECK(count_svg(dir / "two") == 2);
    const std::string svg = read_text(files[0]);
    CHECK(svg.find("fixture-0") != std::string::npos);
    CHECK(svg.find("MSE") != std::string::npos);
    CHECK_THROWS_WITH_AS(plot_predictions(c, d, {"nope"}, dir / "bad"),
                         doctest::Contains("unknown sample id"), Error);
  }

  TEST_CASE("report without a run directory fails") {
    const auto dir = oracle::temp_dir("report-missing");
    CHECK_THROWS_WITH_AS(write_report(dir, false), doctest::Contains("no records file"), Error);
  }
}

TEST_SUITE("cli") {
  TEST_CASE("end to end through the executable") {
    const auto dir = oracle::temp_dir("cli");
    {
      std::ofstream out(dir / "tiny.json");
      out << kTinyConfig;
    }
    const std::string cfg = "--config \"" + (dir / "tiny.json").string() + "\"";

    REQUIRE(run_cli("gen-data " + cfg + " --out \"" + (dir / "data").string() + "\"", dir / "gen.log") == 0);
    CHECK(std::filesystem::exists(dir / "data" / "report.json"));
    CHECK(read_dataset(dir / "data" / "target").size() == 4);

    REQUIRE(run_cli("iterate " + cfg + " --data \"" + (dir / "data").string() + "\" --out \"" +
                        (dir / "run").string() + "\" --seed 9",
                    dir / "iterate.log") == 0);
    const RunRecord run = read_run(dir / "run");
    CHECK(run.complete);
    CHECK(run.master_seed == 9);
    CHECK(run.iterations.size() == 5);
    CHECK(read_text(dir / "iterate.log").find("test_mse") != std::string::npos);

    REQUIRE(run_cli("report --run \"" + (dir / "run").string() + "\" --plots", dir / "report.log") == 0);
    CHECK(read_text(dir / "run" / "report" / "summary.tsv") == summarize_run(run));
    CHECK(std::filesystem::exists(dir / "run" / "report" / "reductions.svg"));
    CHECK(count_svg(dir / "run" / "report" / "predictions") == 4);

    const std::string ck = (dir / "run" / run.iterations.back().chosen_checkpoint).string();
    REQUIRE(run_cli("evaluate --checkpoint \"" + ck + "\" --dataset \"" + (dir / "data" / "val").string() + "\"",
                    dir / "eval.log") == 0);
    const Scalar mse = std::stod(read_text(dir / "eval.log"));
    CHECK(mse == doctest::Approx(run.iterations.back().per_seed_val_mse[static_cast<std::size_t>(
                                     run.iterations.back().chosen_init)]).epsilon(1e-5));

    REQUIRE(run_cli("train " + cfg + " --data \"" + (dir / "data").string() + "\" --out \"" +
                        (dir / "single").string() + "\" --seed 3",
                    dir / "train.log") == 0);
    CHECK(std::filesystem::exists(dir / "single" / "checkpoint.json"));
  }

  TEST_CASE("errors are reported") {
    const auto dir = oracle::temp_dir("cli-errors");
    CHECK(run_cli("report --run \"" + (dir / "missing").string() + "\"", dir / "a.log") != 0);
    CHECK(read_text(dir / "a.log").find("error: ") != std::string::npos);
    {
      std::ofstream out(dir / "bad.json");
      out << R"({"framework": {"pseudo_count_per_iter": 0}})";
    }
    CHECK(run_cli("iterate --config \"" + (dir / "bad.json").string() + "\" --out \"" + (dir / "r").string() + "\"",
                  dir / "b.log") != 0);
    CHECK(read_text(dir / "b.log").find("pseudo_count_per_iter") != std::string::npos);
    CHECK(run_cli("", dir / "c.log") != 0);
  }
}
