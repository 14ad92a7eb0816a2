#include "doctest.h"
#include "oracles.hpp"

#include "selftransfer/orchestrator.hpp"

#include <fstream>
#include <set>

using namespace selftransfer;

namespace {

RunConfig tiny_config() {
  RunConfig c = desk_scale_config();
  c.data.n_labeled = 40;
  c.data.n_target = 4;
  c.data.n_unlabeled = 30;
  c.data.n_unlabeled_base = 10;
  c.data.sine.length = 128;
  c.surrogate = {1, 1, 4, 1, 1};
  c.final_surrogate = c.surrogate;
  c.dantr = {1, 1, 2, 4, 1, 1};
  c.train.n_steps = 12;
  c.train.batch_size = 4;
  c.train.eval_interval = 6;
  c.dantr_train = c.train;
  c.framework.n_inits = 2;
  c.framework.max_iterations = 4;
  c.framework.stop_patience = 0;
  c.framework.pseudo_count_per_iter = 10;
  c.framework.master_seed = 77;
  return c;
}

const FrameworkData& tiny_data() {
  static const FrameworkData data = prepare_data(build_case_study(tiny_config().data));
  return data;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

IterationRecord with_reduction(Scalar r) {
  IterationRecord rec;
  rec.relative_reduction = r;
  return rec;
}

void check_same(const RunRecord& a, const RunRecord& b) {
  CHECK(a.master_seed == b.master_seed);
  CHECK(a.test_accesses == b.test_accesses);
  CHECK(a.complete == b.complete);
  REQUIRE(a.iterations.size() == b.iterations.size());
  for (std::size_t i = 0; i < a.iterations.size(); ++i) {
    const auto& x = a.iterations[i];
    const auto& y = b.iterations[i];
    CHECK(x.kind == y.kind);
    CHECK(x.seeds == y.seeds);
    CHECK(x.per_seed_val_mse == y.per_seed_val_mse);
    CHECK(x.avg_val_mse == y.avg_val_mse);
    CHECK(x.relative_reduction == y.relative_reduction);
    CHECK(x.chosen_checkpoint == y.chosen_checkpoint);
    CHECK(x.parent_checkpoint == y.parent_checkpoint);
    CHECK(x.source_dataset_ref == y.source_dataset_ref);
    CHECK(x.test_mse == y.test_mse);
  }
}

}  // namespace

TEST_SUITE("orchestrator") {
  TEST_CASE("stopping rule") {
    FrameworkConfig c;
    c.max_iterations = 7;
    c.stop_epsilon = 0.02;
    c.stop_patience = 2;
    std::vector<IterationRecord> h{with_reduction(0)};
    CHECK_FALSE(should_stop(h, c));
    h.push_back(with_reduction(0.01));
    CHECK_FALSE(should_stop(h, c));
    h.push_back(with_reduction(0.015));
    CHECK(should_stop(h, c));
    h.back() = with_reduction(0.3);
    CHECK_FALSE(should_stop(h, c));
    h.push_back(with_reduction(-0.1));
    CHECK_FALSE(should_stop(h, c));
    h.push_back(with_reduction(0.0));
    CHECK(should_stop(h, c));
    c.stop_patience = 0;
    CHECK_FALSE(should_stop(h, c));
    while (h.size() < 7) h.push_back(with_reduction(0.5));
    CHECK(should_stop(h, c));
  }

  TEST_CASE("block schedule") {
    FrameworkConfig c;
    const std::vector<IterationKind> expect{IterationKind::direct, IterationKind::pl,
                                            IterationKind::pl,     IterationKind::dantr,
                                            IterationKind::pl,     IterationKind::pl,
                                            IterationKind::dantr};
    for (int i = 0; i < 7; ++i) CHECK(scheduled_kind(i, c) == expect[static_cast<std::size_t>(i)]);
    c.pl_per_block = 1;
    CHECK(scheduled_kind(1, c) == IterationKind::pl);
    CHECK(scheduled_kind(2, c) == IterationKind::dantr);
    CHECK(scheduled_kind(3, c) == IterationKind::pl);
  }

  TEST_CASE("iteration seeds are distinct") {
    std::set<std::uint64_t> seen;
    for (int it = 0; it < 8; ++it)
      for (int init = 0; init < 3; ++init) seen.insert(iteration_seed(5, it, init));
    CHECK(seen.size() == 24);
    CHECK(iteration_seed(5, 1, 2) == iteration_seed(5, 1, 2));
    CHECK(iteration_seed(6, 1, 2) != iteration_seed(5, 1, 2));
  }

  TEST_CASE("enum names") {
    for (auto k : {IterationKind::direct, IterationKind::pl, IterationKind::dantr, IterationKind::final})
      CHECK(iteration_kind_from_string(to_string(k)) == k);
    CHECK(final_arch_from_string("pluggable") == FinalArch::pluggable);
    CHECK_THROWS_AS(iteration_kind_from_string("warmup"), Error);
  }

  TEST_CASE("full run layout and records") {
    const auto dir = oracle::temp_dir("framework-full");
    const RunConfig c = tiny_config();
    const RunRecord run = run_framework(c, tiny_data(), dir / "run");
    REQUIRE(run.iterations.size() == 5);
    CHECK(run.complete);
    CHECK(run.test_accesses == 1);
    const std::vector<IterationKind> kinds{IterationKind::direct, IterationKind::pl, IterationKind::pl,
                                           IterationKind::dantr, IterationKind::final};
    for (std::size_t i = 0; i < 5; ++i) {
      const auto& r = run.iterations[i];
      CHECK(r.index == static_cast<int>(i));
      CHECK(r.kind == kinds[i]);
      CHECK(r.per_seed_val_mse.size() == 2);
      CHECK(r.checkpoints.size() == 2);
      CHECK(r.test_mse.has_value() == (i == 4));
      const Scalar avg = (r.per_seed_val_mse[0] + r.per_seed_val_mse[1]) / 2;
      CHECK(r.avg_val_mse == avg);
      if (i > 0) {
        CHECK(r.relative_reduction == 1.0 - avg / run.iterations[i - 1].avg_val_mse);
        CHECK(r.parent_checkpoint == run.iterations[i - 1].chosen_checkpoint);
      }
      for (const auto& ck : r.checkpoints) CHECK(std::filesystem::exists(dir / "run" / ck));
    }
    CHECK(run.iterations[1].source_dataset_ref == "snapshots/pseudo-01");
    CHECK(run.iterations[3].source_dataset_ref == "snapshots/pseudo-02");
    const Dataset pseudo = read_dataset(dir / "run" / "snapshots" / "pseudo-02");
    CHECK(pseudo.size() == 10);
    for (const auto& s : pseudo.samples) CHECK(s.provenance == Provenance::pseudo_label);
    CHECK(std::filesystem::exists(dir / "run" / "config-frozen"));
    CHECK(std::filesystem::exists(dir / "run" / "metrics" / "iter-03-init-1.jsonl"));

    // Stored per-seed numbers are reproducible from the checkpoints alone.
    const Dataset val = read_dataset(dir / "run" / "snapshots" / "val");
    for (const auto& r : run.iterations)
      for (std::size_t i = 0; i < r.checkpoints.size(); ++i)
        CHECK(evaluate_mse(load_checkpoint(dir / "run" / r.checkpoints[i]).predictor(), val) ==
              r.per_seed_val_mse[i]);

    check_same(read_run(dir / "run"), run);
    // A finished run is returned as is and does not touch the test set again.
    const RunRecord again = run_framework(c, tiny_data(), dir / "run");
    CHECK(again.test_accesses == 1);
    check_same(again, run);
  }

  TEST_CASE("determinism, interruption and resume") {
    const auto dir = oracle::temp_dir("framework-resume");
    RunConfig c = tiny_config();
    c.framework.max_iterations = 3;
    const RunRecord a = run_framework(c, tiny_data(), dir / "a");
    const RunRecord b = run_framework(c, tiny_data(), dir / "b");
    check_same(a, b);
    CHECK(read_text(dir / "a" / "records") == read_text(dir / "b" / "records"));

    FrameworkHooks stop_after_two;
    int seen = 0;
    stop_after_two.after_iteration = [&](const IterationRecord&) { return ++seen < 2; };
    const RunRecord partial = run_framework(c, tiny_data(), dir / "c", stop_after_two);
    CHECK(partial.iterations.size() == 2);
    CHECK_FALSE(partial.complete);
    CHECK(partial.test_accesses == 0);
    const RunRecord resumed = run_framework(c, tiny_data(), dir / "c");
    check_same(resumed, a);
    CHECK(read_text(dir / "c" / "records") == read_text(dir / "a" / "records"));

    // A crash between checkpoint writes and the record append redoes the iteration.
    std::filesystem::copy(dir / "a", dir / "d", std::filesystem::copy_options::recursive);
    {
      std::istringstream lines(read_text(dir / "a" / "records"));
      std::ofstream out(dir / "d" / "records", std::ios::trunc);
      std::string line;
      std::getline(lines, line);
      out << line << '\n';
    }
    check_same(run_framework(c, tiny_data(), dir / "d"), a);

    c.framework.master_seed = 78;
    CHECK_THROWS_WITH_AS(run_framework(c, tiny_data(), dir / "a"),
                         doctest::Contains("different config"), Error);
    const RunRecord other = run_framework(c, tiny_data(), dir / "e");
    CHECK(other.iterations[0].per_seed_val_mse != a.iterations[0].per_seed_val_mse);
  }

  TEST_CASE("framework preconditions") {
    const auto dir = oracle::temp_dir("framework-pre");
    RunConfig c = tiny_config();
    Framework fw(c, tiny_data(), dir / "x");
    CHECK_THROWS_WITH_AS(fw.run_pl_iteration(), doctest::Contains("run direct training first"), Error);
    CHECK_THROWS_AS(fw.run_final(), Error);
    c.framework.pseudo_count_per_iter = 31;
    CHECK_THROWS_AS(Framework(c, tiny_data(), dir / "y"), Error);
    const SealedDataset sealed(tiny_data().test);
    CHECK(sealed.accesses() == 0);
  }
}
