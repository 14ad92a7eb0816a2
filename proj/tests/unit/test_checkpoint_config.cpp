#include "doctest.h"
#include "oracles.hpp"

#include "selftransfer/checkpoint.hpp"
#include "selftransfer/config.hpp"

#include <fstream>

using namespace selftransfer;

namespace {

bool same_arrays(const std::vector<std::span<const Scalar>>& a,
                 const std::vector<std::span<const Scalar>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!std::equal(a[i].begin(), a[i].end(), b[i].begin(), b[i].end())) return false;
  return true;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST_SUITE("checkpoint") {
  TEST_CASE("surrogate round trip is exact") {
    const auto dir = oracle::temp_dir("ckpt-surrogate");
    Network net = init_surrogate({2, 2, 5, 1, 1}, 9);
    // Values that need all 17 significant digits.
    parameter_arrays(net)[0][0] = 0.1 + 0.2;
    parameter_arrays(net)[1][3] = -1.0 / 3.0;
    Checkpoint c = make_checkpoint(net);
    c.teacher = zeros_like(net);
    c.predict_with_teacher = true;
    c.rng_state = "12345 67890";
    c.metadata["iteration"] = "3";
    auto params = parameter_arrays(c.network);
    c.optimizer = Adam(params);
    std::vector<std::span<const Scalar>> g = parameter_arrays(std::as_const(net));
    c.optimizer->step(params, g, 1e-3);
    save_checkpoint(c, dir / "a.json");

    const Checkpoint back = load_checkpoint(dir / "a.json", fingerprint(net));
    CHECK(back.kind == CheckpointKind::surrogate);
    CHECK(same_arrays(parameter_arrays(back.network), parameter_arrays(std::as_const(c.network))));
    REQUIRE(back.teacher);
    CHECK(same_arrays(parameter_arrays(*back.teacher), parameter_arrays(std::as_const(*c.teacher))));
    CHECK(back.predict_with_teacher);
    CHECK(fingerprint(back.predictor()) == fingerprint(net));
    CHECK(parameter_arrays(back.predictor())[0][0] == 0.0);
    CHECK(back.rng_state == c.rng_state);
    CHECK(back.metadata.at("iteration") == "3");
    REQUIRE(back.optimizer);
    CHECK(back.optimizer->steps() == 1);
    CHECK(back.optimizer->first_moment()[1] == c.optimizer->first_moment()[1]);
    CHECK(back.optimizer->second_moment()[4] == c.optimizer->second_moment()[4]);

    save_checkpoint(back, dir / "b.json");
    std::ifstream fa(dir / "a.json"), fb(dir / "b.json");
    const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
    CHECK(sa == sb);
  }

  TEST_CASE("dan-tr round trip and predictor") {
    const auto dir = oracle::temp_dir("ckpt-dantr");
    const DanTrParams p = init_dantr({1, 1, 2, 4, 1, 1}, 3);
    save_checkpoint(make_checkpoint(p), dir / "t.json");
    const Checkpoint back = load_checkpoint(dir / "t.json");
    CHECK(back.kind == CheckpointKind::dantr);
    CHECK(back.fingerprint() == fingerprint(p));
    CHECK(same_arrays(parameter_arrays(back.dantr), parameter_arrays(p)));
    CHECK(fingerprint(back.predictor()) == fingerprint(target_branch(p)));
  }

  TEST_CASE("architecture mismatch is refused") {
    const auto dir = oracle::temp_dir("ckpt-mismatch");
    save_checkpoint(make_checkpoint(init_surrogate({1, 2, 4, 1, 1}, 1)), dir / "c.json");
    const std::string other = fingerprint(init_surrogate({1, 2, 5, 1, 1}, 1));
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "c.json", other),
                         doctest::Contains("architecture mismatch"), Error);
  }

  TEST_CASE("malformed files") {
    const auto dir = oracle::temp_dir("ckpt-bad");
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "missing.json"), doctest::Contains("cannot open"), Error);
    write_text(dir / "x.json", "{ not json");
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "x.json"), doctest::Contains("not valid JSON"), Error);
    write_text(dir / "y.json", R"({"format": "something-else"})");
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "y.json"), doctest::Contains("unrecognized format"), Error);
  }
}

TEST_SUITE("config") {
  TEST_CASE("empty document keeps the base") {
    const RunConfig base = desk_scale_config();
    CHECK(dump_config(parse_config("{}")) == dump_config(base));
  }

  TEST_CASE("dump and parse are inverse") {
    RunConfig c = desk_scale_config();
    c.train.base_lr = 0.1 + 0.2;
    c.framework.master_seed = 987654321012345ULL;
    c.mmd.estimator = MmdEstimator::unbiased;
    c.mmd.representation = Representation::mean_over_time;
    c.data.augment.ops_enabled = {AugmentOp::splice};
    c.framework.final_arch = FinalArch::pluggable;
    const std::string text = dump_config(c);
    const RunConfig back = parse_config(text, RunConfig{});
    CHECK(dump_config(back) == text);
    CHECK(back.train.base_lr == 0.1 + 0.2);
    CHECK(back.framework.master_seed == 987654321012345ULL);
  }

  TEST_CASE("partial override") {
    const RunConfig c = parse_config(R"({"framework": {"n_inits": 5}, "train": {"steps": 10}})");
    CHECK(c.framework.n_inits == 5);
    CHECK(c.train.n_steps == 10);
    CHECK(c.surrogate.hidden_dim == desk_scale_config().surrogate.hidden_dim);
  }

  TEST_CASE("unknown keys and wrong types name the path") {
    CHECK_THROWS_WITH_AS(parse_config(R"({"train": {"stpes": 10}})"),
                         doctest::Contains("unknown key 'train.stpes'"), Error);
    CHECK_THROWS_WITH_AS(parse_config(R"({"bogus": 1})"), doctest::Contains("unknown key 'bogus'"), Error);
    CHECK_THROWS_WITH_AS(parse_config(R"({"framework": {"n_inits": 2.5}})"),
                         doctest::Contains("'framework.n_inits' must be an integer"), Error);
    CHECK_THROWS_WITH_AS(parse_config(R"({"mmd": {"estimator": "odd"}})"),
                         doctest::Contains("mmd.estimator"), Error);
    CHECK_THROWS_WITH_AS(parse_config(R"({"data": {"augment": {"ops": ["mirror"]}}})"),
                         doctest::Contains("unknown augmentation"), Error);
    CHECK_THROWS_AS(parse_config("[1, 2"), Error);
  }

  TEST_CASE("invalid values are rejected") {
    CHECK_THROWS_WITH_AS(parse_config(R"({"framework": {"pseudo_count_per_iter": 0}})"),
                         doctest::Contains("max_iterations = 1"), Error);
    CHECK_THROWS_WITH_AS(parse_config(R"({"mmd": {"layer_last": 9}})"),
                         doctest::Contains("exceeds the tailored head"), Error);
    CHECK_THROWS_WITH_AS(parse_config(R"({"train": {"ema_alpha": 1.0}})"),
                         doctest::Contains("invalid values"), Error);
  }

  TEST_CASE("load from file") {
    const auto dir = oracle::temp_dir("config-file");
    write_text(dir / "c.json", R"({"framework": {"master_seed": 11}})");
    CHECK(load_config(dir / "c.json").framework.master_seed == 11);
    CHECK_THROWS_WITH_AS(load_config(dir / "nope.json"), doctest::Contains("cannot open"), Error);
  }
}
