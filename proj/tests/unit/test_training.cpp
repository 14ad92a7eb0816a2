#include "doctest.h"
#include "oracles.hpp"

#include "selftransfer/training.hpp"

#include <set>

using namespace selftransfer;

namespace {

Dataset toy_dataset(std::size_t n, Index T, std::uint64_t seed, bool labeled = true) {
  std::mt19937_64 rng(seed);
  Dataset d;
  d.role = labeled ? Role::target_labeled : Role::unlabeled_pool;
  d.dt = 0.05;
  for (std::size_t i = 0; i < n; ++i) {
    TimeSeriesSample s;
    s.id = "s" + std::to_string(i);
    s.input = oracle::random_matrix(T, 1, rng, 0.5).col(0);
    if (labeled) {
      Vector y(T);
      Scalar acc = 0;
      for (Index t = 0; t < T; ++t) y(t) = acc = 0.7 * acc + 0.3 * std::tanh(2 * s.input(t));
      s.output = y;
      s.provenance = Provenance::real_label;
    }
    d.samples.push_back(s);
  }
  return d;
}

TrainConfig quick_config(long long steps) {
  TrainConfig c;
  c.n_steps = steps;
  c.batch_size = 4;
  c.base_lr = 1e-2;
  c.lr_min = 1e-3;
  c.eval_interval = steps;
  c.seed = 17;
  return c;
}

bool same_params(const Network& a, const Network& b) {
  const auto pa = parameter_arrays(a), pb = parameter_arrays(b);
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!std::equal(pa[i].begin(), pa[i].end(), pb[i].begin(), pb[i].end())) return false;
  return true;
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("ema weight warm-up") {
    CHECK(ema_alpha_at(0, 0.999) == 0.0);
    CHECK(ema_alpha_at(9, 0.999) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(ema_alpha_at(5000, 0.999) == 0.999);
    CHECK(ema_alpha_at(5000, 0.0) == 0.0);
  }

  TEST_CASE("ema update matches the closed form") {
    std::vector<Scalar> teacher{0.8, -2.0};
    const std::vector<Scalar> s1{1.0, 0.5, -0.25, 3.0, 0.1}, s2{-1.0, 2.0, 2.0, 0.0, 7.0};
    const Scalar alpha = 0.9;
    for (std::size_t k = 0; k < s1.size(); ++k) {
      std::vector<Scalar> student{s1[k], s2[k]};
      ema_update({std::span<Scalar>(teacher)}, {std::span<const Scalar>(student)}, alpha);
    }
    CHECK(teacher[0] == doctest::Approx(oracle::ema_closed_form(0.8, s1, alpha)).epsilon(1e-14));
    CHECK(teacher[1] == doctest::Approx(oracle::ema_closed_form(-2.0, s2, alpha)).epsilon(1e-14));
  }

  TEST_CASE("ema of a constant student converges to it") {
    std::vector<Scalar> teacher{5.0};
    const std::vector<Scalar> student{1.0};
    for (int k = 0; k < 2000; ++k)
      ema_update({std::span<Scalar>(teacher)}, {std::span<const Scalar>(student)}, 0.99);
    CHECK(std::abs(teacher[0] - 1.0) < 1e-8);
  }

  TEST_CASE("learning-rate and consistency schedules") {
    CHECK(cosine_lr(0, 100, 1e-3, 1e-4) == 1e-3);
    CHECK(cosine_lr(100, 100, 1e-3, 1e-4) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(cosine_lr(50, 100, 1e-3, 1e-4) == doctest::Approx(5.5e-4).epsilon(1e-12));
    Scalar prev = 1;
    for (long long s = 0; s <= 100; ++s) {
      const Scalar lr = cosine_lr(s, 100, 1e-3, 1e-4);
      CHECK(lr <= prev);
      prev = lr;
    }
    TrainConfig c;
    c.n_steps = 100;
    c.consistency_weight_max = 2.0;
    c.consistency_ramp_fraction = 0.5;
    CHECK(consistency_weight_at(0, c) == 0.0);
    CHECK(consistency_weight_at(25, c) == doctest::Approx(1.0));
    CHECK(consistency_weight_at(80, c) == 2.0);
  }

  TEST_CASE("config validation") {
    TrainConfig c;
    CHECK_NOTHROW(validate(c));
    c.ema_alpha = 1.0;
    CHECK_THROWS_AS(validate(c), Error);
    c = {};
    c.batch_size = 0;
    CHECK_THROWS_AS(validate(c), Error);
    c = {};
    c.labeled_weight = 0;
    CHECK_THROWS_AS(validate(c), Error);
  }

  TEST_CASE("evaluate_mse averages per-sample errors") {
    const Network zero = zeros_like(init_surrogate({1, 1, 3, 1, 1}, 1));
    Dataset d;
    d.role = Role::validation;
    TimeSeriesSample a;
    a.id = "a";
    a.input = Vector::Zero(2);
    a.output = Vector(2);
    *a.output << 1, 2;
    a.provenance = Provenance::real_label;
    d.samples.push_back(a);
    CHECK(evaluate_mse(zero, d) == 2.5);
    TimeSeriesSample b = a;
    b.id = "b";
    b.output = Vector::Zero(2);
    d.samples.push_back(b);
    CHECK(evaluate_mse(zero, d) == 1.25);
    d.samples[1].output.reset();
    CHECK_THROWS_AS(evaluate_mse(zero, d), Error);
  }

  TEST_CASE("memorizes a single sample") {
    const Dataset one = toy_dataset(1, 24, 3);
    TrainConfig c = quick_config(600);
    c.batch_size = 1;
    c.mean_teacher = false;
    c.input_noise_std = 0;
    const auto r = train_supervised(SurrogateArch{1, 2, 8, 1, 1}, one, c, one);
    CHECK(r.student_val_mse < 1e-4);
    CHECK(r.history.back().step == 600);
    CHECK(same_params(r.student, r.teacher));
  }

  TEST_CASE("training is deterministic and seed-sensitive") {
    const Dataset train = toy_dataset(12, 16, 4), val = toy_dataset(3, 16, 5);
    TrainConfig c = quick_config(40);
    c.eval_interval = 10;
    const SurrogateArch arch{1, 2, 6, 1, 1};
    const auto r1 = train_supervised(arch, train, c, val);
    const auto r2 = train_supervised(arch, train, c, val);
    CHECK(same_params(r1.student, r2.student));
    CHECK(same_params(r1.teacher, r2.teacher));
    CHECK(r1.rng_state == r2.rng_state);
    REQUIRE(r1.history.size() == 4);
    CHECK(r1.history[2].val_mse == r2.history[2].val_mse);
    c.seed = 18;
    CHECK_FALSE(same_params(train_supervised(arch, train, c, val).student, r1.student));
  }

  TEST_CASE("zero ema weight makes the teacher track the student") {
    const Dataset train = toy_dataset(8, 16, 6);
    TrainConfig c = quick_config(20);
    c.ema_alpha = 0.0;
    const auto r = train_supervised(SurrogateArch{1, 1, 4, 1, 1}, train, c, train);
    CHECK(same_params(r.student, r.teacher));
    CHECK(r.student_val_mse == r.teacher_val_mse);
  }

  TEST_CASE("unlabeled training data is rejected") {
    const Dataset pool = toy_dataset(4, 16, 7, false);
    CHECK_THROWS_WITH_AS(train_supervised(SurrogateArch{1, 1, 4, 1, 1}, pool, quick_config(5), pool),
                         doctest::Contains("has no output"), Error);
  }

  TEST_CASE("pseudo labels") {
    const Dataset pool = toy_dataset(30, 16, 8, false);
    const Network model = init_surrogate({1, 1, 4, 1, 1}, 2);
    const Dataset p = pseudo_label(model, pool, 12, 99);
    CHECK(p.size() == 12);
    CHECK(p.role == Role::pseudo_source);
    const auto preds = predict_dataset(model, p);
    std::set<std::string> ids;
    for (std::size_t i = 0; i < p.size(); ++i) {
      CHECK(p.samples[i].provenance == Provenance::pseudo_label);
      CHECK(*p.samples[i].output == preds[i]);
      ids.insert(p.samples[i].id);
    }
    CHECK(ids.size() == 12);
    const Dataset again = pseudo_label(model, pool, 12, 99);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(again.samples[i].id == p.samples[i].id);
    CHECK(pseudo_label(model, pool, 0, 1).empty());
    CHECK(pseudo_label(model, pool, 30, 1).size() == 30);
    CHECK_THROWS_WITH_AS(pseudo_label(model, pool, 31, 1), doctest::Contains("exceeds pool size"),
                         Error);
  }

  TEST_CASE("dan-tr trace follows the lambda ramp") {
    const Dataset source = toy_dataset(10, 12, 9), target = toy_dataset(3, 12, 10);
    TrainConfig c = quick_config(25);
    c.batch_size = 3;
    c.mean_teacher = false;
    const DanTrArch arch{1, 1, 2, 4, 1, 1};
    const auto r = train_dantr(arch, source, target, c, MkMmdConfig{}, target);
    REQUIRE(r.trace.size() == 25);
    for (const auto& t : r.trace) {
      CHECK(t.lambda == mmd_weight(t.step, 25));
      CHECK(t.mmd >= -1e-12);
    }
    CHECK(r.val_mse == evaluate_mse(target_branch(r.params), target));
    const auto again = train_dantr(arch, source, target, c, MkMmdConfig{}, target);
    CHECK(again.val_mse == r.val_mse);
  }
}
