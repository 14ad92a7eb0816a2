#include "doctest.h"
#include "oracles.hpp"

#include "selftransfer/mkmmd.hpp"

using namespace selftransfer;

TEST_SUITE("mkmmd") {
  TEST_CASE("gaussian kernel values") {
    Vector x(2), y(2);
    x << 0, 0;
    y << 3, 4;
    CHECK(gaussian_kernel(x, x, 0.7) == 1.0);
    CHECK(gaussian_kernel(x, y, 5.0) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
    CHECK(gaussian_kernel(x, y, 1.0) == gaussian_kernel(y, x, 1.0));
    CHECK_THROWS_AS(gaussian_kernel(x, y, 0.0), Error);
    CHECK_THROWS_AS(gaussian_kernel(x, Vector::Zero(3), 1.0), Error);
  }

  TEST_CASE("median bandwidth") {
    Matrix a(1, 3), b(1, 1);
    a << 0, 1, 3;
    b << 7;
    // Pairwise distances 1, 3, 7, 2, 6, 4 -> median of six values is 3.5.
    CHECK(median_bandwidth(a, b).sigma == 3.5);
    Matrix c(1, 2), d(1, 1);
    c << 0, 2;
    d << 2;
    // Zero distances are skipped: 2, 2 -> 2.
    CHECK(median_bandwidth(c, d).sigma == 2.0);
    const auto flat = median_bandwidth(Matrix::Ones(2, 3), Matrix::Ones(2, 2));
    CHECK(flat.degenerate);
    CHECK(flat.sigma == 1.0);
  }

  TEST_CASE("bandwidth ladder") {
    Matrix a(1, 2), b(1, 0);
    a << 0, 4;
    MkMmdConfig c;
    const auto s = kernel_bandwidths(a, b, c);
    REQUIRE(s.size() == 5);
    CHECK(s[0] == 1.0);
    CHECK(s[2] == 4.0);
    CHECK(s[4] == 16.0);
    c.n_kernels = 4;
    const auto s4 = kernel_bandwidths(a, b, c);
    CHECK(s4.front() == 2.0);
    CHECK(s4.back() == 16.0);
  }

  TEST_CASE("two single points") {
    Matrix s(1, 1), t(1, 1);
    s << 0;
    t << 2;
    const auto v = mk_mmd_fixed(s, t, {1.0}, MmdEstimator::biased, false);
    CHECK(v.value == doctest::Approx(2 - 2 * std::exp(-2.0)).epsilon(1e-15));
    CHECK_THROWS_AS(mk_mmd_fixed(s, t, {1.0}, MmdEstimator::unbiased, false), Error);
    CHECK(mk_mmd_fixed(s, s, {1.0, 2.0}, MmdEstimator::biased, false).value == 0.0);
  }

  TEST_CASE("matches brute force") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 5; ++trial) {
      const Matrix S = oracle::random_matrix(4, 6 + trial, rng);
      const Matrix T = oracle::random_matrix(4, 9 - trial, rng, 1.5);
      const std::vector<Scalar> sig{0.5, 1.0, 2.0, 4.0};
      for (auto est : {MmdEstimator::biased, MmdEstimator::unbiased}) {
        const Scalar got = mk_mmd_fixed(S, T, sig, est, false).value;
        const Scalar ref = oracle::brute_mmd(S, T, sig, est == MmdEstimator::unbiased);
        CHECK(std::abs(got - ref) < 1e-12);
      }
    }
  }

  TEST_CASE("symmetry and non-negativity") {
    std::mt19937_64 rng(4);
    MkMmdConfig c;
    for (int trial = 0; trial < 20; ++trial) {
      const Matrix S = oracle::random_matrix(3, 5, rng);
      const Matrix T = oracle::random_matrix(3, 7, rng, 0.3 + trial * 0.1);
      const Scalar st = mk_mmd(S, T, c);
      CHECK(st >= -1e-15);
      CHECK(std::abs(st - mk_mmd(T, S, c)) < 1e-13);
    }
  }

  TEST_CASE("input validation") {
    MkMmdConfig c;
    CHECK_THROWS_AS(mk_mmd(Matrix(2, 0), Matrix::Ones(2, 3), c), Error);
    CHECK_THROWS_AS(mk_mmd(Matrix::Ones(2, 3), Matrix::Ones(3, 3), c), Error);
    c.estimator = MmdEstimator::unbiased;
    CHECK_THROWS_WITH_AS(mk_mmd(Matrix::Ones(2, 1), Matrix::Ones(2, 3), c),
                         doctest::Contains("at least 2"), Error);
    MkMmdConfig bad;
    bad.bandwidth_mode = BandwidthMode::fixed;
    CHECK_THROWS_AS(validate(bad), Error);
    bad.fixed_sigmas = {1.0, -1.0};
    CHECK_THROWS_AS(validate(bad), Error);
    MkMmdConfig range;
    range.layer_first = 2;
    range.layer_last = 1;
    CHECK_THROWS_AS(validate(range), Error);
  }

  TEST_CASE("layer sum is additive") {
    std::mt19937_64 rng(5);
    std::vector<Matrix> hs, ht;
    for (int l = 0; l < 4; ++l) {
      hs.push_back(oracle::random_matrix(3 + l, 6, rng));
      ht.push_back(oracle::random_matrix(3 + l, 6, rng, 2.0));
    }
    MkMmdConfig c;
    c.layer_first = 1;
    c.layer_last = 3;
    Scalar expect = 0;
    for (int l = 1; l <= 3; ++l) expect += mk_mmd(hs[l], ht[l], c);
    const auto sum = layer_mmd_sum(hs, ht, c, true);
    CHECK(std::abs(sum.value - expect) < 1e-13);
    CHECK(sum.grad_s[0].size() == 0);
    CHECK(sum.grad_s[2].rows() == 5);
    hs[2].resize(0, 0);
    CHECK_THROWS_WITH_AS(layer_mmd_sum(hs, ht, c), doctest::Contains("missing layer 2"), Error);
    c.layer_last = 5;
    CHECK_THROWS_AS(layer_mmd_sum(ht, ht, c), Error);
  }

  TEST_CASE("gradient matches finite differences") {
    std::mt19937_64 rng(6);
    const Matrix S = oracle::random_matrix(3, 5, rng);
    const Matrix T = oracle::random_matrix(3, 4, rng, 1.7);
    const std::vector<Scalar> sig{0.6, 1.2, 2.4};
    for (auto est : {MmdEstimator::biased, MmdEstimator::unbiased}) {
      const auto v = mk_mmd_fixed(S, T, sig, est, true);
      const Scalar h = 1e-6;
      Scalar worst = 0;
      for (Index i = 0; i < S.size(); ++i) {
        Matrix up = S, down = S;
        up.data()[i] += h;
        down.data()[i] -= h;
        const Scalar fd = (oracle::brute_mmd(up, T, sig, est == MmdEstimator::unbiased) -
                           oracle::brute_mmd(down, T, sig, est == MmdEstimator::unbiased)) / (2 * h);
        worst = std::max(worst, std::abs(fd - v.grad_s.data()[i]));
      }
      for (Index i = 0; i < T.size(); ++i) {
        Matrix up = T, down = T;
        up.data()[i] += h;
        down.data()[i] -= h;
        const Scalar fd = (oracle::brute_mmd(S, up, sig, est == MmdEstimator::unbiased) -
                           oracle::brute_mmd(S, down, sig, est == MmdEstimator::unbiased)) / (2 * h);
        worst = std::max(worst, std::abs(fd - v.grad_t.data()[i]));
      }
      CHECK(worst < 1e-8);
    }
  }

  TEST_CASE("mmd weight ramp") {
    CHECK(mmd_weight(0, 100) == 0.0);
    CHECK(mmd_weight(50, 100) == doctest::Approx(2 / (1 + std::exp(-5.0)) - 1).epsilon(1e-15));
    CHECK(mmd_weight(100, 100) == doctest::Approx(0.9999092).epsilon(1e-6));
    Scalar prev = -1;
    for (long long n = 0; n <= 1000; n += 7) {
      const Scalar w = mmd_weight(n, 1000);
      CHECK(w > prev);
      CHECK(w >= 0);
      CHECK(w < 1);
      prev = w;
    }
    CHECK_THROWS_AS(mmd_weight(5, 0), Error);
    CHECK_THROWS_AS(mmd_weight(11, 10), Error);
  }
}
