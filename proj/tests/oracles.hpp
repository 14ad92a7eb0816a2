#pragma once

// Independent reference computations shared by the unit and acceptance suites.
// Nothing here calls into the library's numerical kernels.

#include "selftransfer/common.hpp"
#include "selftransfer/data_gen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace oracle {

using selftransfer::Matrix;
using selftransfer::Scalar;
using selftransfer::Vector;

/// MMD^2 by explicit double loops over sample pairs and kernels.
inline Scalar brute_mmd(const Matrix& S, const Matrix& T, const std::vector<Scalar>& sigmas,
                        bool unbiased) {
  auto k = [&](const Vector& a, const Vector& b) {
    Scalar d2 = 0;
    for (Eigen::Index i = 0; i < a.size(); ++i) d2 += (a(i) - b(i)) * (a(i) - b(i));
    Scalar sum = 0;
    for (Scalar s : sigmas) sum += std::exp(-d2 / (2 * s * s));
    return sum / static_cast<Scalar>(sigmas.size());
  };
  const auto ns = S.cols(), nt = T.cols();
  Scalar ss = 0, tt = 0, st = 0;
  for (Eigen::Index i = 0; i < ns; ++i)
    for (Eigen::Index j = 0; j < ns; ++j)
      if (!unbiased || i != j) ss += k(S.col(i), S.col(j));
  for (Eigen::Index i = 0; i < nt; ++i)
    for (Eigen::Index j = 0; j < nt; ++j)
      if (!unbiased || i != j) tt += k(T.col(i), T.col(j));
  for (Eigen::Index i = 0; i < ns; ++i)
    for (Eigen::Index j = 0; j < nt; ++j) st += k(S.col(i), T.col(j));
  const Scalar ds = unbiased ? static_cast<Scalar>(ns * (ns - 1)) : static_cast<Scalar>(ns * ns);
  const Scalar dt = unbiased ? static_cast<Scalar>(nt * (nt - 1)) : static_cast<Scalar>(nt * nt);
  return ss / ds + tt / dt - 2 * st / static_cast<Scalar>(ns * nt);
}

/// Median ladder of M bandwidths from a full sort of the non-zero pooled distances.
inline std::vector<Scalar> median_ladder(const Matrix& S, const Matrix& T, int M) {
  std::vector<Vector> pts;
  for (Eigen::Index j = 0; j < S.cols(); ++j) pts.push_back(S.col(j));
  for (Eigen::Index j = 0; j < T.cols(); ++j) pts.push_back(T.col(j));
  std::vector<Scalar> d;
  for (std::size_t a = 0; a < pts.size(); ++a)
    for (std::size_t b = a + 1; b < pts.size(); ++b) {
      const Scalar v = std::sqrt((pts[a] - pts[b]).squaredNorm());
      if (v > 0) d.push_back(v);
    }
  std::sort(d.begin(), d.end());
  Scalar med = 1.0;
  if (!d.empty()) med = d.size() % 2 ? d[d.size() / 2] : 0.5 * (d[d.size() / 2 - 1] + d[d.size() / 2]);
  std::vector<Scalar> out;
  for (int m = 1; m <= M; ++m) out.push_back(med * std::pow(2.0, m - (M + 1) / 2));
  return out;
}

inline Scalar sigmoid(Scalar x) { return 1.0 / (1.0 + std::exp(-x)); }

/// One-unit LSTM with scalar weights (gate order i, f, g, o) over a scalar series.
struct ScalarLstm {
  Scalar wi, wf, wg, wo;  // input weights
  Scalar ui, uf, ug, uo;  // recurrent weights
  Scalar bi, bf, bg, bo;

  std::vector<Scalar> run(const std::vector<Scalar>& x) const {
    Scalar h = 0, c = 0;
    std::vector<Scalar> out;
    for (Scalar v : x) {
      const Scalar i = sigmoid(wi * v + ui * h + bi);
      const Scalar f = sigmoid(wf * v + uf * h + bf);
      const Scalar g = std::tanh(wg * v + ug * h + bg);
      const Scalar o = sigmoid(wo * v + uo * h + bo);
      c = f * c + i * g;
      h = o * std::tanh(c);
      out.push_back(h);
    }
    return out;
  }
};

/// Forward-Euler Bouc-Wen with piecewise-constant velocity, `substeps` per sample.
inline Vector euler_boucwen(const Vector& u_raw, Scalar dt, const selftransfer::BoucWenParams& p,
                            int substeps) {
  Vector u = u_raw.array() - u_raw(0);
  Vector r(u.size());
  Scalar z = 0;
  r(0) = 0;
  const Scalar h = dt / substeps;
  for (Eigen::Index t = 1; t < u.size(); ++t) {
    const Scalar v = (u(t) - u(t - 1)) / dt;
    for (int s = 0; s < substeps; ++s) {
      const Scalar az = std::abs(z);
      const Scalar dz = p.A * v - p.beta * std::abs(v) * std::pow(az, p.n_exp - 1) * z -
                        p.gamma * v * std::pow(az, p.n_exp);
      z += h * dz;
    }
    r(t) = p.alpha * p.k * u(t) + (1 - p.alpha) * p.k * z;
  }
  return r;
}

/// theta_T after k EMA steps from theta_0 with student values s_1..s_k.
inline Scalar ema_closed_form(Scalar theta0, const std::vector<Scalar>& students, Scalar alpha) {
  const auto k = students.size();
  Scalar out = std::pow(alpha, static_cast<Scalar>(k)) * theta0;
  for (std::size_t j = 0; j < k; ++j)
    out += (1 - alpha) * std::pow(alpha, static_cast<Scalar>(j)) * students[k - 1 - j];
  return out;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                            Scalar scale = 1.0) {
  std::normal_distribution<Scalar> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("selftransfer-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace oracle
