#include "selftransfer/optim.hpp"

#include <cmath>
#include <numbers>
#include <algorithm>

namespace selftransfer {

Adam::Adam(const std::vector<std::span<Scalar>>& params, AdamConfig config) : config_(config) {
  for (const auto& p : params) {
    m_.push_back(Vector::Zero(static_cast<Index>(p.size())));
    v_.push_back(Vector::Zero(static_cast<Index>(p.size())));
  }
}

void Adam::step(const std::vector<std::span<Scalar>>& params,
                const std::vector<std::span<const Scalar>>& grads, Scalar lr) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw Error("adam: parameter list does not match optimizer state");
  ++t_;
  const Scalar b1 = config_.beta1, b2 = config_.beta2;
  const Scalar c1 = 1.0 - std::pow(b1, static_cast<Scalar>(t_));
  const Scalar c2 = 1.0 - std::pow(b2, static_cast<Scalar>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto n = static_cast<Index>(params[k].size());
    if (static_cast<Index>(grads[k].size()) != n || m_[k].size() != n)
      throw Error("adam: array size mismatch");
    Eigen::Map<Vector> p(params[k].data(), n);
    Eigen::Map<const Vector> g(grads[k].data(), n);
    m_[k] = b1 * m_[k] + (1.0 - b1) * g;
    v_[k] = b2 * v_[k] + (1.0 - b2) * g.cwiseAbs2();
    p.array() -= lr * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + config_.epsilon);
  }
}

void Adam::restore(long long steps, std::vector<Vector> m, std::vector<Vector> v) {
  if (m.size() != m_.size() || v.size() != v_.size()) throw Error("adam: restored state mismatch");
  for (std::size_t k = 0; k < m.size(); ++k)
    if (m[k].size() != m_[k].size() || v[k].size() != v_[k].size())
      throw Error("adam: restored state mismatch");
  t_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

Scalar cosine_lr(long long step, long long N, Scalar base_lr, Scalar lr_min) {
  if (N <= 0) return base_lr;
  const Scalar progress = std::clamp(static_cast<Scalar>(step) / static_cast<Scalar>(N), 0.0, 1.0);
  return lr_min + 0.5 * (base_lr - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

void ema_update(const std::vector<std::span<Scalar>>& teacher,
                const std::vector<std::span<const Scalar>>& student, Scalar alpha) {
  if (teacher.size() != student.size()) throw Error("ema_update: shape mismatch");
  for (std::size_t k = 0; k < teacher.size(); ++k) {
    if (teacher[k].size() != student[k].size()) throw Error("ema_update: shape mismatch");
    const auto n = static_cast<Index>(teacher[k].size());
    Eigen::Map<Vector> t(teacher[k].data(), n);
    Eigen::Map<const Vector> s(student[k].data(), n);
    t = alpha * t + (1.0 - alpha) * s;
  }
}

std::vector<std::span<const Scalar>> read_only(const std::vector<std::span<Scalar>>& arrays) {
  return {arrays.begin(), arrays.end()};
}

Scalar global_norm(const std::vector<std::span<const Scalar>>& arrays) {
  Scalar sq = 0;
  for (const auto& a : arrays)
    sq += Eigen::Map<const Vector>(a.data(), static_cast<Index>(a.size())).squaredNorm();
  return std::sqrt(sq);
}

}  // namespace selftransfer
