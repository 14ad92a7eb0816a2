#pragma once

#include "selftransfer/common.hpp"

#include <span>
#include <vector>

namespace selftransfer {

struct AdamConfig {
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar epsilon = 1e-8;
};

/// Adam over a fixed list of parameter arrays. The moment buffers mirror the
/// array sizes given to the constructor.
class Adam {
 public:
  Adam() = default;
  Adam(const std::vector<std::span<Scalar>>& params, AdamConfig config = {});

  void step(const std::vector<std::span<Scalar>>& params,
            const std::vector<std::span<const Scalar>>& grads, Scalar lr);

  long long steps() const { return t_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<Vector>& first_moment() const { return m_; }
  const std::vector<Vector>& second_moment() const { return v_; }
  void restore(long long steps, std::vector<Vector> m, std::vector<Vector> v);

 private:
  AdamConfig config_;
  long long t_ = 0;
  std::vector<Vector> m_;
  std::vector<Vector> v_;
};

/// Cosine decay from base_lr at step 0 to lr_min at step N.
Scalar cosine_lr(long long step, long long N, Scalar base_lr, Scalar lr_min);

/// theta_T <- alpha theta_T + (1 - alpha) theta_S, entry by entry.
void ema_update(const std::vector<std::span<Scalar>>& teacher,
                const std::vector<std::span<const Scalar>>& student, Scalar alpha);

/// Views a mutable array list as read-only.
std::vector<std::span<const Scalar>> read_only(const std::vector<std::span<Scalar>>& arrays);

/// Euclidean norm over every entry of every array.
Scalar global_norm(const std::vector<std::span<const Scalar>>& arrays);

}  // namespace selftransfer
