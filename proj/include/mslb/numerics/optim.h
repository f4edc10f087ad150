// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mslb/numerics/tensor.h"

namespace mslb::num {

struct AdamWConfig {
  double lr_max = 3e-4;
  double lr_min = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::int64_t total_steps = 1;
  /// Global-norm gradient clipping threshold; 0 disables clipping.
  double clip_norm = 1.0;

  void validate() const;
  bool operator==(const AdamWConfig&) const = default;
};

/// lr(t) = lr_min + 0.5 (lr_max - lr_min) (1 + cos(pi t / total_steps)), t in [0, total_steps].
double cosine_lr(const AdamWConfig& cfg, std::int64_t step);

struct AdamWState {
  std::vector<Matrix<float>> m;
  std::vector<Matrix<float>> v;
  std::int64_t t = 0;
};

/// Scales all gradients so their global L2 norm is at most max_norm. Returns
/// the norm measured before clipping.
double clip_grad_norm(std::vector<NamedTensor<float>>& params, double max_norm);

/// AdamW with bias correction and decoupled weight decay:
///   p <- p * (1 - lr(t) * wd) - lr(t) * m_hat / (sqrt(v_hat) + eps)
/// A parameter without a gradient is treated as having a zero gradient.
/// Raises glibc's mmap and trim thresholds so the large, short-lived
/// temporaries of a training step reuse heap pages instead of being mapped
/// and faulted in on every step. Idempotent; a no-op on other C libraries.
void tune_allocator_for_training();

class AdamW {
 public:
  AdamW(AdamWConfig cfg, std::vector<NamedTensor<float>> params);

  /// Clips (if configured), applies one update with lr(step), and clears grads.
  /// Returns the pre-clip gradient norm.
  double step(std::int64_t step);
  void zero_grad();

  const AdamWConfig& config() const { return cfg_; }
  const AdamWState& state() const { return state_; }
  std::vector<NamedTensor<float>>& params() { return params_; }

 private:
  AdamWConfig cfg_;
  std::vector<NamedTensor<float>> params_;
  AdamWState state_;
};

}  // namespace mslb::num
