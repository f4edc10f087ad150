// SPDX-License-Identifier: Apache-2.0
#include "mslb/numerics/optim.h"

#include <cmath>
#include <numbers>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace mslb::num {

void AdamWConfig::validate() const {
  if (!(lr_max > 0)) throw ConfigError("lr_max must be > 0");
  if (!(lr_min >= 0) || lr_min > lr_max) throw ConfigError("lr_min must lie in [0, lr_max]");
  if (!(beta1 > 0 && beta1 < 1)) throw ConfigError("beta1 must lie in (0, 1)");
  if (!(beta2 > 0 && beta2 < 1)) throw ConfigError("beta2 must lie in (0, 1)");
  if (!(eps > 0)) throw ConfigError("eps must be > 0");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  if (!(clip_norm >= 0)) throw ConfigError("clip_norm must be >= 0");
}

double cosine_lr(const AdamWConfig& cfg, std::int64_t step) {
  if (step < 0 || step > cfg.total_steps) throw ContractError("schedule step outside [0, total_steps]");
  const double frac = static_cast<double>(step) / static_cast<double>(cfg.total_steps);
  return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

double clip_grad_norm(std::vector<NamedTensor<float>>& params, double max_norm) {
  double sq = 0;
  for (auto& [name, p] : params) {
    if (p.has_grad()) sq += p.grad().template cast<double>().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / (norm + 1e-12));
    for (auto& [name, p] : params) {
      if (p.has_grad()) p.mutable_grad() *= s;
    }
  }
  return norm;
}

void tune_allocator_for_training() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)once;
#endif
}

AdamW::AdamW(AdamWConfig cfg, std::vector<NamedTensor<float>> params) : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
  tune_allocator_for_training();
  for (const auto& [name, p] : params_) {
    state_.m.push_back(Matrix<float>::Zero(p.rows(), p.cols()));
    state_.v.push_back(Matrix<float>::Zero(p.rows(), p.cols()));
  }
}

void AdamW::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

double AdamW::step(std::int64_t step) {
  if (step < 0 || step >= cfg_.total_steps) {
    throw ContractError("optimizer step " + std::to_string(step) + " outside [0, " +
                        std::to_string(cfg_.total_steps) + ")");
  }
  for (const auto& [name, p] : params_) {
    if (p.has_grad() && !all_finite(p.grad())) throw NumericError("non-finite gradient for parameter " + name);
  }
  const double norm = clip_grad_norm(params_, cfg_.clip_norm);

  ++state_.t;
  const double lr = cosine_lr(cfg_, step);
  const auto b1 = static_cast<float>(cfg_.beta1);
  const auto b2 = static_cast<float>(cfg_.beta2);
  const auto bc1 = static_cast<float>(1.0 - std::pow(cfg_.beta1, static_cast<double>(state_.t)));
  const auto bc2 = static_cast<float>(1.0 - std::pow(cfg_.beta2, static_cast<double>(state_.t)));
  const auto lr_f = static_cast<float>(lr);
  const auto decay = static_cast<float>(1.0 - lr * cfg_.weight_decay);
  const auto eps = static_cast<float>(cfg_.eps);

  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].second;
    auto& m = state_.m[i];
    auto& v = state_.v[i];
    Matrix<float>& w = p.mutable_value();
    if (p.has_grad()) {
      const Matrix<float>& g = p.grad();
      m = b1 * m + (1.0f - b1) * g;
      v = b2 * v + (1.0f - b2) * g.cwiseProduct(g);
    } else {
      m *= b1;
      v *= b2;
    }
    if (decay != 1.0f) w *= decay;
    w.array() -= lr_f * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  }
  zero_grad();
  return norm;
}

}  // namespace mslb::num
