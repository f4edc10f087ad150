// SPDX-License-Identifier: Apache-2.0
//
// Mixture of LoRA experts with one soft gate vector per sequence. The gate
// comes from a small MLP over the RMS-normalized mean of the prompt's base
// token embeddings; each adapted projection then adds sum_k g_k * delta_k.
#pragma once

#include <string>
#include <vector>

#include "mslb/lm/training.h"
#include "mslb/lora/lora.h"

namespace mslb::mole {

using lm::LanguageModel;
using lm::TokenBatch;
using lora::Expert;
using num::Index;
using num::Matrix;
using num::NamedTensor;
using num::Segment;
using num::Tensor;

template <typename T>
class Router {
 public:
  Router() = default;
  /// w1 ~ N(0, 1/d_model); w2 and both biases start at zero, so an
  /// untrained router returns uniform gates.
  static Router init(int d_model, int hidden, int n_experts, num::Rng& rng);

  int n_experts() const { return static_cast<int>(w2_.rows()); }
  int d_model() const { return static_cast<int>(w1_.cols()); }

  /// Gate logits for pooled inputs (B x d_model) -> B x K.
  Tensor<T> logits(const Tensor<T>& pooled) const;
  Tensor<T> gates(const Tensor<T>& pooled) const { return num::softmax_rows(logits(pooled)); }

  /// "router/w1", "router/b1", "router/w2", "router/b2".
  std::vector<NamedTensor<T>> named_parameters() const;
  Router clone() const;
  template <typename U>
  Router<U> cast() const;

 private:
  template <typename U>
  friend class Router;
  Tensor<T> w1_, b1_, w2_, b2_;
};

/// Adds the gated sum of every expert's delta; gates is B x K with one row
/// per segment of the batch.
template <typename T>
class GatedHook final : public lm::AdapterHook<T> {
 public:
  GatedHook(const std::vector<Expert<T>>& experts, Tensor<T> gates) : experts_(experts), gates_(std::move(gates)) {}
  Tensor<T> adapt(const std::string& target, const Tensor<T>& x, const Tensor<T>& base,
                  std::span<const Segment> segments) const override;

 private:
  const std::vector<Expert<T>>& experts_;
  Tensor<T> gates_;
};

template <typename T>
class MoleModel {
 public:
  MoleModel() = default;
  MoleModel(LanguageModel<T> base, std::vector<Expert<T>> experts, Router<T> router, bool hard_routing = false);

  const LanguageModel<T>& base() const { return base_; }
  const std::vector<Expert<T>>& experts() const { return experts_; }
  const Router<T>& router() const { return router_; }
  Router<T>& router() { return router_; }
  bool hard_routing() const { return hard_; }
  void set_hard_routing(bool on) { hard_ = on; }
  int expert_index(const std::string& name) const;

  /// Gate vector of one prompt (no gradient). Contract error on an empty prompt.
  std::vector<double> route(const std::vector<int>& prompt) const;
  /// Differentiable gates for the first prompt_lengths[b] rows of each segment.
  Tensor<T> route_batch(const TokenBatch& batch, std::span<const Index> prompt_lengths) const;

  /// Logits with the given per-sequence gates (B x K). Contract error when
  /// the gate width differs from the expert count or rows from the batch.
  Tensor<T> forward(const TokenBatch& batch, const Tensor<T>& gates) const;
  Tensor<T> forward_rows(const TokenBatch& batch, std::span<const Index> rows, const Tensor<T>& gates) const;

  /// Next-token logits for one sequence whose gates were computed from `prompt`.
  std::vector<float> next_logits(const std::vector<int>& seq, const std::vector<double>& gates) const;

  /// Every parameter: base "lm/*", experts "experts/*", router "router/*".
  std::vector<NamedTensor<T>> named_parameters() const;

 private:
  Tensor<T> gate_tensor(const std::vector<double>& g) const;

  LanguageModel<T> base_;
  std::vector<Expert<T>> experts_;
  Router<T> router_;
  bool hard_ = false;
};

/// Mean next-token cross-entropy on target positions with gates routed from
/// each sample's prompt (gradients reach the router).
Tensor<float> mole_loss(const MoleModel<float>& model, const std::vector<const lm::Sample*>& samples);

struct RouterTrainResult {
  std::vector<lm::StepRecord> log;
  /// Set when the data cover fewer than two tasks (router may collapse).
  std::string warning;
};

/// Trains only the router on the mixture of `pools`; base and experts stay
/// bit-identical. Contract error with fewer than two experts.
RouterTrainResult train_router(MoleModel<float>& model, const std::vector<const std::vector<lm::Sample>*>& pools,
                               const std::vector<double>& weights, const lm::TrainOptions& opts,
                               const lm::LogFn& on_log = {});

}  // namespace mslb::mole
