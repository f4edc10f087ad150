// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adapters. Each adapted projection y = x W^T gains
//   (alpha / r) * (x A^T) B^T,   A: r x d_in,   B: d_out x r,
// i.e. the dense weight W + (alpha / r) B A. B starts at zero, so a fresh
// adapter leaves every output unchanged.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "mslb/lm/transformer.h"

namespace mslb::lora {

using lm::AdapterHook;
using lm::LanguageModel;
using num::Index;
using num::Matrix;
using num::NamedTensor;
using num::Segment;
using num::Tensor;

template <typename T>
struct LoraAdapter {
  Tensor<T> a;  // r x d_in
  Tensor<T> b;  // d_out x r
};

/// A named set of adapters covering every adaptable projection of a model.
template <typename T>
class Expert {
 public:
  Expert() = default;
  Expert(std::string name, int rank, double alpha) : name_(std::move(name)), rank_(rank), alpha_(alpha) {}

  const std::string& name() const { return name_; }
  int rank() const { return rank_; }
  double alpha() const { return alpha_; }
  double scale() const { return alpha_ / rank_; }
  bool merged() const { return merged_; }
  void mark_merged() { merged_ = true; }

  const std::map<std::string, LoraAdapter<T>>& adapters() const { return adapters_; }
  std::map<std::string, LoraAdapter<T>>& adapters() { return adapters_; }
  const LoraAdapter<T>& adapter(const std::string& target) const;

  /// (alpha / r) B A for one target.
  Matrix<T> delta(const std::string& target) const;

  /// "experts/<name>/<target>.lora_a" and ".lora_b", target order.
  std::vector<NamedTensor<T>> named_parameters() const;

  /// Deep copy, optionally under a new name (used to seed a stage-2 expert).
  Expert clone(const std::string& new_name = "") const;
  template <typename U>
  Expert<U> cast() const;

 private:
  std::string name_;
  int rank_ = 0;
  double alpha_ = 0;
  bool merged_ = false;
  std::map<std::string, LoraAdapter<T>> adapters_;
};

/// Creates adapters for every target of `model`: A ~ N(0, 0.02^2), B = 0.
template <typename T>
Expert<T> inject_lora(const LanguageModel<T>& model, const std::string& name, int rank, double alpha, num::Rng& rng);

/// Hook adding one expert's full delta at every target.
template <typename T>
class ExpertHook final : public AdapterHook<T> {
 public:
  explicit ExpertHook(const Expert<T>& expert) : expert_(expert) {}
  Tensor<T> adapt(const std::string& target, const Tensor<T>& x, const Tensor<T>& base,
                  std::span<const Segment> segments) const override;

 private:
  const Expert<T>& expert_;
};

/// The low-rank delta path for one adapter: scale * (x A^T) B^T.
template <typename T>
Tensor<T> lora_delta(const LoraAdapter<T>& adapter, double scale, const Tensor<T>& x);

/// Dense copy of `model` with W <- W + (alpha / r) B A at every target. Marks
/// the expert merged; merging it a second time is a contract error.
template <typename T>
LanguageModel<T> merge_lora(const LanguageModel<T>& model, Expert<T>& expert);

/// Parameter names a training stage may update. Entries are exact names or
/// prefixes ending in '*'.
struct TrainablePolicy {
  int stage = 0;
  std::vector<std::string> names;

  static TrainablePolicy stage0();
  static TrainablePolicy stage1(const std::string& tts_expert);
  static TrainablePolicy stage2(const std::vector<std::string>& experts);
  static TrainablePolicy stage3();

  bool allows(const std::string& param) const;
};

/// Training view: marks the policy's parameters trainable and everything
/// else frozen, returning the trainable subset. A policy entry that matches
/// no parameter is a config error.
std::vector<NamedTensor<float>> apply_policy(const std::vector<NamedTensor<float>>& all,
                                             const TrainablePolicy& policy);

}  // namespace mslb::lora
