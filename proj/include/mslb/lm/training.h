// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mslb/lm/transformer.h"
#include "mslb/numerics/optim.h"

namespace mslb::lm {

/// A prompt/target pair; the loss covers target positions only.
struct Sample {
  std::vector<int> prompt;
  std::vector<int> target;
  int task = 0;
};

/// Packed teacher-forced view: input = prompt + target[:-1]; row i predicts
/// token i+1, and rows inside the prompt carry kIgnoreId.
struct TeacherForced {
  TokenBatch batch;
  std::vector<int> targets;
  std::vector<Index> prompt_lengths;
};
TeacherForced teacher_forced(const std::vector<const Sample*>& samples);

/// Draws mini-batches from one or more pools. Each batch slot picks a pool
/// with probability proportional to its weight, then takes that pool's next
/// sample in a reshuffled-per-epoch order.
class BatchSampler {
 public:
  BatchSampler(std::vector<const std::vector<Sample>*> pools, std::vector<double> weights, std::uint64_t seed);
  std::vector<const Sample*> next(int batch_size);

 private:
  std::vector<const std::vector<Sample>*> pools_;
  std::vector<double> cumulative_;
  std::vector<std::vector<std::size_t>> order_;
  std::vector<std::size_t> cursor_;
  num::Rng rng_;
};

struct TrainOptions {
  std::int64_t steps = 0;
  int batch_size = 32;
  num::AdamWConfig opt;
  std::uint64_t seed = 0;
  int log_every = 100;
};

struct StepRecord {
  std::int64_t step = 0;
  double loss = 0;
  double lr = 0;
  double grad_norm = 0;
};

using LossFn = std::function<num::Tensor<float>(const std::vector<const Sample*>&)>;
using LogFn = std::function<void(const StepRecord&)>;

/// Generic minibatch loop: AdamW on `trainable` with the cosine schedule over
/// opts.steps. Returns every logged record (first, every log_every-th, last).
std::vector<StepRecord> train_loop(const LossFn& loss_fn, std::vector<NamedTensor<float>> trainable,
                                   BatchSampler& sampler, const TrainOptions& opts, const LogFn& on_log = {});

/// Mean next-token cross-entropy over the target positions of `samples`.
template <typename T>
Tensor<T> lm_loss(const LanguageModel<T>& model, const std::vector<const Sample*>& samples,
                  const AdapterHook<T>* hook = nullptr);

/// Trains a freshly initialized model on a text corpus (all parameters
/// trainable). steps = 0 returns the initialized model unchanged.
LanguageModel<float> pretrain_base_lm(const std::vector<Sample>& corpus, const LmConfig& cfg,
                                      const TrainOptions& opts, const LogFn& on_log = {});

}  // namespace mslb::lm
