// SPDX-License-Identifier: Apache-2.0
#include "mslb/lm/training.h"

#include <numeric>

namespace mslb::lm {

TeacherForced teacher_forced(const std::vector<const Sample*>& samples) {
  TeacherForced tf;
  std::vector<std::vector<int>> inputs;
  for (const Sample* s : samples) {
    if (s->prompt.empty() || s->target.empty()) throw DataError("sample needs a prompt and a target");
    std::vector<int> seq = s->prompt;
    seq.insert(seq.end(), s->target.begin(), s->target.end() - 1);
    const std::size_t p = s->prompt.size();
    for (std::size_t i = 0; i < seq.size(); ++i) {
      tf.targets.push_back(i + 1 >= p ? s->target[i + 1 - p] : kIgnoreId);
    }
    tf.prompt_lengths.push_back(static_cast<Index>(p));
    inputs.push_back(std::move(seq));
  }
  tf.batch = TokenBatch::pack(inputs);
  return tf;
}

BatchSampler::BatchSampler(std::vector<const std::vector<Sample>*> pools, std::vector<double> weights,
                           std::uint64_t seed)
    : pools_(std::move(pools)), rng_(seed) {
  if (pools_.empty() || pools_.size() != weights.size()) throw ContractError("sampler needs one weight per pool");
  double acc = 0;
  for (std::size_t i = 0; i < pools_.size(); ++i) {
    if (pools_[i]->empty()) throw DataError("empty training pool");
    if (!(weights[i] >= 0)) throw ConfigError("pool weights must be >= 0");
    acc += weights[i];
    cumulative_.push_back(acc);
    order_.emplace_back(pools_[i]->size());
    std::iota(order_.back().begin(), order_.back().end(), 0);
    rng_.shuffle(order_.back());
    cursor_.push_back(0);
  }
  if (!(acc > 0)) throw ConfigError("pool weights sum to zero");
}

std::vector<const Sample*> BatchSampler::next(int batch_size) {
  std::vector<const Sample*> out;
  for (int b = 0; b < batch_size; ++b) {
    std::size_t pool = 0;
    if (pools_.size() > 1) {
      const double u = rng_.uniform() * cumulative_.back();
      while (pool + 1 < pools_.size() && u >= cumulative_[pool]) ++pool;
    }
    if (cursor_[pool] == order_[pool].size()) {
      rng_.shuffle(order_[pool]);
      cursor_[pool] = 0;
    }
    out.push_back(&(*pools_[pool])[order_[pool][cursor_[pool]++]]);
  }
  return out;
}

std::vector<StepRecord> train_loop(const LossFn& loss_fn, std::vector<NamedTensor<float>> trainable,
                                   BatchSampler& sampler, const TrainOptions& opts, const LogFn& on_log) {
  std::vector<StepRecord> log;
  if (opts.steps <= 0) return log;
  num::AdamWConfig cfg = opts.opt;
  cfg.total_steps = opts.steps;
  for (auto& [name, p] : trainable) p.set_requires_grad(true);
  num::AdamW optimizer(cfg, std::move(trainable));
  optimizer.zero_grad();
  for (std::int64_t step = 0; step < opts.steps; ++step) {
    const auto batch = sampler.next(opts.batch_size);
    num::Tensor<float> loss = loss_fn(batch);
    const double loss_value = loss.item();
    num::backward(loss);
    const double lr = num::cosine_lr(cfg, step);
    const double norm = optimizer.step(step);
    if (step == 0 || (opts.log_every > 0 && (step + 1) % opts.log_every == 0) || step + 1 == opts.steps) {
      StepRecord rec{step, loss_value, lr, norm};
      log.push_back(rec);
      if (on_log) on_log(rec);
    }
  }
  for (auto& [name, p] : optimizer.params()) p.set_requires_grad(false);
  return log;
}

template <typename T>
Tensor<T> lm_loss(const LanguageModel<T>& model, const std::vector<const Sample*>& samples,
                  const AdapterHook<T>* hook) {
  const TeacherForced tf = teacher_forced(samples);
  // Only rows that carry a target need logits.
  std::vector<Index> rows;
  std::vector<int> targets;
  for (std::size_t i = 0; i < tf.targets.size(); ++i) {
    if (tf.targets[i] == kIgnoreId) continue;
    rows.push_back(static_cast<Index>(i));
    targets.push_back(tf.targets[i]);
  }
  Tensor<T> logits = model.forward_rows(tf.batch, rows, hook);
  return num::cross_entropy(logits, std::span<const int>(targets), kIgnoreId);
}

LanguageModel<float> pretrain_base_lm(const std::vector<Sample>& corpus, const LmConfig& cfg,
                                      const TrainOptions& opts, const LogFn& on_log) {
  if (corpus.empty()) throw DataError("pretraining corpus is empty");
  num::Rng rng = num::Rng(opts.seed).fork(0x6c6d);
  LanguageModel<float> model = LanguageModel<float>::init(cfg, rng);
  BatchSampler sampler({&corpus}, {1.0}, num::Rng(opts.seed).fork(0x6261).seed());
  auto loss_fn = [&model](const std::vector<const Sample*>& b) { return lm_loss(model, b); };
  train_loop(loss_fn, model.named_parameters(), sampler, opts, on_log);
  return model;
}

template Tensor<float> lm_loss(const LanguageModel<float>&, const std::vector<const Sample*>&,
                               const AdapterHook<float>*);
template Tensor<double> lm_loss(const LanguageModel<double>&, const std::vector<const Sample*>&,
                                const AdapterHook<double>*);

}  // namespace mslb::lm
