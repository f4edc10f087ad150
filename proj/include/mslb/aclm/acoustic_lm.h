// SPDX-License-Identifier: Apache-2.0
//
// Semantic-to-acoustic token model. The semantic sequence is a bidirectional
// prefix; acoustic codebooks are decoded jointly over delayed steps, where
// codebook s lags codebook 0 by s steps.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mslb/codec/acoustic.h"
#include "mslb/lm/transformer.h"
#include "mslb/numerics/optim.h"

namespace mslb::aclm {

using codec::AcousticTokenGrid;
using num::Index;
using num::NamedTensor;
using num::Tensor;

/// S x (T + S - 1) grid; cells outside codebook s's window [s, s + T) hold `pad`.
struct DelayedGrid {
  int stages = 0;
  int steps = 0;
  int pad = 0;
  std::vector<int> codes;  // row-major, stages x steps

  int at(int s, int t) const { return codes[static_cast<std::size_t>(s) * steps + t]; }
  int& at(int s, int t) { return codes[static_cast<std::size_t>(s) * steps + t]; }
  bool operator==(const DelayedGrid&) const = default;
};

DelayedGrid apply_delay(const AcousticTokenGrid& grid, int pad);
/// FormatError when a margin cell is not `pad` or a window cell is.
AcousticTokenGrid invert_delay(const DelayedGrid& delayed);

struct AcousticLmConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int d_ff = 256;
  int stages = 4;
  int entries = 64;
  int n_semantic = 64;
  /// Semantic inputs are unified-vocabulary ids in [semantic_offset, semantic_offset + n_semantic).
  int semantic_offset = 64;
  int max_frames = 64;
  double init_scale = 0.02;

  void validate() const;
  int pad_id() const { return entries; }
  int bos_id() const { return entries + 1; }
  bool operator==(const AcousticLmConfig&) const = default;
};

/// One training example: T semantic ids aligned with a S x T grid.
struct AcousticPair {
  std::vector<int> semantic;
  AcousticTokenGrid grid;
};

struct AcousticDecodeOptions {
  bool greedy = true;
  int top_k = 8;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

class AcousticLm {
 public:
  AcousticLm() = default;
  static AcousticLm init(const AcousticLmConfig& cfg, num::Rng& rng);
  static AcousticLm zeros(const AcousticLmConfig& cfg);

  const AcousticLmConfig& config() const { return cfg_; }

  /// Per-codebook logits (steps x K each) for every delayed step of every
  /// pair; rows of all pairs are concatenated in order.
  std::vector<Tensor<float>> step_logits(const std::vector<const AcousticPair*>& pairs) const;
  /// Sum over codebooks of the mean cross-entropy on non-PAD cells.
  Tensor<float> loss(const std::vector<const AcousticPair*>& pairs) const;

  /// Per-codebook argmax accuracy on non-PAD cells under teacher forcing.
  std::vector<double> teacher_forced_accuracy(const std::vector<AcousticPair>& pairs) const;

  /// Autoregressive decoding over T + S - 1 steps, then invert_delay.
  AcousticTokenGrid generate(const std::vector<int>& semantic, const AcousticDecodeOptions& opts = {}) const;

  /// Logits of every codebook at delayed step `t` given the semantic ids and
  /// a (possibly partial) delayed grid whose steps < t are the history.
  std::vector<std::vector<float>> logits_at(const std::vector<int>& semantic, const DelayedGrid& history,
                                            int t) const;

  std::vector<NamedTensor<float>> named_parameters() const;
  std::size_t parameter_count() const;

 private:
  Tensor<float> hidden(const std::vector<const std::vector<int>*>& semantic,
                       const std::vector<const DelayedGrid*>& delayed, std::vector<Index>* step_rows) const;
  void check_semantic(const std::vector<int>& semantic) const;

  AcousticLmConfig cfg_;
  Tensor<float> sem_embed_;   // n_semantic x d
  Tensor<float> code_embed_;  // S * (K + 2) x d
  Tensor<float> pos_embed_;   // max_frames + S x d
  Tensor<float> seg_embed_;   // 2 x d
  lm::DecoderStack<float> stack_;
  std::vector<Tensor<float>> heads_;  // S of d x K
};

struct AcousticTrainOptions {
  std::int64_t steps = 1500;
  int batch_size = 16;
  num::AdamWConfig opt{.lr_max = 1e-3};
  std::uint64_t seed = 0;
  int log_every = 100;
};

using AcousticLogFn = std::function<void(std::int64_t step, double loss, double lr)>;

/// Teacher-forced training of a fresh model. DataError when a pair's semantic
/// length differs from its grid's frame count.
AcousticLm train_acoustic_lm(const std::vector<AcousticPair>& pairs, const AcousticLmConfig& cfg,
                             const AcousticTrainOptions& opts, const AcousticLogFn& on_log = {});
/// Continues training `model` in place.
void train_acoustic_lm_inplace(AcousticLm& model, const std::vector<AcousticPair>& pairs,
                               const AcousticTrainOptions& opts, const AcousticLogFn& on_log = {});

}  // namespace mslb::aclm
