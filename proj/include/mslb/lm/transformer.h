// SPDX-License-Identifier: Apache-2.0
//
// Pre-norm causal decoder stack (RMS norm, GELU feed-forward, learned absolute
// positions) and the token language model built on it.
#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "mslb/lm/vocab.h"
#include "mslb/numerics/ops.h"
#include "mslb/numerics/rng.h"
#include "mslb/numerics/tensor.h"

namespace mslb::lm {

using num::Index;
using num::Matrix;
using num::NamedTensor;
using num::Segment;
using num::Tensor;

/// Adds adapter deltas to the output of a named linear projection. `x` is the
/// projection input and `base` its frozen-weight output.
template <typename T>
class AdapterHook {
 public:
  virtual ~AdapterHook() = default;
  virtual Tensor<T> adapt(const std::string& target, const Tensor<T>& x, const Tensor<T>& base,
                          std::span<const Segment> segments) const = 0;
};

/// Shape (d_out, d_in) of every adaptable projection, keyed by target name.
using TargetShapes = std::map<std::string, std::pair<Index, Index>>;

template <typename T>
struct DecoderBlock {
  Tensor<T> attn_norm, wq, wk, wv, wo;
  Tensor<T> ffn_norm, w1, w2;
};

template <typename T>
class DecoderStack {
 public:
  DecoderStack() = default;
  static DecoderStack init(int d_model, int n_layers, int n_heads, int d_ff, num::Rng& rng, double init_scale);

  /// x: N x d_model packed batch; returns the final-normed hidden states.
  Tensor<T> forward(const Tensor<T>& x, std::span<const Segment> segments, const AdapterHook<T>* hook) const;

  void collect(std::vector<NamedTensor<T>>& out, const std::string& prefix) const;
  TargetShapes targets() const;

  int n_heads() const { return n_heads_; }
  int n_layers() const { return static_cast<int>(blocks_.size()); }

 private:
  int n_heads_ = 1;
  std::vector<DecoderBlock<T>> blocks_;
  Tensor<T> final_norm_;
};

struct LmConfig {
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int d_ff = 512;
  int max_seq_len = 256;
  double init_scale = 0.02;
  UnifiedVocab vocab{64, 0};

  void validate() const;
  bool operator==(const LmConfig&) const = default;
};

/// Sequences packed row-wise for one forward pass.
struct TokenBatch {
  std::vector<int> ids;
  std::vector<int> positions;
  std::vector<Segment> segments;

  static TokenBatch pack(const std::vector<std::vector<int>>& seqs);
  static TokenBatch single(const std::vector<int>& seq) { return pack({seq}); }
  /// Row index of the last token of every sequence.
  std::vector<Index> last_rows() const;
};

template <typename T>
class LanguageModel {
 public:
  LanguageModel() = default;
  static LanguageModel init(const LmConfig& cfg, num::Rng& rng);
  /// Same shapes as init() with every parameter zero; used before loading.
  static LanguageModel zeros(const LmConfig& cfg);

  const LmConfig& config() const { return cfg_; }
  const UnifiedVocab& vocab() const { return cfg_.vocab; }

  /// Logits (N x V) for every row of the batch.
  Tensor<T> forward(const TokenBatch& batch, const AdapterHook<T>* hook = nullptr) const;
  /// Logits only for the given rows.
  Tensor<T> forward_rows(const TokenBatch& batch, std::span<const Index> rows,
                         const AdapterHook<T>* hook = nullptr) const;
  /// Final hidden states (N x d_model).
  Tensor<T> hidden(const TokenBatch& batch, const AdapterHook<T>* hook = nullptr) const;

  /// Token embedding rows for ids, without positions (router input).
  Tensor<T> token_embeddings(std::span<const int> ids) const;

  /// Appends n_new semantic ids: embedding rows and head columns drawn from
  /// N(0, init_scale^2); every existing parameter is copied bit-for-bit.
  LanguageModel extend_vocabulary(int n_new, double init_scale, num::Rng& rng) const;

  LanguageModel clone() const;
  template <typename U>
  LanguageModel<U> cast() const;

  /// Parameters under "lm/" names, in a fixed order. Handles share storage.
  std::vector<NamedTensor<T>> named_parameters() const;
  Tensor<T> parameter(const std::string& name) const;
  TargetShapes lora_targets() const { return stack_.targets(); }

 private:
  void validate_batch(const TokenBatch& batch) const;
  std::vector<Index> head_blocks() const;

  LmConfig cfg_;
  Tensor<T> tok_embed_;  // V x d
  Tensor<T> pos_embed_;  // max_seq_len x d
  DecoderStack<T> stack_;
  Tensor<T> head_;  // d x V
};

/// N(0, stddev^2) entries.
template <typename T>
Tensor<T> gaussian_init(Index rows, Index cols, double stddev, num::Rng& rng);
/// Sinusoidal position table scaled to per-entry RMS `rms`.
template <typename T>
Tensor<T> sinusoidal_init(Index rows, Index cols, double rms);

/// Copies values by name from one parameter list into another of equal shapes.
template <typename T, typename U>
void copy_parameters(const std::vector<NamedTensor<U>>& from, const std::vector<NamedTensor<T>>& to);

/// Order-sensitive FNV-1a digest over names and raw value bytes.
template <typename T>
std::uint64_t checksum(const std::vector<NamedTensor<T>>& params);

}  // namespace mslb::lm
