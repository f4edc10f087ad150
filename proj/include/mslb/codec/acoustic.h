// SPDX-License-Identifier: Apache-2.0
//
// Acoustic tokenizer: a linear frame autoencoder with a residual vector
// quantizer in its bottleneck. The decoder doubles as the vocoder.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mslb/codec/audio.h"
#include "mslb/numerics/rng.h"
#include "mslb/numerics/tensor.h"

namespace mslb::codec {

using num::Matrix;

struct AcousticCodecConfig {
  int d_lat = 16;
  int stages = 4;
  int entries = 64;
  int ae_steps = 1500;
  double ae_lr = 3e-3;
  int batch = 256;
  int kmeans_iters = 30;
  int finetune_steps = 500;
  double finetune_lr = 1e-3;
  std::uint64_t seed = 11;

  void validate() const;
  bool operator==(const AcousticCodecConfig&) const = default;
};

/// Per-stage codebooks, each entries x d_lat with row 0 fixed at zero.
struct RvqCodebooks {
  std::vector<Matrix<float>> stages;

  int num_stages() const { return static_cast<int>(stages.size()); }
  int entries() const { return stages.empty() ? 0 : static_cast<int>(stages[0].rows()); }
  int dim() const { return stages.empty() ? 0 : static_cast<int>(stages[0].cols()); }
  bool operator==(const RvqCodebooks&) const = default;
};

/// Greedy residual quantization; `residual_norms`, when given, receives
/// ||r_0||, ..., ||r_S||.
std::vector<int> rvq_quantize(std::span<const float> latent, const RvqCodebooks& cb,
                              std::vector<double>* residual_norms = nullptr);
std::vector<float> rvq_dequantize(std::span<const int> codes, const RvqCodebooks& cb);

/// S x T code grid, one column per frame.
struct AcousticTokenGrid {
  int stages = 0;
  int frames = 0;
  std::vector<int> codes;  // row-major, stages x frames

  AcousticTokenGrid() = default;
  AcousticTokenGrid(int s, int t, int fill = 0) : stages(s), frames(t), codes(static_cast<std::size_t>(s) * t, fill) {}
  int& at(int s, int t) { return codes[static_cast<std::size_t>(s) * frames + t]; }
  int at(int s, int t) const { return codes[static_cast<std::size_t>(s) * frames + t]; }
  bool operator==(const AcousticTokenGrid&) const = default;
};

struct AcousticCodec {
  Matrix<float> enc_w;  // d_lat x 64
  Matrix<float> enc_b;  // 1 x d_lat
  Matrix<float> dec_w;  // 64 x d_lat
  Matrix<float> dec_b;  // 1 x 64
  RvqCodebooks rvq;

  int d_lat() const { return static_cast<int>(enc_w.rows()); }
  /// Latents of a batch of frames (rows of 64 samples).
  Matrix<float> encode_latents(const Matrix<float>& frames) const;
  Matrix<float> decode_latents(const Matrix<float>& latents) const;
  /// Copy that keeps only the first `s` quantizer stages.
  AcousticCodec truncated(int s) const;
  bool operator==(const AcousticCodec&) const = default;
};

struct AcousticFitLog {
  double ae_mse = 0;        // phase 1, final batch
  double finetune_mse = 0;  // phase 3, full corpus
};

/// Three phases: autoencoder on unquantized latents, greedy per-stage k-means
/// on residuals, then decoder-only fine-tuning on quantized latents.
/// DataError when there are fewer than 10 * entries frames.
AcousticCodec fit_acoustic_codec(const Matrix<float>& frames, const AcousticCodecConfig& cfg,
                                 AcousticFitLog* log = nullptr);

AcousticTokenGrid acoustic_encode(const Waveform& wav, const AcousticCodec& codec);
Waveform vocoder_decode(const AcousticTokenGrid& grid, const AcousticCodec& codec);

/// Rendered strings with additive Gaussian noise plus silent frames: the
/// codec and semantic-tokenizer fitting corpus. Rows are 64-sample frames.
Matrix<float> toy_frame_corpus(int n_strings, int silence_frames, double noise_sigma, num::Rng& rng);
/// Random string over the tone alphabet with length in [min_len, max_len].
std::string random_symbol_string(num::Rng& rng, int min_len, int max_len);

}  // namespace mslb::codec
