// SPDX-License-Identifier: Apache-2.0
//
// Training orchestration: codec fitting and stages 0-3, plus conversion of
// every artifact to and from checkpoints.
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mslb/aclm/acoustic_lm.h"
#include "mslb/codec/acoustic.h"
#include "mslb/codec/semantic.h"
#include "mslb/mole/mole.h"
#include "mslb/pipeline/checkpoint.h"
#include "mslb/pipeline/config.h"

namespace mslb::pipeline {

using lm::LanguageModel;
using lora::Expert;

/// Semantic tokenizer, acoustic codec (vocoder = its decoder), and the
/// acoustic LM trained on the codec's token grids.
struct CodecBundle {
  codec::SemanticCodebook semantic;
  codec::AcousticCodec acoustic;
  aclm::AcousticLm aclm;
};

/// A language model with its experts (stage 1 onward) and router (stage 3).
struct LmBundle {
  LanguageModel<float> lm;
  std::vector<Expert<float>> experts;
  std::optional<mole::Router<float>> router;

  const Expert<float>& expert(const std::string& name) const;
  bool has_expert(const std::string& name) const;
  std::vector<num::NamedTensor<float>> named_parameters() const;
  /// Assembles the mixture over `names` (in that order) with the stored router.
  mole::MoleModel<float> mole(const std::vector<std::string>& names, bool hard_routing) const;
};

/// One progress record; `stage` is -1 for codec fitting and `phase` names
/// the sub-run (e.g. an expert name or "acoustic_lm").
struct ProgressRecord {
  int stage = 0;
  std::string phase;
  lm::StepRecord step;
};
using ProgressFn = std::function<void(const ProgressRecord&)>;

struct CodecFitReport {
  std::vector<double> kmeans_objective;
  codec::AcousticFitLog acoustic;
};

/// Fits the semantic codebook (centroids rounded to 32-bit precision so the
/// checkpointed codebook is the one used), the acoustic codec, and the
/// acoustic LM.
CodecBundle fit_codec(const Config& cfg, const ProgressFn& on_progress = {}, CodecFitReport* report = nullptr);

LanguageModel<float> run_stage0(const Config& cfg, const ProgressFn& on_progress = {});
/// Extends the vocabulary and trains the "tts" expert with embeddings, positions, and head.
LmBundle run_stage1(const Config& cfg, const LanguageModel<float>& base, const codec::SemanticCodebook& cb,
                    const ProgressFn& on_progress = {});
/// Adds the stage-2 experts (adapters only).
LmBundle run_stage2(const Config& cfg, const LmBundle& stage1, const codec::SemanticCodebook& cb,
                    const ProgressFn& on_progress = {});
/// Trains a router over cfg.mole.experts; everything else stays frozen.
LmBundle run_stage3(const Config& cfg, const LmBundle& stage2, const codec::SemanticCodebook& cb,
                    const ProgressFn& on_progress = {});

Checkpoint codec_checkpoint(const Config& cfg, const CodecBundle& bundle);
CodecBundle codec_from_checkpoint(const Config& cfg, const Checkpoint& ckpt);
Checkpoint lm_checkpoint(const Config& cfg, const LmBundle& bundle);
LmBundle lm_from_checkpoint(const Config& cfg, const Checkpoint& ckpt);

/// Artifact file names inside a run directory.
inline constexpr const char* kCodecFile = "codec.mslb";
std::string stage_file(int stage);

}  // namespace mslb::pipeline
