// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mslb/codec/audio.h"
#include "mslb/lm/generate.h"
#include "mslb/pipeline/stages.h"

namespace mslb::pipeline {

/// A decodable text-side model: the bare LM, the LM with one expert, or a
/// mixture. Non-owning; the referenced objects must outlive the view.
class ModelView {
 public:
  static ModelView base(const LanguageModel<float>& lm);
  static ModelView with_expert(const LanguageModel<float>& lm, const Expert<float>& expert);
  static ModelView mixture(const mole::MoleModel<float>& model);

  const lm::UnifiedVocab& vocab() const;
  int max_seq_len() const;
  /// Next-token function for continuations of `prompt` (a mixture routes once
  /// from the prompt and keeps those gates for the whole continuation).
  lm::NextLogitsFn bind(const std::vector<int>& prompt) const;

 private:
  const LanguageModel<float>* lm_ = nullptr;
  const Expert<float>* expert_ = nullptr;
  const mole::MoleModel<float>* mole_ = nullptr;
};

/// Greedy continuation of the <sys_tts> prompt restricted to semantic ids and
/// <eos>; returns the semantic ids without the <eos>.
std::vector<int> generate_semantic(const ModelView& model, const std::string& text, int max_new);

struct SynthesisTrace {
  std::vector<int> semantic;
  codec::AcousticTokenGrid acoustic;
  codec::Waveform waveform;
};

/// text -> semantic ids -> acoustic grid -> waveform. AlphabetError on an
/// unsupported character, SynthesisError on empty text or no semantic output.
SynthesisTrace synthesize_trace(const ModelView& model, const CodecBundle& codec, const std::string& text);
codec::Waveform synthesize(const ModelView& model, const CodecBundle& codec, const std::string& text);

struct SpeechQaResult {
  std::vector<int> tokens;  // generated continuation including <eos> if emitted
  std::string answer;
  bool layout_ok = false;   // text ids, <speech>, >= 1 semantic id, <eos>
  std::optional<codec::Waveform> waveform;
  /// Set when the output breaks the layout; `answer` then holds the text-only fallback.
  std::optional<std::string> format_error;
};

/// One greedy pass from the <sys_sqa> prompt, split at the first <speech>.
SpeechQaResult speech_qa_infer(const ModelView& model, const CodecBundle& codec, const std::string& question);

}  // namespace mslb::pipeline
