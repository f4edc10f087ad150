// SPDX-License-Identifier: Apache-2.0
#include "mslb/pipeline/inference.h"

#include <algorithm>

#include "mslb/error.h"
#include "mslb/pipeline/datasets.h"

namespace mslb::pipeline {

using lm::Control;

ModelView ModelView::base(const LanguageModel<float>& lm) {
  ModelView v;
  v.lm_ = &lm;
  return v;
}

ModelView ModelView::with_expert(const LanguageModel<float>& lm, const Expert<float>& expert) {
  ModelView v;
  v.lm_ = &lm;
  v.expert_ = &expert;
  return v;
}

ModelView ModelView::mixture(const mole::MoleModel<float>& model) {
  ModelView v;
  v.lm_ = &model.base();
  v.mole_ = &model;
  return v;
}

const lm::UnifiedVocab& ModelView::vocab() const { return lm_->vocab(); }
int ModelView::max_seq_len() const { return lm_->config().max_seq_len; }

lm::NextLogitsFn ModelView::bind(const std::vector<int>& prompt) const {
  if (mole_) {
    const auto* m = mole_;
    return [m, gates = m->route(prompt)](const std::vector<int>& seq) { return m->next_logits(seq, gates); };
  }
  const auto* lm = lm_;
  const auto* ex = expert_;
  return [lm, ex](const std::vector<int>& seq) {
    const auto tb = lm::TokenBatch::single(seq);
    const auto rows = tb.last_rows();
    num::Tensor<float> logits;
    if (ex) {
      lora::ExpertHook<float> hook(*ex);
      logits = lm->forward_rows(tb, rows, &hook);
    } else {
      logits = lm->forward_rows(tb, rows);
    }
    const auto& v = logits.value();
    return std::vector<float>(v.data(), v.data() + v.size());
  };
}

std::vector<int> generate_semantic(const ModelView& model, const std::string& text, int max_new) {
  const auto& vocab = model.vocab();
  if (vocab.n_semantic() == 0) throw DependencyError("model has no semantic vocabulary (run stage1)");
  const auto prompt = make_prompt(vocab, Control::kSysTts, text);
  lm::GenerateOptions opts;
  opts.max_new = max_new;
  opts.stop_ids = {vocab.control(Control::kEos)};
  std::vector<int> allowed = vocab.semantic_ids();
  allowed.push_back(vocab.control(Control::kEos));
  opts.allowed_ids = std::move(allowed);
  opts.max_total_len = model.max_seq_len();
  auto out = lm::generate(model.bind(prompt), prompt, opts);
  if (!out.empty() && out.back() == vocab.control(Control::kEos)) out.pop_back();
  return out;
}

namespace {

codec::Waveform speak(const CodecBundle& codec, const std::vector<int>& semantic, codec::AcousticTokenGrid* grid_out) {
  auto grid = codec.aclm.generate(semantic);
  auto wav = codec::vocoder_decode(grid, codec.acoustic);
  if (grid_out) *grid_out = std::move(grid);
  return wav;
}

}  // namespace

SynthesisTrace synthesize_trace(const ModelView& model, const CodecBundle& codec, const std::string& text) {
  if (text.empty()) throw SynthesisError("empty text");
  for (const char c : text) (void)codec::symbol_index(c);  // AlphabetError on unrenderable characters
  SynthesisTrace t;
  t.semantic = generate_semantic(model, text, codec.aclm.config().max_frames);
  if (t.semantic.empty()) throw SynthesisError("the language model emitted no semantic tokens for '" + text + "'");
  t.waveform = speak(codec, t.semantic, &t.acoustic);
  return t;
}

codec::Waveform synthesize(const ModelView& model, const CodecBundle& codec, const std::string& text) {
  return synthesize_trace(model, codec, text).waveform;
}

SpeechQaResult speech_qa_infer(const ModelView& model, const CodecBundle& codec, const std::string& question) {
  (void)qa_answer(question);  // DataError on a malformed question
  const auto& vocab = model.vocab();
  const int eos = vocab.control(Control::kEos);
  const int speech = vocab.control(Control::kSpeech);
  const auto prompt = make_prompt(vocab, Control::kSysSqa, question);
  lm::GenerateOptions opts;
  opts.max_new = 8 + codec.aclm.config().max_frames;
  opts.stop_ids = {eos};
  opts.max_total_len = model.max_seq_len();

  SpeechQaResult r;
  r.tokens = lm::generate(model.bind(prompt), prompt, opts);
  const auto end = std::find(r.tokens.begin(), r.tokens.end(), eos);
  const auto split = std::find(r.tokens.begin(), end, speech);
  if (split == end) {
    r.answer = vocab.decode(std::vector<int>(r.tokens.begin(), end));
    r.format_error = end == r.tokens.end() ? "no <speech> or <eos> emitted" : "no <speech> emitted before <eos>";
    return r;
  }
  const std::vector<int> text_part(r.tokens.begin(), split);
  const std::vector<int> sem(split + 1, end);
  r.answer = vocab.decode(text_part);
  const bool text_ok = !text_part.empty() && std::all_of(text_part.begin(), text_part.end(), [&](int id) {
    const auto role = vocab.role(id);
    return role == lm::TokenRole::kSymbol || role == lm::TokenRole::kOperator;
  });
  const bool sem_ok =
      !sem.empty() && static_cast<int>(sem.size()) <= codec.aclm.config().max_frames && std::all_of(sem.begin(), sem.end(), [&](int id) { return vocab.is_semantic(id); });
  r.layout_ok = text_ok && sem_ok && end != r.tokens.end();
  if (!r.layout_ok) {
    r.format_error = !text_ok  ? "answer segment holds non-symbol ids"
                     : !sem_ok ? "speech segment is empty, too long, or holds non-semantic ids"
                               : "no <eos> emitted";
  }
  if (sem_ok) r.waveform = speak(codec, sem, nullptr);
  return r;
}

}  // namespace mslb::pipeline
