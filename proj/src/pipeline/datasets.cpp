// SPDX-License-Identifier: Apache-2.0
#include "mslb/pipeline/datasets.h"

#include "mslb/codec/acoustic.h"
#include "mslb/error.h"

namespace mslb::pipeline {

using lm::Control;

DatasetKind parse_dataset_kind(const std::string& name) {
  if (name == "tts") return DatasetKind::kTts;
  if (name == "text_qa") return DatasetKind::kTextQa;
  if (name == "speech_qa") return DatasetKind::kSpeechQa;
  throw ConfigError("unknown dataset kind '" + name + "'");
}

std::string dataset_kind_name(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kTts:
      return "tts";
    case DatasetKind::kTextQa:
      return "text_qa";
    case DatasetKind::kSpeechQa:
      return "speech_qa";
  }
  return "?";
}

std::vector<int> make_prompt(const lm::UnifiedVocab& vocab, Control system, std::string_view payload) {
  std::vector<int> p = {vocab.control(Control::kBos), vocab.control(system), vocab.control(Control::kUser)};
  const auto ids = vocab.encode(payload);
  p.insert(p.end(), ids.begin(), ids.end());
  p.push_back(vocab.control(Control::kAssistant));
  return p;
}

std::vector<std::string> qa_questions() {
  std::vector<std::string> out;
  for (int a = 0; a < 10; ++a) {
    for (int b = 0; b < 10; ++b) out.push_back(std::string{char('0' + a), '+', char('0' + b), '=', '?'});
  }
  return out;
}

char qa_answer(std::string_view q) {
  if (q.size() != 5 || q[1] != '+' || q[3] != '=' || q[4] != '?' || q[0] < '0' || q[0] > '9' || q[2] < '0' ||
      q[2] > '9') {
    throw DataError("not a toy QA question: '" + std::string(q) + "'");
  }
  return static_cast<char>('0' + (q[0] - '0' + q[2] - '0') % 10);
}

lm::Sample tts_sample(const std::string& text, const lm::UnifiedVocab& vocab, const codec::SemanticCodebook& cb) {
  lm::Sample s;
  s.prompt = make_prompt(vocab, Control::kSysTts, text);
  s.target = codec::semantic_encode(codec::render(text), cb, vocab.n_text());
  s.target.push_back(vocab.control(Control::kEos));
  s.task = static_cast<int>(Task::kTts);
  return s;
}

std::vector<lm::Sample> build_dataset(DatasetKind kind, int n, std::uint64_t seed, const lm::UnifiedVocab& vocab,
                                      const codec::SemanticCodebook* cb) {
  std::vector<lm::Sample> out;
  if ((kind == DatasetKind::kTts || kind == DatasetKind::kSpeechQa) && !cb) {
    throw DependencyError(dataset_kind_name(kind) + " data needs a fitted semantic codebook (run fit-codec)");
  }
  if (kind != DatasetKind::kTextQa && cb && cb->size() != vocab.n_semantic()) {
    throw ConfigError("semantic codebook size differs from the vocabulary's semantic range");
  }
  switch (kind) {
    case DatasetKind::kTts: {
      num::Rng rng = num::Rng(seed).fork(0x747473);
      for (int i = 0; i < n; ++i) out.push_back(tts_sample(codec::random_symbol_string(rng, 3, 12), vocab, *cb));
      break;
    }
    case DatasetKind::kTextQa:
      for (const auto& q : qa_questions()) {
        lm::Sample s;
        s.prompt = make_prompt(vocab, Control::kSysQa, q);
        s.target = {vocab.symbol(qa_answer(q)), vocab.control(Control::kEos)};
        s.task = static_cast<int>(Task::kTextQa);
        out.push_back(std::move(s));
      }
      break;
    case DatasetKind::kSpeechQa:
      for (const auto& q : qa_questions()) {
        const char a = qa_answer(q);
        lm::Sample s;
        s.prompt = make_prompt(vocab, Control::kSysSqa, q);
        s.target = {vocab.symbol(a), vocab.control(Control::kSpeech)};
        const auto sem = codec::semantic_encode(codec::render(std::string(1, a)), *cb, vocab.n_text());
        s.target.insert(s.target.end(), sem.begin(), sem.end());
        s.target.push_back(vocab.control(Control::kEos));
        s.task = static_cast<int>(Task::kSpeechQa);
        out.push_back(std::move(s));
      }
      break;
  }
  return out;
}

std::vector<std::string> heldout_strings(int n, std::uint64_t seed) {
  num::Rng rng = num::Rng(seed).fork(0x68656c64);
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back(codec::random_symbol_string(rng, 3, 12));
  return out;
}

}  // namespace mslb::pipeline
