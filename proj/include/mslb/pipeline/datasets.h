// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "mslb/codec/semantic.h"
#include "mslb/lm/training.h"
#include "mslb/lm/vocab.h"

namespace mslb::pipeline {

enum class Task { kTts = 0, kTextQa = 1, kSpeechQa = 2 };
enum class DatasetKind { kTts, kTextQa, kSpeechQa };

DatasetKind parse_dataset_kind(const std::string& name);
std::string dataset_kind_name(DatasetKind kind);

/// [<bos>, system id, <user>, payload..., <assistant>]
std::vector<int> make_prompt(const lm::UnifiedVocab& vocab, lm::Control system, std::string_view payload);

/// The 100 questions "a+b=?" for single digits a, b, in (a, b) order.
std::vector<std::string> qa_questions();
/// Single-digit answer of a "a+b=?" question: (a + b) mod 10.
char qa_answer(std::string_view question);

/// tts: `n` random strings of length 3-12 with semantic targets;
/// text_qa / speech_qa: the 100 addition items (n is ignored).
/// DependencyError when a speech kind is requested without a codebook.
std::vector<lm::Sample> build_dataset(DatasetKind kind, int n, std::uint64_t seed, const lm::UnifiedVocab& vocab,
                                      const codec::SemanticCodebook* codebook);

/// TTS sample for one given string.
lm::Sample tts_sample(const std::string& text, const lm::UnifiedVocab& vocab, const codec::SemanticCodebook& cb);

/// Held-out TTS strings, drawn from a stream disjoint from the training one.
std::vector<std::string> heldout_strings(int n, std::uint64_t seed);

}  // namespace mslb::pipeline
