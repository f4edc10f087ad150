// SPDX-License-Identifier: Apache-2.0
//
// Objective metrics. CER comes from the oracle transcriber and SNR from the
// waveform; neither is a perceptual (MOS) score.
#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "mslb/codec/audio.h"
#include "mslb/pipeline/inference.h"

namespace mslb::eval {

using pipeline::CodecBundle;
using pipeline::ModelView;

std::size_t levenshtein(const std::string& a, const std::string& b);
/// levenshtein(hyp, ref) / |ref|. ContractError on an empty reference.
double char_error_rate(const std::string& hyp, const std::string& ref);

/// Percentage of questions whose greedy answer segment (tokens before <eos>)
/// is exactly the answer character. ContractError on an empty set.
double text_accuracy(const ModelView& model, const std::vector<std::string>& questions);

/// Zero-pads to a whole number of symbol blocks, then runs the oracle.
std::string transcribe_padded(const codec::Waveform& wav);

struct TtsItem {
  std::string reference;
  std::string hypothesis;
  std::size_t edits = 0;
  bool synthesis_failed = false;
};

struct TtsCer {
  double cer_percent = 0;  // total edits / total reference length
  std::vector<TtsItem> items;
};

/// Synthesizes every string and scores the oracle transcriptions; a
/// synthesis failure counts as an empty hypothesis.
TtsCer tts_cer(const ModelView& model, const CodecBundle& codec, const std::vector<std::string>& strings);

inline constexpr double kSnrCapDb = 300.0;
/// 10 log10(|ref|^2 / |ref - rec|^2), capped at kSnrCapDb. ContractError on
/// a length mismatch or an all-zero reference.
double codec_snr(const codec::Waveform& reference, const codec::Waveform& reconstruction);

struct ReportRow {
  std::string name;
  std::string source;
  double text_accuracy = 0;
  std::optional<double> tts_cer;
};

struct ReportCheck {
  std::string description;
  bool pass = false;
};

struct ForgettingReport {
  std::vector<ReportRow> rows;  // base_lm, tts_expert, text_expert, mole
  std::vector<ReportCheck> checks;

  const ReportRow& row(const std::string& name) const;
  bool all_pass() const;
  std::string to_csv() const;
  std::string to_text() const;
};

struct ReportInput {
  std::string name;
  std::string source;
  ModelView model;
  bool speaks = false;  // also measure TTS CER
};

/// Fills the four rows and evaluates the ordering checks.
ForgettingReport forgetting_report(const std::vector<ReportInput>& inputs, const std::vector<std::string>& questions,
                                   const std::vector<std::string>& tts_strings, const CodecBundle& codec);
/// Checks on an already filled table (exposed for tests).
std::vector<ReportCheck> forgetting_checks(const std::vector<ReportRow>& rows);

}  // namespace mslb::eval
