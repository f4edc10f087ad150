// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one JSON document with sections
//   vocab, lm, lora, mole, codec, acoustic_lm, stages[], seed.
// Every key is required and unknown keys are rejected; validation collects
// all problems (with dotted paths) before failing.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mslb/aclm/acoustic_lm.h"
#include "mslb/codec/acoustic.h"
#include "mslb/lm/transformer.h"
#include "mslb/numerics/optim.h"

namespace mslb::pipeline {

struct LoraSection {
  int rank = 8;
  double alpha = 16.0;
  bool operator==(const LoraSection&) const = default;
};

struct MoleSection {
  int router_hidden = 64;
  std::vector<std::string> experts{"tts", "text"};
  bool hard_routing = false;
  bool operator==(const MoleSection&) const = default;
};

struct CodecSection {
  int semantic_k = 64;
  int kmeans_iters = 30;
  int corpus_strings = 300;
  int silence_frames = 64;
  double noise_sigma = 0.01;
  codec::AcousticCodecConfig acoustic;
  bool operator==(const CodecSection&) const = default;
};

struct AcousticLmSection {
  aclm::AcousticLmConfig model;
  std::int64_t steps = 1500;
  int batch_size = 16;
  double lr = 1e-3;
  int n_pairs = 2000;
  bool operator==(const AcousticLmSection&) const = default;
};

/// One training stage. `mix` maps dataset kinds (tts, text_qa, speech_qa) to
/// sampling weights; `experts` lists the stage-2 experts to train.
struct StageConfig {
  int stage = 0;
  std::map<std::string, double> mix;
  std::int64_t steps = 0;
  int batch_size = 32;
  num::AdamWConfig opt;
  std::uint64_t seed = 0;
  int n_samples = 0;
  std::vector<std::string> experts;
  bool continue_from_tts = true;
  bool operator==(const StageConfig&) const = default;
};

struct Config {
  int n_text = 64;
  int n_semantic = 64;
  lm::LmConfig lm;
  LoraSection lora;
  MoleSection mole;
  CodecSection codec;
  AcousticLmSection acoustic_lm;
  std::vector<StageConfig> stages;
  std::uint64_t seed = 1234;

  const StageConfig& stage(int id) const;
  /// Stage seed derived from the run seed and the stage's own seed field.
  std::uint64_t stage_seed(int id) const;
  lm::UnifiedVocab text_vocab() const { return lm::UnifiedVocab(n_text, 0); }
  lm::UnifiedVocab full_vocab() const { return lm::UnifiedVocab(n_text, n_semantic); }
  bool operator==(const Config&) const = default;
};

/// The shipped desk-scale configuration.
Config desk_config();

/// Parses and validates; ConfigError listing every problem on failure.
Config parse_config(const std::string& json_text);
/// Validation only: the list of problems (empty when valid).
std::vector<std::string> validate_config_text(const std::string& json_text);
/// Canonical JSON (sorted keys, fixed number formatting).
std::string to_json(const Config& cfg, int indent = 2);

/// Paper-scale hyperparameters, printed by `--preset paper`.
std::string paper_preset_text();

}  // namespace mslb::pipeline
