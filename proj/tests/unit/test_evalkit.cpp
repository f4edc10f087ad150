// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "mslb/error.h"
#include "mslb/eval/evalkit.h"
#include "mslb/pipeline/datasets.h"
#include "oracles.h"

using namespace mslb;
using namespace mslb::eval;

TEST_CASE("character error rate") {
  CHECK(char_error_rate("abc", "abc") == 0.0);
  CHECK(char_error_rate("abd", "abc") == doctest::Approx(1.0 / 3));
  CHECK(char_error_rate("", "abcd") == 1.0);
  CHECK(char_error_rate("abcdabcd", "ab") == 3.0);
  CHECK_THROWS_AS(char_error_rate("x", ""), ContractError);
}

TEST_CASE("levenshtein matches the full DP table on random pairs and is a metric") {
  num::Rng rng(1);
  auto rand_str = [&] {
    std::string s(rng.below(12), 'a');
    for (auto& c : s) c = "abc1 "[rng.below(5)];
    return s;
  };
  for (int i = 0; i < 500; ++i) {
    const auto a = rand_str(), b = rand_str(), c = rand_str();
    const auto ab = levenshtein(a, b);
    CHECK(ab == oracle::levenshtein(a, b));
    CHECK(ab == levenshtein(b, a));
    CHECK((ab == 0) == (a == b));
    CHECK(levenshtein(a, c) <= ab + levenshtein(b, c));
  }
}

TEST_CASE("codec SNR conventions") {
  codec::Waveform ref = codec::render("3a");
  CHECK(codec_snr(ref, ref) == kSnrCapDb);
  codec::Waveform zero = ref;
  std::fill(zero.samples.begin(), zero.samples.end(), 0.0f);
  CHECK(codec_snr(ref, zero) == doctest::Approx(0.0).epsilon(1e-12));
  codec::Waveform half = ref;
  for (auto& x : half.samples) x *= 0.5f;
  CHECK(codec_snr(ref, half) == doctest::Approx(10 * std::log10(4.0)).epsilon(1e-6));
  codec::Waveform shorter = ref;
  shorter.samples.pop_back();
  CHECK_THROWS_AS(codec_snr(ref, shorter), ContractError);
  CHECK_THROWS_AS(codec_snr(zero, ref), ContractError);
}

TEST_CASE("padded transcription tolerates partial blocks") {
  auto w = codec::render("7e");
  w.samples.resize(w.samples.size() - 10);
  CHECK(transcribe_padded(w) == "7e");
}

TEST_CASE("text accuracy: scripted perfect and wrong models") {
  lm::LmConfig cfg;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.max_seq_len = 16;
  num::Rng rng(2);
  auto m = lm::LanguageModel<float>::init(cfg, rng);
  const auto questions = pipeline::qa_questions();
  // An untrained model is well below perfect and deterministic.
  const auto v = pipeline::ModelView::base(m);
  const double acc = text_accuracy(v, questions);
  CHECK(acc == text_accuracy(v, questions));
  CHECK(acc >= 0.0);
  CHECK(acc <= 20.0);
  CHECK_THROWS_AS(text_accuracy(v, {}), ContractError);
}

TEST_CASE("forgetting checks encode the pinned thresholds") {
  std::vector<ReportRow> rows = {{"base_lm", "stage0.mslb", 100, std::nullopt},
                                 {"tts_expert", "stage1.mslb", 20, 3.0},
                                 {"text_expert", "stage2.mslb", 98, std::nullopt},
                                 {"mole", "stage3.mslb", 96, 4.0}};
  ForgettingReport rep{rows, forgetting_checks(rows)};
  CHECK(rep.all_pass());
  CHECK(rep.to_csv().find("mole,stage3.mslb,96.0,4.0") != std::string::npos);
  const auto text = rep.to_text();
  CHECK(text.find("67.1 / TTS 27.2 / text expert 56.7") != std::string::npos);
  CHECK(text.find("not a perceptual MOS") != std::string::npos);

  rows[3].tts_cer = 5.5;
  CHECK_FALSE(ForgettingReport{rows, forgetting_checks(rows)}.all_pass());
  rows[3].tts_cer = 4.0;
  rows[1].text_accuracy = 75;
  CHECK_FALSE(ForgettingReport{rows, forgetting_checks(rows)}.all_pass());
  rows.pop_back();
  CHECK_THROWS_AS(forgetting_checks(rows), DependencyError);
}
