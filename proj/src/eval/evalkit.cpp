// SPDX-License-Identifier: Apache-2.0
#include "mslb/eval/evalkit.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "mslb/error.h"
#include "mslb/pipeline/datasets.h"

namespace mslb::eval {

std::size_t levenshtein(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double char_error_rate(const std::string& hyp, const std::string& ref) {
  if (ref.empty()) throw ContractError("char_error_rate needs a non-empty reference");
  return static_cast<double>(levenshtein(hyp, ref)) / static_cast<double>(ref.size());
}

double text_accuracy(const ModelView& model, const std::vector<std::string>& questions) {
  if (questions.empty()) throw ContractError("text_accuracy needs at least one question");
  const auto& vocab = model.vocab();
  const int eos = vocab.control(lm::Control::kEos);
  lm::GenerateOptions opts;
  opts.max_new = 4;
  opts.stop_ids = {eos};
  int correct = 0;
  for (const auto& q : questions) {
    const auto prompt = pipeline::make_prompt(vocab, lm::Control::kSysQa, q);
    const auto out = lm::generate(model.bind(prompt), prompt, opts);
    const auto end = std::find(out.begin(), out.end(), eos);
    const std::vector<int> answer(out.begin(), end);
    if (end != out.end() && answer.size() == 1 && answer[0] == vocab.symbol(pipeline::qa_answer(q))) ++correct;
  }
  return 100.0 * correct / static_cast<double>(questions.size());
}

std::string transcribe_padded(const codec::Waveform& wav) {
  codec::Waveform w = wav;
  const std::size_t block = codec::kSamplesPerSymbol;
  w.samples.resize((w.samples.size() + block - 1) / block * block, 0.0f);
  return codec::oracle_transcribe(w);
}

TtsCer tts_cer(const ModelView& model, const CodecBundle& codec, const std::vector<std::string>& strings) {
  if (strings.empty()) throw ContractError("tts_cer needs at least one string");
  TtsCer r;
  std::size_t edits = 0, chars = 0;
  for (const auto& s : strings) {
    TtsItem it;
    it.reference = s;
    try {
      it.hypothesis = transcribe_padded(pipeline::synthesize(model, codec, s));
    } catch (const SynthesisError&) {
      it.synthesis_failed = true;
    }
    it.edits = levenshtein(it.hypothesis, s);
    edits += it.edits;
    chars += s.size();
    r.items.push_back(std::move(it));
  }
  r.cer_percent = 100.0 * static_cast<double>(edits) / static_cast<double>(chars);
  return r;
}

double codec_snr(const codec::Waveform& reference, const codec::Waveform& reconstruction) {
  if (reference.samples.size() != reconstruction.samples.size()) {
    throw ContractError("codec_snr: lengths differ (" + std::to_string(reference.samples.size()) + " vs " +
                        std::to_string(reconstruction.samples.size()) + ")");
  }
  double sig = 0, err = 0;
  for (std::size_t i = 0; i < reference.samples.size(); ++i) {
    const double r = reference.samples[i];
    const double d = r - reconstruction.samples[i];
    sig += r * r;
    err += d * d;
  }
  if (sig == 0) throw ContractError("codec_snr: reference is all zero");
  if (err == 0) return kSnrCapDb;
  return std::min(kSnrCapDb, 10.0 * std::log10(sig / err));
}

// ---------------------------------------------------------------------------

const ReportRow& ForgettingReport::row(const std::string& name) const {
  for (const auto& r : rows) {
    if (r.name == name) return r;
  }
  throw DependencyError("report has no row '" + name + "'");
}

bool ForgettingReport::all_pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const ReportCheck& c) { return c.pass; });
}

std::vector<ReportCheck> forgetting_checks(const std::vector<ReportRow>& rows) {
  ForgettingReport t;
  t.rows = rows;
  const auto& base = t.row("base_lm");
  const auto& tts = t.row("tts_expert");
  const auto& text = t.row("text_expert");
  const auto& mole = t.row("mole");
  std::vector<ReportCheck> c;
  c.push_back({"base_lm text accuracy >= 99", base.text_accuracy >= 99.0});
  c.push_back({"tts_expert text accuracy <= base_lm - 30", tts.text_accuracy <= base.text_accuracy - 30.0});
  c.push_back({"text_expert text accuracy >= 95", text.text_accuracy >= 95.0});
  c.push_back({"|mole - text_expert| text accuracy <= 5", std::abs(mole.text_accuracy - text.text_accuracy) <= 5.0});
  const bool cer_ok = tts.tts_cer && mole.tts_cer && *mole.tts_cer <= *tts.tts_cer + 2.0;
  c.push_back({"mole TTS CER <= tts_expert TTS CER + 2", cer_ok});
  return c;
}

ForgettingReport forgetting_report(const std::vector<ReportInput>& inputs, const std::vector<std::string>& questions,
                                   const std::vector<std::string>& tts_strings, const CodecBundle& codec) {
  ForgettingReport rep;
  for (const auto& in : inputs) {
    ReportRow row{in.name, in.source, text_accuracy(in.model, questions), std::nullopt};
    if (in.speaks) row.tts_cer = tts_cer(in.model, codec, tts_strings).cer_percent;
    rep.rows.push_back(std::move(row));
  }
  rep.checks = forgetting_checks(rep.rows);
  return rep;
}

namespace {

std::string fixed(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << v;
  return os.str();
}

}  // namespace

std::string ForgettingReport::to_csv() const {
  std::ostringstream os;
  os << "model,source,text_accuracy_pct,tts_cer_pct\n";
  for (const auto& r : rows) {
    os << r.name << ',' << r.source << ',' << fixed(r.text_accuracy) << ',' << (r.tts_cer ? fixed(*r.tts_cer) : "")
       << '\n';
  }
  return os.str();
}

std::string ForgettingReport::to_text() const {
  std::ostringstream os;
  os << "Text accuracy and TTS intelligibility by model\n"
     << "(TTS CER is measured with the oracle transcriber; it is not a perceptual MOS score.)\n\n";
  os << std::left << std::setw(12) << "model" << std::right << std::setw(10) << "text acc" << std::setw(10)
     << "TTS CER" << "  source\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(12) << r.name << std::right << std::setw(9) << fixed(r.text_accuracy) << '%'
       << std::setw(9) << (r.tts_cer ? fixed(*r.tts_cer) + "%" : "-") << ' ' << "  " << r.source << '\n';
  }
  os << "\nChecks:\n";
  for (const auto& c : checks) os << "  [" << (c.pass ? "pass" : "FAIL") << "] " << c.description << '\n';
  os << "\nReference pattern at full scale (MMLU accuracy, %): base 67.1 / TTS 27.2 / text expert 56.7 / "
        "MoLE 54.8.\nOnly the ordering is comparable; the toy task's absolute numbers are not.\n";
  return os.str();
}

}  // namespace mslb::eval
