// SPDX-License-Identifier: Apache-2.0
#include "mslb/cli/cli.h"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "mslb/codec/wav.h"
#include "mslb/error.h"
#include "mslb/eval/evalkit.h"
#include "mslb/pipeline/datasets.h"
#include "mslb/pipeline/inference.h"
#include "mslb/pipeline/metrics.h"

namespace mslb::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mslb::pipeline;

namespace {

struct Options {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::string preset = "desk";
  // command-specific
  std::string text;
  std::string question;
  std::string model = "auto";
  std::string kinds = "all";
  int n_samples = 0;
  int n_heldout = 50;
};

/// Exclusive advisory lock on <out>/.lock, released when the process exits
/// or the object is destroyed.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) {
    const auto path = (dir / ".lock").string();
    fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) throw DependencyError("cannot open lock file " + path);
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      fd_ = -1;
      throw DependencyError("another process is using " + dir.string() + " (lock held on " + path + ")");
    }
  }
  ~RunLock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  int fd_ = -1;
};

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw ConfigError("cannot read " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot write " + tmp.string());
    f << text;
  }
  fs::rename(tmp, p);
}

Config load_config(const Options& o) {
  Config cfg = o.config_path.empty() ? desk_config() : parse_config(read_file(o.config_path));
  if (o.seed) cfg.seed = *o.seed;
  return cfg;
}

class Run {
 public:
  Run(const Options& o, std::ostream& err) : opts_(o), err_(err), cfg_(load_config(o)), dir_(o.out_dir) {
    fs::create_directories(dir_);
    lock_.emplace(dir_);
  }

  const Config& cfg() const { return cfg_; }
  fs::path path(const std::string& name) const { return dir_ / name; }

  ProgressFn progress() {
    log_ = std::make_unique<MetricsLog>(path("metrics.jsonl"));
    return [this](const ProgressRecord& r) {
      log_->write(r);
      err_ << "[stage " << r.stage << ' ' << r.phase << "] step " << r.step.step << " loss " << r.step.loss
           << " lr " << r.step.lr << '\n';
    };
  }
  MetricsLog& metrics() {
    if (!log_) log_ = std::make_unique<MetricsLog>(path("metrics.jsonl"));
    return *log_;
  }

  CodecBundle codec() const {
    const auto p = path(kCodecFile);
    if (!fs::exists(p)) throw DependencyError(p.string() + " not found (run fit-codec first)");
    return codec_from_checkpoint(cfg_, checked(load_checkpoint(p)));
  }
  LmBundle stage(int id) const {
    static const char* kCommand[] = {"pretrain", "stage1", "stage2", "stage3"};
    const auto p = path(stage_file(id));
    if (!fs::exists(p)) throw DependencyError(p.string() + " not found (run " + kCommand[id] + " first)");
    return lm_from_checkpoint(cfg_, checked(load_checkpoint(p)));
  }
  bool has_stage(int id) const { return fs::exists(path(stage_file(id))); }

  void save(const std::string& name, const Checkpoint& ck) {
    save_checkpoint(path(name), ck);
    err_ << "wrote " << path(name).string() << '\n';
  }

 private:
  Checkpoint checked(Checkpoint ck) const {
    if (ck.config_json != to_json(cfg_, -1)) {
      err_ << "warning: checkpoint was written under a different config\n";
    }
    return ck;
  }

  Options opts_;
  std::ostream& err_;
  Config cfg_;
  fs::path dir_;
  std::optional<RunLock> lock_;
  std::unique_ptr<MetricsLog> log_;
};

// ---------------------------------------------------------------------------

json sample_json(const lm::Sample& s) { return {{"prompt", s.prompt}, {"target", s.target}, {"task", s.task}}; }

int cmd_gen_data(const Options& o, std::ostream& err) {
  Run run(o, err);
  std::vector<DatasetKind> kinds;
  if (o.kinds == "all") {
    kinds = {DatasetKind::kTts, DatasetKind::kTextQa, DatasetKind::kSpeechQa};
  } else {
    std::stringstream ss(o.kinds);
    for (std::string k; std::getline(ss, k, ',');) kinds.push_back(parse_dataset_kind(k));
  }
  std::optional<CodecBundle> codec;
  for (auto k : kinds) {
    if (k != DatasetKind::kTextQa && !codec) codec = run.codec();
  }
  fs::create_directories(run.path("data"));
  const int n = o.n_samples > 0 ? o.n_samples : run.cfg().stage(1).n_samples;
  for (auto k : kinds) {
    const auto data = build_dataset(k, n, run.cfg().seed, run.cfg().full_vocab(), codec ? &codec->semantic : nullptr);
    std::string text;
    for (const auto& s : data) text += sample_json(s).dump() + "\n";
    const auto p = run.path("data") / (dataset_kind_name(k) + ".jsonl");
    write_file(p, text);
    err << "wrote " << data.size() << " samples to " << p.string() << '\n';
  }
  return 0;
}

int cmd_fit_codec(const Options& o, std::ostream& err) {
  Run run(o, err);
  CodecFitReport rep;
  const CodecBundle b = fit_codec(run.cfg(), run.progress(), &rep);
  run.save(kCodecFile, codec_checkpoint(run.cfg(), b));
  run.metrics().write(-1, "codec", {{"kmeans_objective", rep.kmeans_objective.back()},
                                    {"ae_mse", rep.acoustic.ae_mse},
                                    {"finetune_mse", rep.acoustic.finetune_mse}});
  return 0;
}

int cmd_pretrain(const Options& o, std::ostream& err) {
  Run run(o, err);
  LmBundle b;
  b.lm = run_stage0(run.cfg(), run.progress());
  run.save(stage_file(0), lm_checkpoint(run.cfg(), b));
  return 0;
}

int cmd_stage1(const Options& o, std::ostream& err) {
  Run run(o, err);
  const LmBundle base = run.stage(0);
  const CodecBundle codec = run.codec();
  run.save(stage_file(1), lm_checkpoint(run.cfg(), run_stage1(run.cfg(), base.lm, codec.semantic, run.progress())));
  return 0;
}

int cmd_stage2(const Options& o, std::ostream& err) {
  Run run(o, err);
  const LmBundle prev = run.stage(1);
  const CodecBundle codec = run.codec();
  run.save(stage_file(2), lm_checkpoint(run.cfg(), run_stage2(run.cfg(), prev, codec.semantic, run.progress())));
  return 0;
}

int cmd_stage3(const Options& o, std::ostream& err) {
  Run run(o, err);
  const LmBundle prev = run.stage(2);
  const CodecBundle codec = run.codec();
  run.save(stage_file(3), lm_checkpoint(run.cfg(), run_stage3(run.cfg(), prev, codec.semantic, run.progress())));
  return 0;
}

/// Picks the text-side model for synth/qa. "auto" prefers the mixture, then
/// the newest tts expert.
struct Chosen {
  LmBundle bundle;
  std::optional<mole::MoleModel<float>> mole;
  std::string expert;
  std::string label;
  ModelView view() const {
    return mole ? ModelView::mixture(*mole) : ModelView::with_expert(bundle.lm, bundle.expert(expert));
  }
};

Chosen choose(const Run& run, const std::string& model, const std::string& auto_expert) {
  Chosen c;
  if (model == "mole" || (model == "auto" && run.has_stage(3) && auto_expert == "tts")) {
    c.bundle = run.stage(3);
    c.mole = c.bundle.mole(run.cfg().mole.experts, run.cfg().mole.hard_routing);
    c.label = "mole (" + stage_file(3) + ")";
    return c;
  }
  const std::string name = model == "auto" ? auto_expert : model;
  for (int s = 3; s >= 1; --s) {
    if (!run.has_stage(s)) continue;
    LmBundle b = run.stage(s);
    if (b.has_expert(name)) {
      c.bundle = std::move(b);
      c.expert = name;
      c.label = "expert " + name + " (" + stage_file(s) + ")";
      return c;
    }
  }
  throw DependencyError("no checkpoint provides expert '" + name + "'");
}

int cmd_synth(const Options& o, std::ostream& err) {
  Run run(o, err);
  const CodecBundle codec = run.codec();
  const Chosen m = choose(run, o.model, "tts");
  const auto wav = synthesize(m.view(), codec, o.text);
  codec::write_wav(run.path("out.wav"), wav);
  err << "synthesized '" << o.text << "' with " << m.label << " -> " << run.path("out.wav").string()
      << " (oracle hears '" << eval::transcribe_padded(wav) << "')\n";
  return 0;
}

int cmd_qa(const Options& o, std::ostream& err) {
  Run run(o, err);
  const CodecBundle codec = run.codec();
  const Chosen m = choose(run, o.model, "speech_qa");
  const auto r = speech_qa_infer(m.view(), codec, o.question);
  json j = {{"question", o.question}, {"answer", r.answer}, {"layout_ok", r.layout_ok}, {"tokens", r.tokens}};
  if (r.format_error) j["format_error"] = *r.format_error;
  if (r.waveform) {
    codec::write_wav(run.path("qa.wav"), *r.waveform);
    j["transcript"] = eval::transcribe_padded(*r.waveform);
  }
  write_file(run.path("qa.json"), j.dump(2) + "\n");
  err << "answer '" << r.answer << "'" << (r.format_error ? " (format error: " + *r.format_error + ")" : "") << '\n';
  return 0;
}

int cmd_eval(const Options& o, std::ostream& err) {
  Run run(o, err);
  const Config& cfg = run.cfg();
  const CodecBundle codec = run.codec();
  const LmBundle s0 = run.stage(0), s1 = run.stage(1), s2 = run.stage(2), s3 = run.stage(3);
  const auto mole = s3.mole(cfg.mole.experts, cfg.mole.hard_routing);
  const auto questions = qa_questions();
  const auto strings = heldout_strings(o.n_heldout, cfg.seed);

  std::vector<eval::ReportInput> inputs = {
      {"base_lm", stage_file(0), ModelView::base(s0.lm), false},
      {"tts_expert", stage_file(1), ModelView::with_expert(s1.lm, s1.expert("tts")), true},
      {"text_expert", stage_file(2), ModelView::with_expert(s2.lm, s2.expert("text")), false},
      {"mole", stage_file(3), ModelView::mixture(mole), true},
  };
  const auto rep = eval::forgetting_report(inputs, questions, strings, codec);
  json j;
  for (const auto& r : rep.rows) {
    json row = {{"name", r.name}, {"source", r.source}, {"text_accuracy", r.text_accuracy}};
    if (r.tts_cer) row["tts_cer"] = *r.tts_cer;
    j["rows"].push_back(row);
  }
  for (const auto& c : rep.checks) j["checks"].push_back({{"description", c.description}, {"pass", c.pass}});

  if (s2.has_expert("speech_qa")) {
    const auto view = ModelView::with_expert(s2.lm, s2.expert("speech_qa"));
    int layout = 0, matched = 0;
    for (const auto& q : questions) {
      const auto r = speech_qa_infer(view, codec, q);
      layout += r.layout_ok;
      const std::string want(1, qa_answer(q));
      matched += r.layout_ok && r.answer == want && r.waveform && eval::transcribe_padded(*r.waveform) == want;
    }
    j["speech_qa"] = {{"layout_ok_pct", 100.0 * layout / questions.size()},
                      {"answer_and_audio_match_pct", 100.0 * matched / questions.size()}};
  }

  codec::Waveform ref, rec;
  for (const auto& s : strings) {
    const auto w = codec::render(s);
    const auto r = codec::vocoder_decode(codec::acoustic_encode(w, codec.acoustic), codec.acoustic);
    ref.samples.insert(ref.samples.end(), w.samples.begin(), w.samples.end());
    rec.samples.insert(rec.samples.end(), r.samples.begin(), r.samples.end());
  }
  j["codec_snr_db"] = eval::codec_snr(ref, rec);
  write_file(run.path("eval.json"), j.dump(2) + "\n");
  run.metrics().write(4, "eval", {{"codec_snr_db", j["codec_snr_db"].get<double>()}});
  err << rep.to_text();
  return 0;
}

int cmd_report(const Options& o, std::ostream& err) {
  Run run(o, err);
  const auto p = run.path("eval.json");
  if (!fs::exists(p)) throw DependencyError(p.string() + " not found (run eval first)");
  const json j = json::parse(read_file(p));
  eval::ForgettingReport rep;
  for (const auto& r : j.at("rows")) {
    eval::ReportRow row{r.at("name"), r.at("source"), r.at("text_accuracy"), std::nullopt};
    if (r.contains("tts_cer")) row.tts_cer = r.at("tts_cer").get<double>();
    rep.rows.push_back(row);
  }
  rep.checks = eval::forgetting_checks(rep.rows);
  std::string text = rep.to_text();
  std::ostringstream extra;
  if (j.contains("speech_qa")) {
    extra << "\nSpeech QA (text answer and oracle transcript both correct): "
          << j["speech_qa"]["answer_and_audio_match_pct"].get<double>() << "% of 100; layout valid "
          << j["speech_qa"]["layout_ok_pct"].get<double>() << "%\n";
  }
  extra << "Codec round-trip SNR: " << j.at("codec_snr_db").get<double>() << " dB (waveform SNR, not MOS)\n";
  text += extra.str();
  write_file(run.path("report.csv"), rep.to_csv());
  write_file(run.path("report.txt"), text);
  err << text;
  return 0;
}

int exit_code_for(const Error& e) {
  const auto& k = e.kind();
  if (k == "config" || k == "dependency" || k == "alphabet" || k == "data" || k == "contract") return 1;
  return 2;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Speech/text LoRA-expert pipeline on a synthetic tone domain", "mslb"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.add_option("--config", o.config_path, "config JSON (default: built-in desk config)");
  app.add_option("--out", o.out_dir, "run directory; every output goes here");
  app.add_option("--seed", o.seed, "overrides the config seed");
  app.add_option("--preset", o.preset, "desk or paper (paper prints hyperparameters and exits)")
      ->check(CLI::IsMember({"desk", "paper"}));

  struct Cmd {
    const char* name;
    const char* help;
    int (*fn)(const Options&, std::ostream&);
  };
  const Cmd cmds[] = {
      {"gen-data", "write datasets as JSON lines under <out>/data", cmd_gen_data},
      {"fit-codec", "fit tokenizers, codec, and acoustic LM", cmd_fit_codec},
      {"pretrain", "stage 0: text-only base model", cmd_pretrain},
      {"stage1", "stage 1: extend vocabulary, train the tts expert", cmd_stage1},
      {"stage2", "stage 2: train text (and speech QA) experts", cmd_stage2},
      {"stage3", "stage 3: train the mixture router", cmd_stage3},
      {"synth", "synthesize --text to <out>/out.wav", cmd_synth},
      {"qa", "speech QA for --question; writes qa.json and qa.wav", cmd_qa},
      {"eval", "evaluate every stage; writes eval.json", cmd_eval},
      {"report", "render eval.json as report.csv and report.txt", cmd_report},
  };
  std::map<CLI::App*, const Cmd*> by_app;
  for (const auto& c : cmds) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    by_app[sub] = &c;
    const std::string n = c.name;
    if (n == "synth") sub->add_option("--text", o.text, "text over the tone alphabet")->required();
    if (n == "qa") sub->add_option("--question", o.question, "e.g. 3+4=?")->required();
    if (n == "synth" || n == "qa") sub->add_option("--model", o.model, "auto, mole, or an expert name");
    if (n == "gen-data") {
      sub->add_option("--kinds", o.kinds, "all or a comma list of tts,text_qa,speech_qa");
      sub->add_option("--n", o.n_samples, "samples per generated kind");
    }
    if (n == "eval") sub->add_option("--heldout", o.n_heldout, "held-out TTS strings")->check(CLI::PositiveNumber);
  }

  std::vector<std::string> argv_s = {"mslb"};
  argv_s.insert(argv_s.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_s) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return 1;
  }

  if (o.preset == "paper") {
    out << paper_preset_text();
    err << "paper preset: values printed; nothing trained\n";
    return 0;
  }
  const Cmd* cmd = by_app.at(app.get_subcommands().front());
  if (o.out_dir.empty()) {
    err << "usage error: --out is required\n";
    return 1;
  }
  try {
    return cmd->fn(o, err);
  } catch (const Error& e) {
    err << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace mslb::cli
