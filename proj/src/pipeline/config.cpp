// SPDX-License-Identifier: Apache-2.0
#include "mslb/pipeline/config.h"

#include <json.hpp>

#include <set>
#include <sstream>

#include "mslb/numerics/rng.h"

namespace mslb::pipeline {

using nlohmann::json;

const StageConfig& Config::stage(int id) const {
  for (const auto& s : stages) {
    if (s.stage == id) return s;
  }
  throw ConfigError("no stage " + std::to_string(id) + " in config");
}

std::uint64_t Config::stage_seed(int id) const {
  return num::Rng(seed).fork(0x5354414745ULL + static_cast<std::uint64_t>(id)).fork(stage(id).seed).seed();
}

Config desk_config() {
  Config c;
  c.lm.vocab = c.text_vocab();
  c.acoustic_lm.model.semantic_offset = c.n_text;
  c.acoustic_lm.model.n_semantic = c.n_semantic;

  StageConfig s0;
  s0.stage = 0;
  s0.mix = {{"text_qa", 1.0}};
  s0.steps = 2000;
  s0.opt.lr_max = 3e-4;
  s0.seed = 0;
  s0.n_samples = 100;

  StageConfig s1;
  s1.stage = 1;
  s1.mix = {{"tts", 1.0}};
  s1.steps = 5000;
  s1.opt.lr_max = 1e-3;
  s1.seed = 1;
  s1.n_samples = 4000;

  StageConfig s2;
  s2.stage = 2;
  s2.mix = {{"text_qa", 1.0}};
  s2.steps = 2000;
  s2.opt.lr_max = 2e-3;
  s2.seed = 2;
  s2.n_samples = 100;
  s2.experts = {"text", "speech_qa"};

  StageConfig s3;
  s3.stage = 3;
  s3.mix = {{"text_qa", 0.5}, {"tts", 0.5}};
  s3.steps = 1000;
  s3.opt.lr_max = 1e-3;
  s3.seed = 3;
  s3.n_samples = 1000;

  c.stages = {s0, s1, s2, s3};
  return c;
}

namespace {

/// Walks a JSON object against the expected schema, recording problems.
class Reader {
 public:
  explicit Reader(std::vector<std::string>& errors) : errors_(errors) {}

  const json* section(const json& parent, const std::string& key, const std::string& path) {
    const std::string p = join(path, key);
    if (!parent.contains(key)) {
      errors_.push_back(p + ": missing");
      return nullptr;
    }
    const json& v = parent.at(key);
    if (!v.is_object()) {
      errors_.push_back(p + ": must be an object");
      return nullptr;
    }
    return &v;
  }

  template <typename T>
  void get(const json* obj, const std::string& key, const std::string& path, T& out) {
    if (!obj) return;
    const std::string p = join(path, key);
    if (!obj->contains(key)) {
      errors_.push_back(p + ": missing");
      return;
    }
    const json& v = obj->at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) return type_error(p, "a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) return type_error(p, "an integer");
      if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) {
        return type_error(p, "a non-negative integer");
      }
      out = v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) return type_error(p, "a number");
      out = v.get<T>();
    } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
      if (!v.is_array()) return type_error(p, "an array of strings");
      out.clear();
      for (const auto& e : v) {
        if (!e.is_string()) return type_error(p, "an array of strings");
        out.push_back(e.get<std::string>());
      }
    } else if constexpr (std::is_same_v<T, std::map<std::string, double>>) {
      if (!v.is_object()) return type_error(p, "an object of numbers");
      out.clear();
      for (const auto& item : v.items()) {
        const std::string k = item.key();
        const json& e = item.value();
        if (!e.is_number()) return type_error(p + "." + k, "a number");
        out[k] = e.get<double>();
      }
    }
  }

  void reject_unknown(const json* obj, const std::string& path, const std::set<std::string>& known) {
    if (!obj) return;
    for (const auto& [k, v] : obj->items()) {
      if (!known.count(k)) errors_.push_back(join(path, k) + ": unknown key");
    }
  }

  void check(bool ok, const std::string& path, const std::string& msg) {
    if (!ok) errors_.push_back(path + ": " + msg);
  }

  static std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
  }

 private:
  void type_error(const std::string& p, const std::string& what) { errors_.push_back(p + ": must be " + what); }
  std::vector<std::string>& errors_;
};

void read_opt(Reader& r, const json* o, const std::string& p, num::AdamWConfig& opt) {
  r.get(o, "lr_max", p, opt.lr_max);
  r.get(o, "lr_min", p, opt.lr_min);
  r.get(o, "beta1", p, opt.beta1);
  r.get(o, "beta2", p, opt.beta2);
  r.get(o, "eps", p, opt.eps);
  r.get(o, "weight_decay", p, opt.weight_decay);
  r.get(o, "clip_norm", p, opt.clip_norm);
  r.reject_unknown(o, p, {"lr_max", "lr_min", "beta1", "beta2", "eps", "weight_decay", "clip_norm"});
  if (!o) return;
  r.check(opt.lr_max > 0, p + ".lr_max", "must be > 0");
  r.check(opt.lr_min >= 0 && opt.lr_min <= opt.lr_max, p + ".lr_min", "must lie in [0, lr_max]");
  r.check(opt.beta1 > 0 && opt.beta1 < 1, p + ".beta1", "must lie in (0, 1)");
  r.check(opt.beta2 > 0 && opt.beta2 < 1, p + ".beta2", "must lie in (0, 1)");
  r.check(opt.eps > 0, p + ".eps", "must be > 0");
  r.check(opt.weight_decay >= 0, p + ".weight_decay", "must be >= 0");
  r.check(opt.clip_norm >= 0, p + ".clip_norm", "must be >= 0");
}

std::vector<std::string> read_config(const json& doc, Config& c) {
  std::vector<std::string> errors;
  Reader r(errors);
  if (!doc.is_object()) return {"config: top level must be an object"};
  r.reject_unknown(&doc, "", {"vocab", "lm", "lora", "mole", "codec", "acoustic_lm", "stages", "seed"});

  const json* v = r.section(doc, "vocab", "");
  r.get(v, "n_text", "vocab", c.n_text);
  r.get(v, "n_semantic", "vocab", c.n_semantic);
  r.reject_unknown(v, "vocab", {"n_text", "n_semantic"});
  if (v) {
    r.check(c.n_text == 64, "vocab.n_text", "must be 64 (fixed text id layout)");
    r.check(c.n_semantic >= 1, "vocab.n_semantic", "must be >= 1");
  }

  const json* l = r.section(doc, "lm", "");
  r.get(l, "d_model", "lm", c.lm.d_model);
  r.get(l, "n_layers", "lm", c.lm.n_layers);
  r.get(l, "n_heads", "lm", c.lm.n_heads);
  r.get(l, "d_ff", "lm", c.lm.d_ff);
  r.get(l, "max_seq_len", "lm", c.lm.max_seq_len);
  r.get(l, "init_scale", "lm", c.lm.init_scale);
  r.reject_unknown(l, "lm", {"d_model", "n_layers", "n_heads", "d_ff", "max_seq_len", "init_scale"});
  if (l) {
    r.check(c.lm.d_model >= 1, "lm.d_model", "must be >= 1");
    r.check(c.lm.n_heads >= 1 && c.lm.d_model % std::max(1, c.lm.n_heads) == 0, "lm.n_heads",
            "must be >= 1 and divide lm.d_model");
    r.check(c.lm.n_layers >= 1, "lm.n_layers", "must be >= 1");
    r.check(c.lm.d_ff >= 1, "lm.d_ff", "must be >= 1");
    // Longest sample: 16-token TTS prompt plus 48 semantic ids and <eos>.
    r.check(c.lm.max_seq_len >= 66, "lm.max_seq_len", "must be >= 66 (longest training sample)");
    r.check(c.lm.init_scale > 0, "lm.init_scale", "must be > 0");
  }
  c.lm.vocab = c.text_vocab();

  const json* lo = r.section(doc, "lora", "");
  r.get(lo, "rank", "lora", c.lora.rank);
  r.get(lo, "alpha", "lora", c.lora.alpha);
  r.reject_unknown(lo, "lora", {"rank", "alpha"});
  if (lo) {
    r.check(c.lora.rank >= 1, "lora.rank", "must be >= 1");
    r.check(c.lora.rank <= c.lm.d_model, "lora.rank", "must not exceed lm.d_model");
    r.check(c.lora.alpha > 0, "lora.alpha", "must be > 0");
  }

  const json* m = r.section(doc, "mole", "");
  r.get(m, "router_hidden", "mole", c.mole.router_hidden);
  r.get(m, "experts", "mole", c.mole.experts);
  r.get(m, "hard_routing", "mole", c.mole.hard_routing);
  r.reject_unknown(m, "mole", {"router_hidden", "experts", "hard_routing"});
  if (m) {
    r.check(c.mole.router_hidden >= 1, "mole.router_hidden", "must be >= 1");
    r.check(c.mole.experts.size() >= 2 && c.mole.experts.size() <= 3, "mole.experts", "must name 2 or 3 experts");
    std::set<std::string> seen;
    for (const auto& e : c.mole.experts) {
      r.check(e == "tts" || e == "text" || e == "speech_qa", "mole.experts", "unknown expert '" + e + "'");
      r.check(seen.insert(e).second, "mole.experts", "duplicate expert '" + e + "'");
    }
  }

  const json* cd = r.section(doc, "codec", "");
  r.get(cd, "semantic_k", "codec", c.codec.semantic_k);
  r.get(cd, "kmeans_iters", "codec", c.codec.kmeans_iters);
  r.get(cd, "corpus_strings", "codec", c.codec.corpus_strings);
  r.get(cd, "silence_frames", "codec", c.codec.silence_frames);
  r.get(cd, "noise_sigma", "codec", c.codec.noise_sigma);
  auto& ac = c.codec.acoustic;
  r.get(cd, "d_lat", "codec", ac.d_lat);
  r.get(cd, "stages", "codec", ac.stages);
  r.get(cd, "entries", "codec", ac.entries);
  r.get(cd, "ae_steps", "codec", ac.ae_steps);
  r.get(cd, "ae_lr", "codec", ac.ae_lr);
  r.get(cd, "batch_size", "codec", ac.batch);
  r.get(cd, "finetune_steps", "codec", ac.finetune_steps);
  r.get(cd, "finetune_lr", "codec", ac.finetune_lr);
  r.get(cd, "seed", "codec", ac.seed);
  ac.kmeans_iters = c.codec.kmeans_iters;
  r.reject_unknown(cd, "codec",
                   {"semantic_k", "kmeans_iters", "corpus_strings", "silence_frames", "noise_sigma", "d_lat", "stages",
                    "entries", "ae_steps", "ae_lr", "batch_size", "finetune_steps", "finetune_lr", "seed"});
  if (cd) {
    r.check(c.codec.semantic_k >= 1, "codec.semantic_k", "must be >= 1");
    r.check(c.codec.semantic_k == c.n_semantic, "codec.semantic_k", "must equal vocab.n_semantic");
    r.check(c.codec.kmeans_iters >= 1, "codec.kmeans_iters", "must be >= 1");
    r.check(c.codec.corpus_strings >= 1, "codec.corpus_strings", "must be >= 1");
    r.check(c.codec.silence_frames >= 0, "codec.silence_frames", "must be >= 0");
    r.check(c.codec.noise_sigma >= 0, "codec.noise_sigma", "must be >= 0");
    r.check(ac.d_lat >= 1 && ac.d_lat <= 64, "codec.d_lat", "must lie in [1, 64]");
    r.check(ac.stages >= 1, "codec.stages", "must be >= 1");
    r.check(ac.entries >= 2, "codec.entries", "must be >= 2");
    r.check(ac.ae_steps >= 0, "codec.ae_steps", "must be >= 0");
    r.check(ac.finetune_steps >= 0, "codec.finetune_steps", "must be >= 0");
    r.check(ac.ae_lr > 0, "codec.ae_lr", "must be > 0");
    r.check(ac.finetune_lr > 0, "codec.finetune_lr", "must be > 0");
    r.check(ac.batch >= 1, "codec.batch_size", "must be >= 1");
  }

  const json* a = r.section(doc, "acoustic_lm", "");
  auto& am = c.acoustic_lm.model;
  r.get(a, "d_model", "acoustic_lm", am.d_model);
  r.get(a, "n_layers", "acoustic_lm", am.n_layers);
  r.get(a, "n_heads", "acoustic_lm", am.n_heads);
  r.get(a, "d_ff", "acoustic_lm", am.d_ff);
  r.get(a, "stages", "acoustic_lm", am.stages);
  r.get(a, "entries", "acoustic_lm", am.entries);
  r.get(a, "max_frames", "acoustic_lm", am.max_frames);
  r.get(a, "init_scale", "acoustic_lm", am.init_scale);
  r.get(a, "steps", "acoustic_lm", c.acoustic_lm.steps);
  r.get(a, "batch_size", "acoustic_lm", c.acoustic_lm.batch_size);
  r.get(a, "lr", "acoustic_lm", c.acoustic_lm.lr);
  r.get(a, "n_pairs", "acoustic_lm", c.acoustic_lm.n_pairs);
  r.reject_unknown(a, "acoustic_lm",
                   {"d_model", "n_layers", "n_heads", "d_ff", "stages", "entries", "max_frames", "init_scale", "steps",
                    "batch_size", "lr", "n_pairs"});
  am.n_semantic = c.n_semantic;
  am.semantic_offset = c.n_text;
  if (a) {
    r.check(am.d_model >= 1 && am.n_heads >= 1 && am.d_model % std::max(1, am.n_heads) == 0, "acoustic_lm.n_heads",
            "must be >= 1 and divide acoustic_lm.d_model");
    r.check(am.n_layers >= 1, "acoustic_lm.n_layers", "must be >= 1");
    r.check(am.d_ff >= 1, "acoustic_lm.d_ff", "must be >= 1");
    r.check(am.stages == ac.stages, "acoustic_lm.stages", "must equal codec.stages");
    r.check(am.entries == ac.entries, "acoustic_lm.entries", "must equal codec.entries");
    r.check(am.max_frames >= 48, "acoustic_lm.max_frames", "must be >= 48 (12 symbols x 4 frames)");
    r.check(am.init_scale > 0, "acoustic_lm.init_scale", "must be > 0");
    r.check(c.acoustic_lm.steps >= 0, "acoustic_lm.steps", "must be >= 0");
    r.check(c.acoustic_lm.batch_size >= 1, "acoustic_lm.batch_size", "must be >= 1");
    r.check(c.acoustic_lm.lr > 0, "acoustic_lm.lr", "must be > 0");
    r.check(c.acoustic_lm.n_pairs >= 1, "acoustic_lm.n_pairs", "must be >= 1");
  }

  if (!doc.contains("seed")) {
    errors.push_back("seed: missing");
  } else if (!doc.at("seed").is_number_unsigned()) {
    errors.push_back("seed: must be a non-negative integer");
  } else {
    c.seed = doc.at("seed").get<std::uint64_t>();
  }

  c.stages.clear();
  if (!doc.contains("stages")) {
    errors.push_back("stages: missing");
  } else if (!doc.at("stages").is_array()) {
    errors.push_back("stages: must be an array");
  } else {
    std::set<int> ids;
    const json& arr = doc.at("stages");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string p = "stages[" + std::to_string(i) + "]";
      if (!arr[i].is_object()) {
        errors.push_back(p + ": must be an object");
        continue;
      }
      const json* o = &arr[i];
      StageConfig s;
      r.get(o, "stage", p, s.stage);
      r.get(o, "mix", p, s.mix);
      r.get(o, "steps", p, s.steps);
      r.get(o, "batch_size", p, s.batch_size);
      r.get(o, "seed", p, s.seed);
      r.get(o, "n_samples", p, s.n_samples);
      r.get(o, "experts", p, s.experts);
      r.get(o, "continue_from_tts", p, s.continue_from_tts);
      const json* opt = r.section(*o, "optimizer", p);
      read_opt(r, opt, p + ".optimizer", s.opt);
      r.reject_unknown(o, p,
                       {"stage", "mix", "steps", "batch_size", "seed", "n_samples", "experts", "continue_from_tts",
                        "optimizer"});
      r.check(s.stage >= 0 && s.stage <= 3, p + ".stage", "must lie in [0, 3]");
      r.check(ids.insert(s.stage).second, p + ".stage", "duplicate stage id");
      r.check(s.steps >= 0, p + ".steps", "must be >= 0");
      r.check(s.batch_size >= 1, p + ".batch_size", "must be >= 1");
      r.check(s.n_samples >= 1, p + ".n_samples", "must be >= 1");
      double total = 0;
      for (const auto& [kind, w] : s.mix) {
        r.check(kind == "tts" || kind == "text_qa" || kind == "speech_qa", p + ".mix." + kind, "unknown dataset kind");
        r.check(w >= 0, p + ".mix." + kind, "must be >= 0");
        total += w;
      }
      r.check(total > 0, p + ".mix", "weights must sum to > 0");
      if (s.stage == 2) {
        r.check(!s.experts.empty(), p + ".experts", "stage 2 must train at least one expert");
        for (const auto& e : s.experts) {
          r.check(e == "text" || e == "speech_qa", p + ".experts", "unknown stage-2 expert '" + e + "'");
        }
      }
      if (s.stage == 3) {
        r.check(s.mix.count("tts") && s.mix.count("text_qa"), p + ".mix", "stage 3 needs both tts and text_qa data");
      }
      c.stages.push_back(s);
    }
    for (int id = 0; id <= 3; ++id) {
      if (!ids.count(id)) errors.push_back("stages: stage " + std::to_string(id) + " missing");
    }
  }
  return errors;
}

json opt_json(const num::AdamWConfig& o) {
  return {{"lr_max", o.lr_max}, {"lr_min", o.lr_min},           {"beta1", o.beta1},        {"beta2", o.beta2},
          {"eps", o.eps},       {"weight_decay", o.weight_decay}, {"clip_norm", o.clip_norm}};
}

}  // namespace

std::vector<std::string> validate_config_text(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    return {std::string("config: invalid JSON: ") + e.what()};
  }
  Config c;
  return read_config(doc, c);
}

Config parse_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  Config c;
  const auto errors = read_config(doc, c);
  if (!errors.empty()) {
    std::ostringstream os;
    os << errors.size() << " problem(s):";
    for (const auto& e : errors) os << "\n  " << e;
    throw ConfigError(os.str());
  }
  return c;
}

std::string to_json(const Config& c, int indent) {
  json stages = json::array();
  for (const auto& s : c.stages) {
    stages.push_back({{"stage", s.stage},
                      {"mix", s.mix},
                      {"steps", s.steps},
                      {"batch_size", s.batch_size},
                      {"seed", s.seed},
                      {"n_samples", s.n_samples},
                      {"experts", s.experts},
                      {"continue_from_tts", s.continue_from_tts},
                      {"optimizer", opt_json(s.opt)}});
  }
  const auto& ac = c.codec.acoustic;
  const auto& am = c.acoustic_lm.model;
  json doc = {
      {"vocab", {{"n_text", c.n_text}, {"n_semantic", c.n_semantic}}},
      {"lm",
       {{"d_model", c.lm.d_model},
        {"n_layers", c.lm.n_layers},
        {"n_heads", c.lm.n_heads},
        {"d_ff", c.lm.d_ff},
        {"max_seq_len", c.lm.max_seq_len},
        {"init_scale", c.lm.init_scale}}},
      {"lora", {{"rank", c.lora.rank}, {"alpha", c.lora.alpha}}},
      {"mole",
       {{"router_hidden", c.mole.router_hidden}, {"experts", c.mole.experts}, {"hard_routing", c.mole.hard_routing}}},
      {"codec",
       {{"semantic_k", c.codec.semantic_k},
        {"kmeans_iters", c.codec.kmeans_iters},
        {"corpus_strings", c.codec.corpus_strings},
        {"silence_frames", c.codec.silence_frames},
        {"noise_sigma", c.codec.noise_sigma},
        {"d_lat", ac.d_lat},
        {"stages", ac.stages},
        {"entries", ac.entries},
        {"ae_steps", ac.ae_steps},
        {"ae_lr", ac.ae_lr},
        {"batch_size", ac.batch},
        {"finetune_steps", ac.finetune_steps},
        {"finetune_lr", ac.finetune_lr},
        {"seed", ac.seed}}},
      {"acoustic_lm",
       {{"d_model", am.d_model},
        {"n_layers", am.n_layers},
        {"n_heads", am.n_heads},
        {"d_ff", am.d_ff},
        {"stages", am.stages},
        {"entries", am.entries},
        {"max_frames", am.max_frames},
        {"init_scale", am.init_scale},
        {"steps", c.acoustic_lm.steps},
        {"batch_size", c.acoustic_lm.batch_size},
        {"lr", c.acoustic_lm.lr},
        {"n_pairs", c.acoustic_lm.n_pairs}}},
      {"stages", stages},
      {"seed", c.seed},
  };
  return doc.dump(indent);
}

std::string paper_preset_text() {
  return "paper-scale hyperparameters (reference only; this preset does not train):\n"
         "  base model               Llama3-8B-Instruct\n"
         "  LoRA rank                128\n"
         "  LoRA alpha               64\n"
         "  semantic vocabulary      4096 tokens\n"
         "  optimizer                AdamW, beta1 0.9, beta2 0.98\n"
         "  learning rate            3e-4 (1e-4 for the stage-3 router), cosine schedule\n"
         "  batch size               256\n"
         "  sequence length          2048\n"
         "  training steps           20000\n"
         "  acoustic tokenizer       convolutional autoencoder with residual vector quantizer\n"
         "  system prompts\n"
         "    tts:       " + std::string(lm::system_prompt_text(lm::Control::kSysTts)) + "\n" +
         "    text QA:   " + std::string(lm::system_prompt_text(lm::Control::kSysQa)) + "\n" +
         "    speech QA: " + std::string(lm::system_prompt_text(lm::Control::kSysSqa)) + "\n";
}

}  // namespace mslb::pipeline
