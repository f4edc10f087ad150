// SPDX-License-Identifier: Apache-2.0
#include "mslb/pipeline/stages.h"

#include <set>

#include "mslb/pipeline/datasets.h"

namespace mslb::pipeline {

using num::Matrix;

const Expert<float>& LmBundle::expert(const std::string& name) const {
  for (const auto& e : experts) {
    if (e.name() == name) return e;
  }
  throw DependencyError("no expert named '" + name + "' in this checkpoint");
}

bool LmBundle::has_expert(const std::string& name) const {
  for (const auto& e : experts) {
    if (e.name() == name) return true;
  }
  return false;
}

std::vector<num::NamedTensor<float>> LmBundle::named_parameters() const {
  auto out = lm.named_parameters();
  for (const auto& e : experts) {
    auto p = e.named_parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  if (router) {
    auto r = router->named_parameters();
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

mole::MoleModel<float> LmBundle::mole(const std::vector<std::string>& names, bool hard_routing) const {
  if (!router) throw DependencyError("no router in this checkpoint (run stage3)");
  std::vector<Expert<float>> chosen;
  for (const auto& n : names) chosen.push_back(expert(n));
  return mole::MoleModel<float>(lm, std::move(chosen), *router, hard_routing);
}

std::string stage_file(int stage) { return "stage" + std::to_string(stage) + ".mslb"; }

namespace {

lm::TrainOptions train_options(const StageConfig& s, std::uint64_t seed) {
  lm::TrainOptions o;
  o.steps = s.steps;
  o.batch_size = s.batch_size;
  o.opt = s.opt;
  o.seed = seed;
  o.log_every = 100;
  return o;
}

lm::LogFn forward_log(const ProgressFn& on_progress, int stage, const std::string& phase) {
  if (!on_progress) return {};
  return [on_progress, stage, phase](const lm::StepRecord& r) { on_progress(ProgressRecord{stage, phase, r}); };
}

struct Pools {
  std::vector<std::vector<lm::Sample>> data;
  std::vector<double> weights;

  std::vector<const std::vector<lm::Sample>*> ptrs() const {
    std::vector<const std::vector<lm::Sample>*> out;
    for (const auto& d : data) out.push_back(&d);
    return out;
  }
};

Pools build_pools(const StageConfig& s, std::uint64_t seed, const lm::UnifiedVocab& vocab,
                  const codec::SemanticCodebook* cb) {
  Pools p;
  for (const auto& [kind, w] : s.mix) {
    if (w <= 0) continue;
    p.data.push_back(build_dataset(parse_dataset_kind(kind), s.n_samples, seed, vocab, cb));
    p.weights.push_back(w);
  }
  if (p.data.empty()) throw ConfigError("stage " + std::to_string(s.stage) + " has no dataset with positive weight");
  return p;
}

std::vector<num::NamedTensor<float>> concat(std::vector<num::NamedTensor<float>> a,
                                            const std::vector<num::NamedTensor<float>>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

Matrix<float> record_matrix(const Checkpoint& ck, const std::string& name) {
  const Record* r = ck.find(name);
  if (!r) throw FormatError("checkpoint has no record '" + name + "'");
  if (r->rank() != 2) throw FormatError("record '" + name + "' must have rank 2");
  return Eigen::Map<const Matrix<float>>(r->values.data(), static_cast<num::Index>(r->extents[0]),
                                         static_cast<num::Index>(r->extents[1]));
}

void put_matrix(Checkpoint& ck, const std::string& name, const Matrix<float>& m, int rank = 2) {
  Record r;
  r.name = name;
  if (rank == 1) {
    r.extents = {static_cast<std::uint64_t>(m.size())};
  } else {
    r.extents = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  }
  r.values.assign(m.data(), m.data() + m.size());
  ck.records.push_back(std::move(r));
}

}  // namespace

CodecBundle fit_codec(const Config& cfg, const ProgressFn& on_progress, CodecFitReport* report) {
  num::Rng rng = num::Rng(cfg.seed).fork(0x636f646563ULL);
  num::Rng corpus_rng = rng.fork(1);
  const Matrix<float> frames = codec::toy_frame_corpus(cfg.codec.corpus_strings, cfg.codec.silence_frames,
                                                       cfg.codec.noise_sigma, corpus_rng);
  num::Rng km_rng = rng.fork(2);
  auto fit = codec::fit_semantic_codebook(codec::frame_spectra(frames), cfg.codec.semantic_k, cfg.codec.kmeans_iters,
                                          km_rng);
  CodecBundle b;
  b.semantic.centroids = fit.codebook.centroids.cast<float>().cast<double>();
  CodecFitReport rep;
  rep.kmeans_objective = fit.objective;
  b.acoustic = codec::fit_acoustic_codec(frames, cfg.codec.acoustic, &rep.acoustic);

  std::vector<aclm::AcousticPair> pairs;
  num::Rng pair_rng = rng.fork(3);
  for (int i = 0; i < cfg.acoustic_lm.n_pairs; ++i) {
    const auto w = codec::render(codec::random_symbol_string(pair_rng, 3, 12));
    pairs.push_back({codec::semantic_encode(w, b.semantic, cfg.n_text), codec::acoustic_encode(w, b.acoustic)});
  }
  aclm::AcousticTrainOptions opts;
  opts.steps = cfg.acoustic_lm.steps;
  opts.batch_size = cfg.acoustic_lm.batch_size;
  opts.opt.lr_max = cfg.acoustic_lm.lr;
  opts.seed = rng.fork(4).seed();
  aclm::AcousticLogFn log;
  if (on_progress) {
    log = [&on_progress](std::int64_t step, double loss, double lr) {
      on_progress(ProgressRecord{-1, "acoustic_lm", lm::StepRecord{step, loss, lr, 0.0}});
    };
  }
  b.aclm = aclm::train_acoustic_lm(pairs, cfg.acoustic_lm.model, opts, log);
  if (report) *report = rep;
  return b;
}

LanguageModel<float> run_stage0(const Config& cfg, const ProgressFn& on_progress) {
  const StageConfig& s = cfg.stage(0);
  const std::uint64_t seed = cfg.stage_seed(0);
  const Pools pools = build_pools(s, seed, cfg.text_vocab(), nullptr);
  num::Rng rng = num::Rng(seed).fork(1);
  LanguageModel<float> model = LanguageModel<float>::init(cfg.lm, rng);
  lm::BatchSampler sampler(pools.ptrs(), pools.weights, num::Rng(seed).fork(2).seed());
  auto loss_fn = [&model](const std::vector<const lm::Sample*>& b) { return lm::lm_loss(model, b); };
  lm::train_loop(loss_fn, model.named_parameters(), sampler, train_options(s, seed), forward_log(on_progress, 0, "base"));
  return model;
}

LmBundle run_stage1(const Config& cfg, const LanguageModel<float>& base, const codec::SemanticCodebook& cb,
                    const ProgressFn& on_progress) {
  if (base.vocab().n_semantic() != 0) throw DependencyError("stage 1 expects a text-only base model (stage 0 output)");
  const StageConfig& s = cfg.stage(1);
  const std::uint64_t seed = cfg.stage_seed(1);
  num::Rng rng(seed);
  num::Rng ext_rng = rng.fork(1);
  num::Rng lora_rng = rng.fork(2);
  LmBundle out;
  out.lm = base.extend_vocabulary(cfg.n_semantic, cfg.lm.init_scale, ext_rng);
  out.experts.push_back(lora::inject_lora(out.lm, "tts", cfg.lora.rank, cfg.lora.alpha, lora_rng));
  const Pools pools = build_pools(s, seed, out.lm.vocab(), &cb);
  const auto trainable = lora::apply_policy(out.named_parameters(), lora::TrainablePolicy::stage1("tts"));
  lora::ExpertHook<float> hook(out.experts[0]);
  lm::BatchSampler sampler(pools.ptrs(), pools.weights, rng.fork(3).seed());
  auto loss_fn = [&](const std::vector<const lm::Sample*>& b) { return lm::lm_loss(out.lm, b, &hook); };
  lm::train_loop(loss_fn, trainable, sampler, train_options(s, seed), forward_log(on_progress, 1, "tts"));
  return out;
}

LmBundle run_stage2(const Config& cfg, const LmBundle& stage1, const codec::SemanticCodebook& cb,
                    const ProgressFn& on_progress) {
  if (!stage1.has_expert("tts")) throw DependencyError("stage 2 needs the stage-1 tts expert");
  const StageConfig& s = cfg.stage(2);
  const std::uint64_t seed = cfg.stage_seed(2);
  LmBundle out;
  out.lm = stage1.lm.clone();
  for (const auto& e : stage1.experts) out.experts.push_back(e.clone());
  num::Rng rng(seed);
  std::uint64_t idx = 0;
  for (const auto& name : s.experts) {
    ++idx;
    if (out.has_expert(name)) throw ConfigError("stage 2 expert '" + name + "' already exists");
    num::Rng erng = rng.fork(idx);
    num::Rng init_rng = erng.fork(1);
    Expert<float> e = s.continue_from_tts ? out.expert("tts").clone(name)
                                          : lora::inject_lora(out.lm, name, cfg.lora.rank, cfg.lora.alpha, init_rng);
    Pools pools;
    if (name == "speech_qa") {
      pools.data.push_back(build_dataset(DatasetKind::kSpeechQa, s.n_samples, seed, out.lm.vocab(), &cb));
      pools.weights.push_back(1.0);
    } else {
      pools = build_pools(s, seed, out.lm.vocab(), &cb);
    }
    const auto trainable =
        lora::apply_policy(concat(out.lm.named_parameters(), e.named_parameters()), lora::TrainablePolicy::stage2({name}));
    lora::ExpertHook<float> hook(e);
    lm::BatchSampler sampler(pools.ptrs(), pools.weights, erng.fork(2).seed());
    auto loss_fn = [&](const std::vector<const lm::Sample*>& b) { return lm::lm_loss(out.lm, b, &hook); };
    lm::train_loop(loss_fn, trainable, sampler, train_options(s, erng.fork(3).seed()),
                   forward_log(on_progress, 2, name));
    out.experts.push_back(std::move(e));
  }
  return out;
}

LmBundle run_stage3(const Config& cfg, const LmBundle& stage2, const codec::SemanticCodebook& cb,
                    const ProgressFn& on_progress) {
  for (const auto& n : cfg.mole.experts) {
    if (!stage2.has_expert(n)) throw DependencyError("stage 3 needs expert '" + n + "' (run stage2)");
  }
  const StageConfig& s = cfg.stage(3);
  const std::uint64_t seed = cfg.stage_seed(3);
  num::Rng rng(seed);
  num::Rng router_rng = rng.fork(1);
  LmBundle out;
  out.lm = stage2.lm.clone();
  for (const auto& e : stage2.experts) out.experts.push_back(e.clone());
  out.router = mole::Router<float>::init(cfg.lm.d_model, cfg.mole.router_hidden,
                                         static_cast<int>(cfg.mole.experts.size()), router_rng);
  mole::MoleModel<float> model = out.mole(cfg.mole.experts, false);
  const Pools pools = build_pools(s, seed, out.lm.vocab(), &cb);
  lm::TrainOptions opts = train_options(s, rng.fork(2).seed());
  mole::train_router(model, pools.ptrs(), pools.weights, opts, forward_log(on_progress, 3, "router"));
  out.router = model.router();
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint conversion

Checkpoint codec_checkpoint(const Config& cfg, const CodecBundle& b) {
  Checkpoint ck;
  ck.config_json = to_json(cfg, -1);
  put_matrix(ck, "codec/semantic", b.semantic.centroids.cast<float>());
  put_matrix(ck, "codec/enc_w", b.acoustic.enc_w);
  put_matrix(ck, "codec/enc_b", b.acoustic.enc_b, 1);
  put_matrix(ck, "codec/dec_w", b.acoustic.dec_w);
  put_matrix(ck, "codec/dec_b", b.acoustic.dec_b, 1);
  for (int s = 0; s < b.acoustic.rvq.num_stages(); ++s) {
    put_matrix(ck, "codec/rvq." + std::to_string(s), b.acoustic.rvq.stages[s]);
  }
  auto recs = to_records(b.aclm.named_parameters());
  ck.records.insert(ck.records.end(), recs.begin(), recs.end());
  return ck;
}

CodecBundle codec_from_checkpoint(const Config& cfg, const Checkpoint& ck) {
  CodecBundle b;
  b.semantic.centroids = record_matrix(ck, "codec/semantic").cast<double>();
  if (b.semantic.size() != cfg.codec.semantic_k || b.semantic.centroids.cols() != codec::kNumBins) {
    throw FormatError("record 'codec/semantic' does not match codec.semantic_k");
  }
  auto vec = [&](const std::string& n) {
    const Record* r = ck.find(n);
    if (!r || r->rank() != 1) throw FormatError("checkpoint has no rank-1 record '" + n + "'");
    return Matrix<float>(Eigen::Map<const Matrix<float>>(r->values.data(), 1, static_cast<num::Index>(r->values.size())));
  };
  b.acoustic.enc_w = record_matrix(ck, "codec/enc_w");
  b.acoustic.enc_b = vec("codec/enc_b");
  b.acoustic.dec_w = record_matrix(ck, "codec/dec_w");
  b.acoustic.dec_b = vec("codec/dec_b");
  const auto& ac = cfg.codec.acoustic;
  if (b.acoustic.enc_w.rows() != ac.d_lat || b.acoustic.enc_w.cols() != codec::kFrameLength ||
      b.acoustic.dec_w.rows() != codec::kFrameLength || b.acoustic.dec_w.cols() != ac.d_lat ||
      b.acoustic.enc_b.cols() != ac.d_lat || b.acoustic.dec_b.cols() != codec::kFrameLength) {
    throw FormatError("codec autoencoder records do not match codec.d_lat");
  }
  for (int s = 0; s < ac.stages; ++s) {
    const std::string n = "codec/rvq." + std::to_string(s);
    Matrix<float> m = record_matrix(ck, n);
    if (m.rows() != ac.entries || m.cols() != ac.d_lat) throw FormatError("record '" + n + "' has the wrong shape");
    b.acoustic.rvq.stages.push_back(std::move(m));
  }
  b.aclm = aclm::AcousticLm::zeros(cfg.acoustic_lm.model);
  assign_parameters(ck, b.aclm.named_parameters());
  return b;
}

Checkpoint lm_checkpoint(const Config& cfg, const LmBundle& bundle) {
  Checkpoint ck;
  ck.config_json = to_json(cfg, -1);
  ck.records = to_records(bundle.named_parameters());
  return ck;
}

LmBundle lm_from_checkpoint(const Config& cfg, const Checkpoint& ck) {
  const Record* emb = ck.find("lm/tok_embed");
  if (!emb || emb->rank() != 2) throw FormatError("checkpoint has no 'lm/tok_embed' record");
  lm::LmConfig lc = cfg.lm;
  const auto rows = static_cast<int>(emb->extents[0]);
  if (rows == cfg.n_text) {
    lc.vocab = cfg.text_vocab();
  } else if (rows == cfg.n_text + cfg.n_semantic) {
    lc.vocab = cfg.full_vocab();
  } else {
    throw FormatError("record 'lm/tok_embed' has " + std::to_string(rows) + " rows; config expects " +
                      std::to_string(cfg.n_text) + " or " + std::to_string(cfg.n_text + cfg.n_semantic));
  }
  LmBundle b;
  b.lm = LanguageModel<float>::zeros(lc);
  assign_parameters(ck, b.lm.named_parameters());

  std::vector<std::string> names;
  std::set<std::string> seen;
  for (const auto& r : ck.records) {
    if (r.name.rfind("experts/", 0) != 0) continue;
    const auto slash = r.name.find('/', 8);
    if (slash == std::string::npos) throw FormatError("malformed expert record '" + r.name + "'");
    const std::string n = r.name.substr(8, slash - 8);
    if (seen.insert(n).second) names.push_back(n);
  }
  for (const auto& n : names) {
    num::Rng dummy(0);
    Expert<float> e = lora::inject_lora(b.lm, n, cfg.lora.rank, cfg.lora.alpha, dummy);
    assign_parameters(ck, e.named_parameters());
    b.experts.push_back(std::move(e));
  }
  if (ck.find("router/w1")) {
    num::Rng dummy(0);
    auto r = mole::Router<float>::init(cfg.lm.d_model, cfg.mole.router_hidden,
                                       static_cast<int>(cfg.mole.experts.size()), dummy);
    assign_parameters(ck, r.named_parameters());
    b.router = std::move(r);
  }
  return b;
}

}  // namespace mslb::pipeline
