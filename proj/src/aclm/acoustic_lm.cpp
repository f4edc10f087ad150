// SPDX-License-Identifier: Apache-2.0
#include "mslb/aclm/acoustic_lm.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mslb/lm/generate.h"
#include "mslb/lm/vocab.h"
#include "mslb/numerics/ops.h"

namespace mslb::aclm {

using num::Matrix;
using num::Segment;

DelayedGrid apply_delay(const AcousticTokenGrid& grid, int pad) {
  if (grid.stages < 1 || grid.frames < 0 ||
      grid.codes.size() != static_cast<std::size_t>(grid.stages) * static_cast<std::size_t>(grid.frames)) {
    throw ShapeError("acoustic grid is not rectangular");
  }
  DelayedGrid d;
  d.stages = grid.stages;
  d.steps = grid.frames + grid.stages - 1;
  d.pad = pad;
  d.codes.assign(static_cast<std::size_t>(d.stages) * d.steps, pad);
  for (int s = 0; s < grid.stages; ++s) {
    for (int t = 0; t < grid.frames; ++t) d.at(s, t + s) = grid.at(s, t);
  }
  return d;
}

AcousticTokenGrid invert_delay(const DelayedGrid& d) {
  if (d.stages < 1 || d.steps < d.stages - 1 ||
      d.codes.size() != static_cast<std::size_t>(d.stages) * static_cast<std::size_t>(d.steps)) {
    throw FormatError("delayed grid has inconsistent extents");
  }
  const int frames = d.steps - d.stages + 1;
  AcousticTokenGrid g(d.stages, frames);
  for (int s = 0; s < d.stages; ++s) {
    for (int t = 0; t < d.steps; ++t) {
      const bool inside = t >= s && t < s + frames;
      const int v = d.at(s, t);
      if (inside && v == d.pad) {
        throw FormatError("PAD inside codebook " + std::to_string(s) + " window at step " + std::to_string(t));
      }
      if (!inside && v != d.pad) {
        throw FormatError("non-PAD margin cell at codebook " + std::to_string(s) + ", step " + std::to_string(t));
      }
      if (inside) g.at(s, t - s) = v;
    }
  }
  return g;
}

void AcousticLmConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) throw ConfigError("acoustic_lm.d_model must be divisible by n_heads");
  if (n_layers < 1 || d_ff < 1) throw ConfigError("acoustic_lm.n_layers and d_ff must be >= 1");
  if (stages < 1 || entries < 2) throw ConfigError("acoustic_lm.stages >= 1 and entries >= 2 required");
  if (n_semantic < 1 || semantic_offset < 0) throw ConfigError("acoustic_lm semantic range is invalid");
  if (max_frames < 1) throw ConfigError("acoustic_lm.max_frames must be >= 1");
  if (!(init_scale > 0)) throw ConfigError("acoustic_lm.init_scale must be > 0");
}

AcousticLm AcousticLm::init(const AcousticLmConfig& cfg, num::Rng& rng) {
  cfg.validate();
  AcousticLm m;
  m.cfg_ = cfg;
  num::Rng r_emb = rng.fork(1);
  num::Rng r_stack = rng.fork(2);
  num::Rng r_head = rng.fork(3);
  m.sem_embed_ = lm::gaussian_init<float>(cfg.n_semantic, cfg.d_model, cfg.init_scale, r_emb);
  m.code_embed_ = lm::gaussian_init<float>(static_cast<Index>(cfg.stages) * (cfg.entries + 2), cfg.d_model,
                                           cfg.init_scale, r_emb);
  m.pos_embed_ = lm::sinusoidal_init<float>(cfg.max_frames + cfg.stages, cfg.d_model, cfg.init_scale);
  m.seg_embed_ = lm::gaussian_init<float>(2, cfg.d_model, cfg.init_scale, r_emb);
  m.stack_ = lm::DecoderStack<float>::init(cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.d_ff, r_stack, cfg.init_scale);
  for (int s = 0; s < cfg.stages; ++s) {
    m.heads_.push_back(lm::gaussian_init<float>(cfg.d_model, cfg.entries, cfg.init_scale, r_head));
  }
  return m;
}

AcousticLm AcousticLm::zeros(const AcousticLmConfig& cfg) {
  num::Rng rng(0);
  AcousticLm m = init(cfg, rng);
  for (auto& [name, p] : m.named_parameters()) {
    Tensor<float> t = p;
    t.mutable_value().setZero();
  }
  return m;
}

std::vector<NamedTensor<float>> AcousticLm::named_parameters() const {
  std::vector<NamedTensor<float>> out = {{"aclm/sem_embed", sem_embed_},
                                         {"aclm/code_embed", code_embed_},
                                         {"aclm/pos_embed", pos_embed_},
                                         {"aclm/seg_embed", seg_embed_}};
  stack_.collect(out, "aclm/");
  for (std::size_t s = 0; s < heads_.size(); ++s) out.emplace_back("aclm/head." + std::to_string(s), heads_[s]);
  return out;
}

std::size_t AcousticLm::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : named_parameters()) n += static_cast<std::size_t>(p.numel());
  return n;
}

void AcousticLm::check_semantic(const std::vector<int>& semantic) const {
  if (semantic.empty()) throw ContractError("acoustic LM needs a non-empty semantic sequence");
  if (static_cast<int>(semantic.size()) > cfg_.max_frames) {
    throw LengthError("semantic sequence of " + std::to_string(semantic.size()) + " frames exceeds max_frames " +
                      std::to_string(cfg_.max_frames));
  }
  for (int id : semantic) {
    if (id < cfg_.semantic_offset || id >= cfg_.semantic_offset + cfg_.n_semantic) {
      throw IndexError("id " + std::to_string(id) + " is not a semantic token");
    }
  }
}

Tensor<float> AcousticLm::hidden(const std::vector<const std::vector<int>*>& semantic,
                                 const std::vector<const DelayedGrid*>& delayed, std::vector<Index>* step_rows) const {
  const int S = cfg_.stages;
  const int stride = cfg_.entries + 2;
  std::vector<int> sem_ids, pos_ids, seg_ids;
  std::vector<std::vector<int>> code_ids(static_cast<std::size_t>(S));
  std::vector<Segment> segments;
  Index row = 0;
  for (std::size_t b = 0; b < semantic.size(); ++b) {
    const auto& sem = *semantic[b];
    const DelayedGrid& dg = *delayed[b];
    const int T = static_cast<int>(sem.size());
    for (int i = 0; i < T; ++i) {
      sem_ids.push_back(sem[i] - cfg_.semantic_offset);
      pos_ids.push_back(i);
      seg_ids.push_back(0);
      for (int s = 0; s < S; ++s) code_ids[s].push_back(-1);
    }
    for (int t = 0; t < dg.steps; ++t) {
      sem_ids.push_back(-1);
      pos_ids.push_back(t);
      seg_ids.push_back(1);
      for (int s = 0; s < S; ++s) {
        const int prev = t == 0 ? cfg_.bos_id() : dg.at(s, t - 1);
        code_ids[s].push_back(s * stride + prev);
      }
      if (step_rows) step_rows->push_back(row + T + t);
    }
    segments.push_back(Segment{row, T + dg.steps, T});
    row += T + dg.steps;
  }
  Tensor<float> x = num::embedding(sem_embed_, std::span<const int>(sem_ids));
  for (int s = 0; s < S; ++s) x = num::add(x, num::embedding(code_embed_, std::span<const int>(code_ids[s])));
  x = num::add(x, num::embedding(pos_embed_, std::span<const int>(pos_ids)));
  x = num::add(x, num::embedding(seg_embed_, std::span<const int>(seg_ids)));
  return stack_.forward(x, segments, nullptr);
}

namespace {

void check_pair(const AcousticPair& p, const AcousticLmConfig& cfg) {
  if (p.grid.stages != cfg.stages) throw DataError("acoustic grid has the wrong number of codebooks");
  if (static_cast<int>(p.semantic.size()) != p.grid.frames) {
    throw DataError("misaligned pair: " + std::to_string(p.semantic.size()) + " semantic tokens vs " +
                    std::to_string(p.grid.frames) + " grid columns");
  }
  for (int c : p.grid.codes) {
    if (c < 0 || c >= cfg.entries) throw DataError("acoustic code " + std::to_string(c) + " out of range");
  }
}

}  // namespace

std::vector<Tensor<float>> AcousticLm::step_logits(const std::vector<const AcousticPair*>& pairs) const {
  std::vector<DelayedGrid> delayed;
  std::vector<const std::vector<int>*> sem;
  delayed.reserve(pairs.size());
  for (const AcousticPair* p : pairs) {
    check_semantic(p->semantic);
    check_pair(*p, cfg_);
    delayed.push_back(apply_delay(p->grid, cfg_.pad_id()));
    sem.push_back(&p->semantic);
  }
  std::vector<const DelayedGrid*> dptr;
  for (const auto& d : delayed) dptr.push_back(&d);
  std::vector<Index> rows;
  const Tensor<float> all = hidden(sem, dptr, &rows);
  const Tensor<float> h = num::gather_rows(all, std::span<const Index>(rows));
  std::vector<Tensor<float>> out;
  for (const auto& head : heads_) out.push_back(num::matmul(h, head));
  return out;
}

Tensor<float> AcousticLm::loss(const std::vector<const AcousticPair*>& pairs) const {
  const auto logits = step_logits(pairs);
  Tensor<float> total;
  for (int s = 0; s < cfg_.stages; ++s) {
    std::vector<int> targets;
    for (const AcousticPair* p : pairs) {
      const DelayedGrid d = apply_delay(p->grid, cfg_.pad_id());
      for (int t = 0; t < d.steps; ++t) targets.push_back(d.at(s, t) == d.pad ? lm::kIgnoreId : d.at(s, t));
    }
    Tensor<float> ce = num::cross_entropy(logits[s], std::span<const int>(targets), lm::kIgnoreId);
    total = total.defined() ? num::add(total, ce) : ce;
  }
  return total;
}

std::vector<double> AcousticLm::teacher_forced_accuracy(const std::vector<AcousticPair>& pairs) const {
  num::NoGradGuard guard;
  std::vector<double> hit(static_cast<std::size_t>(cfg_.stages), 0.0);
  double cells = 0;
  for (std::size_t start = 0; start < pairs.size(); start += 16) {
    std::vector<const AcousticPair*> chunk;
    for (std::size_t i = start; i < std::min(pairs.size(), start + 16); ++i) chunk.push_back(&pairs[i]);
    const auto logits = step_logits(chunk);
    Index row = 0;
    for (const AcousticPair* p : chunk) {
      const DelayedGrid d = apply_delay(p->grid, cfg_.pad_id());
      for (int t = 0; t < d.steps; ++t, ++row) {
        for (int s = 0; s < cfg_.stages; ++s) {
          if (d.at(s, t) == d.pad) continue;
          Index best = 0;
          logits[s].value().row(row).maxCoeff(&best);
          if (best == d.at(s, t)) hit[s] += 1;
        }
      }
      cells += p->grid.frames;
    }
  }
  for (auto& h : hit) h = cells > 0 ? h / cells : 0.0;
  return hit;
}

std::vector<std::vector<float>> AcousticLm::logits_at(const std::vector<int>& semantic, const DelayedGrid& history,
                                                      int t) const {
  check_semantic(semantic);
  if (t < 0 || t >= history.steps + 1) throw ContractError("step outside the delayed history");
  DelayedGrid view;
  view.stages = cfg_.stages;
  view.steps = t + 1;
  view.pad = cfg_.pad_id();
  view.codes.assign(static_cast<std::size_t>(view.stages) * view.steps, view.pad);
  for (int s = 0; s < cfg_.stages; ++s) {
    for (int u = 0; u < t; ++u) view.at(s, u) = history.at(s, u);
  }
  std::vector<Index> rows;
  const Tensor<float> h = hidden({&semantic}, {&view}, &rows);
  const Index last = rows.back();
  const Tensor<float> hr = num::gather_rows(h, std::span<const Index>(&last, 1));
  std::vector<std::vector<float>> out;
  for (const auto& head : heads_) {
    const Matrix<float> l = num::matmul(hr, head).value();
    out.emplace_back(l.data(), l.data() + l.size());
  }
  return out;
}

AcousticTokenGrid AcousticLm::generate(const std::vector<int>& semantic, const AcousticDecodeOptions& opts) const {
  check_semantic(semantic);
  num::NoGradGuard guard;
  const int S = cfg_.stages;
  const int T = static_cast<int>(semantic.size());
  DelayedGrid d;
  d.stages = S;
  d.steps = T + S - 1;
  d.pad = cfg_.pad_id();
  d.codes.assign(static_cast<std::size_t>(S) * d.steps, d.pad);
  num::Rng rng(opts.seed);
  for (int t = 0; t < d.steps; ++t) {
    const auto logits = logits_at(semantic, d, t);
    for (int s = 0; s < S; ++s) {
      if (t < s || t >= s + T) continue;
      int pick;
      if (opts.greedy) {
        pick = lm::argmax_allowed(logits[s], std::nullopt);
      } else {
        std::vector<int> order(logits[s].size());
        std::iota(order.begin(), order.end(), 0);
        const int k = std::clamp(opts.top_k, 1, static_cast<int>(order.size()));
        std::partial_sort(order.begin(), order.begin() + k, order.end(),
                          [&](int a, int b) { return logits[s][a] > logits[s][b] || (logits[s][a] == logits[s][b] && a < b); });
        std::vector<double> z;
        for (int i = 0; i < k; ++i) z.push_back(logits[s][order[i]] / opts.temperature);
        const auto p = num::softmax(z);
        double u = rng.uniform();
        pick = order[k - 1];
        for (int i = 0; i < k; ++i) {
          u -= p[i];
          if (u < 0) {
            pick = order[i];
            break;
          }
        }
      }
      d.at(s, t) = pick;
    }
  }
  return invert_delay(d);
}

void train_acoustic_lm_inplace(AcousticLm& model, const std::vector<AcousticPair>& pairs,
                               const AcousticTrainOptions& opts, const AcousticLogFn& on_log) {
  if (opts.steps <= 0) return;
  if (pairs.empty()) throw DataError("acoustic LM training set is empty");
  for (const auto& p : pairs) check_pair(p, model.config());
  num::AdamWConfig oc = opts.opt;
  oc.total_steps = opts.steps;
  auto params = model.named_parameters();
  for (auto& [n, p] : params) p.set_requires_grad(true);
  num::AdamW opt(oc, params);
  num::Rng rng = num::Rng(opts.seed).fork(0x61636c6d);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  for (std::int64_t step = 0; step < opts.steps; ++step) {
    std::vector<const AcousticPair*> batch;
    for (int b = 0; b < opts.batch_size; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(&pairs[order[cursor++]]);
    }
    Tensor<float> l = model.loss(batch);
    const double value = l.item();
    num::backward(l);
    const double lr = num::cosine_lr(oc, step);
    opt.step(step);
    if (on_log && (step == 0 || (opts.log_every > 0 && (step + 1) % opts.log_every == 0) || step + 1 == opts.steps)) {
      on_log(step, value, lr);
    }
  }
  for (auto& [n, p] : params) p.set_requires_grad(false);
}

AcousticLm train_acoustic_lm(const std::vector<AcousticPair>& pairs, const AcousticLmConfig& cfg,
                             const AcousticTrainOptions& opts, const AcousticLogFn& on_log) {
  num::Rng rng = num::Rng(opts.seed).fork(0x696e6974);
  AcousticLm model = AcousticLm::init(cfg, rng);
  train_acoustic_lm_inplace(model, pairs, opts, on_log);
  return model;
}

}  // namespace mslb::aclm
