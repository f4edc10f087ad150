// SPDX-License-Identifier: Apache-2.0
#include "mslb/lm/generate.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mslb/error.h"
#include "mslb/numerics/rng.h"

namespace mslb::lm {

int argmax_allowed(const std::vector<float>& logits, const std::optional<std::vector<int>>& allowed) {
  int best = -1;
  auto consider = [&](int id) {
    if (id < 0 || id >= static_cast<int>(logits.size())) throw IndexError("allowed id outside vocabulary");
    if (best < 0 || logits[id] > logits[best] || (logits[id] == logits[best] && id < best)) best = id;
  };
  if (allowed) {
    for (const int id : *allowed) consider(id);
  } else {
    for (int id = 0; id < static_cast<int>(logits.size()); ++id) consider(id);
  }
  if (best < 0) throw ContractError("no token can be emitted (empty allowed set)");
  return best;
}

namespace {

int sample_top_k(const std::vector<float>& logits, const GenerateOptions& opts, num::Rng& rng) {
  std::vector<int> cand;
  if (opts.allowed_ids) {
    cand = *opts.allowed_ids;
  } else {
    cand.resize(logits.size());
    std::iota(cand.begin(), cand.end(), 0);
  }
  if (cand.empty()) throw ContractError("no token can be emitted (empty allowed set)");
  std::stable_sort(cand.begin(), cand.end(), [&](int a, int b) {
    return logits[a] > logits[b] || (logits[a] == logits[b] && a < b);
  });
  const std::size_t k = std::min<std::size_t>(cand.size(), static_cast<std::size_t>(std::max(1, opts.top_k)));
  cand.resize(k);
  const double temp = std::max(opts.temperature, 1e-300);
  std::vector<double> p(k);
  const double top = logits[cand[0]];
  double z = 0;
  for (std::size_t i = 0; i < k; ++i) z += (p[i] = std::exp((logits[cand[i]] - top) / temp));
  double u = rng.uniform() * z;
  for (std::size_t i = 0; i < k; ++i) {
    if (u < p[i]) return cand[i];
    u -= p[i];
  }
  return cand[0];
}

}  // namespace

std::vector<int> generate(const NextLogitsFn& next_logits, const std::vector<int>& prompt,
                          const GenerateOptions& opts) {
  if (prompt.empty()) throw ContractError("generate needs a non-empty prompt");
  num::Rng rng(opts.seed);
  std::vector<int> seq = prompt;
  std::vector<int> out;
  for (int i = 0; i < opts.max_new; ++i) {
    if (opts.max_total_len > 0 && static_cast<int>(seq.size()) >= opts.max_total_len) break;
    const std::vector<float> logits = next_logits(seq);
    const int tok = opts.mode == DecodeMode::kGreedy ? argmax_allowed(logits, opts.allowed_ids)
                                                     : sample_top_k(logits, opts, rng);
    seq.push_back(tok);
    out.push_back(tok);
    if (std::find(opts.stop_ids.begin(), opts.stop_ids.end(), tok) != opts.stop_ids.end()) break;
  }
  return out;
}

}  // namespace mslb::lm
