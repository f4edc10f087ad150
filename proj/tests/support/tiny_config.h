// SPDX-License-Identifier: Apache-2.0
//
// A configuration small enough for unit tests: every stage runs in seconds.
#pragma once

#include "mslb/pipeline/config.h"

namespace testcfg {

inline mslb::pipeline::Config tiny() {
  auto c = mslb::pipeline::desk_config();
  c.lm.d_model = 16;
  c.lm.n_layers = 1;
  c.lm.n_heads = 2;
  c.lm.d_ff = 32;
  c.lm.max_seq_len = 80;
  c.lora.rank = 2;
  c.lora.alpha = 4;
  c.mole.router_hidden = 8;
  c.codec.corpus_strings = 40;
  c.codec.silence_frames = 16;
  c.codec.kmeans_iters = 5;
  c.codec.acoustic.ae_steps = 40;
  c.codec.acoustic.finetune_steps = 10;
  c.codec.acoustic.kmeans_iters = 5;
  c.acoustic_lm.model.d_model = 16;
  c.acoustic_lm.model.n_layers = 1;
  c.acoustic_lm.model.d_ff = 32;
  c.acoustic_lm.steps = 5;
  c.acoustic_lm.n_pairs = 20;
  for (auto& s : c.stages) {
    s.steps = 4;
    s.batch_size = 4;
    if (s.n_samples > 40) s.n_samples = 40;
  }
  return c;
}

}  // namespace testcfg
