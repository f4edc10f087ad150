// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace mslb::lm {

/// Next-token logits (full vocabulary) after the given sequence.
using NextLogitsFn = std::function<std::vector<float>(const std::vector<int>& seq)>;

enum class DecodeMode { kGreedy, kTopK };

struct GenerateOptions {
  int max_new = 64;
  DecodeMode mode = DecodeMode::kGreedy;
  int top_k = 8;
  double temperature = 1.0;
  std::vector<int> stop_ids;
  /// When set, only these ids can be emitted.
  std::optional<std::vector<int>> allowed_ids;
  std::uint64_t seed = 0;
  /// Generation also stops once prompt + output reaches this length (0 = unlimited).
  int max_total_len = 0;
};

/// Autoregressive continuation of `prompt`. The returned tokens exclude the
/// prompt and include the stop id when one was emitted.
std::vector<int> generate(const NextLogitsFn& next_logits, const std::vector<int>& prompt,
                          const GenerateOptions& opts);

/// Index of the largest logit among `allowed` (or all ids); lowest id wins ties.
int argmax_allowed(const std::vector<float>& logits, const std::optional<std::vector<int>>& allowed);

}  // namespace mslb::lm
