// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace mslb::lm {

enum class TokenRole { kSymbol, kOperator, kControl, kReserved, kSemantic };

/// Control tokens, in id order after the operators. The three system ids each
/// stand for one of the task system prompts (see kSystemPromptText).
enum class Control { kBos, kEos, kPad, kUser, kAssistant, kSpeech, kSysTts, kSysQa, kSysSqa };
inline constexpr int kNumControls = 9;

/// The renderable alphabet, in tone order.
inline constexpr std::string_view kSymbols = "0123456789abcde ";
inline constexpr std::string_view kOperators = "+=?";

/// The English system prompt each system control id denotes.
std::string_view system_prompt_text(Control sys);

/// Loss targets equal to this id are skipped.
inline constexpr int kIgnoreId = -100;

/// One token-id space: text ids in [0, n_text), semantic ids in
/// [n_text, n_text + n_semantic).
class UnifiedVocab {
 public:
  UnifiedVocab(int n_text = 64, int n_semantic = 64);

  int n_text() const { return n_text_; }
  int n_semantic() const { return n_semantic_; }
  int total() const { return n_text_ + n_semantic_; }

  TokenRole role(int id) const;
  int control(Control c) const;
  int symbol(char c) const;  // throws AlphabetError
  bool is_semantic(int id) const { return id >= n_text_ && id < total(); }
  bool is_text(int id) const { return id >= 0 && id < n_text_; }
  int semantic(int k) const;  // k-th semantic id
  int semantic_index(int id) const;

  /// Characters over the symbol and operator set; anything else is an AlphabetError.
  std::vector<int> encode(std::string_view text) const;
  /// Inverse of encode on symbol/operator ids; control and semantic ids are dropped.
  std::string decode(const std::vector<int>& ids) const;
  std::vector<int> semantic_ids() const;

  UnifiedVocab with_semantic(int n_semantic) const { return UnifiedVocab(n_text_, n_semantic); }

  bool operator==(const UnifiedVocab&) const = default;

 private:
  int n_text_;
  int n_semantic_;
};

}  // namespace mslb::lm
