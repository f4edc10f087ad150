// SPDX-License-Identifier: Apache-2.0
#include "mslb/lm/vocab.h"

#include "mslb/error.h"

namespace mslb::lm {

namespace {
constexpr int kNumSymbols = static_cast<int>(kSymbols.size());
constexpr int kNumOperators = static_cast<int>(kOperators.size());
constexpr int kFirstControl = kNumSymbols + kNumOperators;
constexpr int kFirstReserved = kFirstControl + kNumControls;
}  // namespace

std::string_view system_prompt_text(Control sys) {
  switch (sys) {
    case Control::kSysTts:
      return "Transform the input written-form English text into non-language tokens that represent the "
             "corresponding speech in audio";
    case Control::kSysQa:
      return "You are a helpful AI assistant";
    case Control::kSysSqa:
      return "Answer the input text questions using non-language tokens that represent the corresponding speech";
    default:
      throw ContractError("not a system control id");
  }
}

UnifiedVocab::UnifiedVocab(int n_text, int n_semantic) : n_text_(n_text), n_semantic_(n_semantic) {
  if (n_text < kFirstReserved) {
    throw ConfigError("vocab.n_text must be at least " + std::to_string(kFirstReserved));
  }
  if (n_semantic < 0) throw ConfigError("vocab.n_semantic must be >= 0");
}

TokenRole UnifiedVocab::role(int id) const {
  if (id < 0 || id >= total()) throw IndexError("token id " + std::to_string(id) + " outside vocabulary");
  if (id < kNumSymbols) return TokenRole::kSymbol;
  if (id < kFirstControl) return TokenRole::kOperator;
  if (id < kFirstReserved) return TokenRole::kControl;
  if (id < n_text_) return TokenRole::kReserved;
  return TokenRole::kSemantic;
}

int UnifiedVocab::control(Control c) const { return kFirstControl + static_cast<int>(c); }

int UnifiedVocab::symbol(char c) const {
  if (const auto p = kSymbols.find(c); p != std::string_view::npos) return static_cast<int>(p);
  if (const auto p = kOperators.find(c); p != std::string_view::npos) return kNumSymbols + static_cast<int>(p);
  throw AlphabetError(std::string("unsupported character '") + c + "'");
}

int UnifiedVocab::semantic(int k) const {
  if (k < 0 || k >= n_semantic_) throw IndexError("semantic index " + std::to_string(k) + " out of range");
  return n_text_ + k;
}

int UnifiedVocab::semantic_index(int id) const {
  if (!is_semantic(id)) throw IndexError("id " + std::to_string(id) + " is not a semantic id");
  return id - n_text_;
}

std::vector<int> UnifiedVocab::encode(std::string_view text) const {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (const char c : text) ids.push_back(symbol(c));
  return ids;
}

std::string UnifiedVocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (const int id : ids) {
    if (id >= 0 && id < kNumSymbols) {
      out.push_back(kSymbols[static_cast<std::size_t>(id)]);
    } else if (id >= kNumSymbols && id < kFirstControl) {
      out.push_back(kOperators[static_cast<std::size_t>(id - kNumSymbols)]);
    }
  }
  return out;
}

std::vector<int> UnifiedVocab::semantic_ids() const {
  std::vector<int> ids(static_cast<std::size_t>(n_semantic_));
  for (int k = 0; k < n_semantic_; ++k) ids[static_cast<std::size_t>(k)] = n_text_ + k;
  return ids;
}

}  // namespace mslb::lm
