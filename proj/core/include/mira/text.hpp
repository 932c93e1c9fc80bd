#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mira {

// Subword vocabulary with WordPiece-style "##" continuation tokens.
// Ids are dense 0..size()-1; the first four ids are reserved.
struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;

  std::vector<std::string> tokens;
  std::unordered_map<std::string, int> token_to_id;

  int size() const { return static_cast<int>(tokens.size()); }

  // -1 when absent.
  int id(std::string_view token) const {
    auto it = token_to_id.find(std::string(token));
    return it == token_to_id.end() ? -1 : it->second;
  }

  const std::string& token(int id) const { return tokens.at(static_cast<size_t>(id)); }
};

struct TokenSequence {
  std::vector<int> ids;
  std::string surface;  // normalized text the ids were produced from
};

// Canonical text normalization shared by the tokenizer, click keys and
// intention grouping: lowercase, whitespace collapsed to single spaces,
// punctuation isolated as single-character words. Input is treated as
// UTF-8; code points outside the handled ranges pass through unchanged.
std::string normalize_text(std::string_view text);

// normalize_text output split on spaces.
std::vector<std::string> normalize_words(std::string_view text);

// Builds a vocabulary of at most target_size entries: reserved tokens,
// then single-character symbols by corpus frequency, then iterative
// most-frequent-pair merges. Deterministic for a fixed input ordering.
// Throws Error("empty-corpus") when no words survive normalization.
Vocabulary train_vocab(const std::vector<std::string>& texts, int target_size);

// Greedy longest-match subword tokenization. Characters with no vocabulary
// match emit [UNK] and advance one code point. Never adds [CLS]/[SEP].
TokenSequence tokenize(std::string_view text, const Vocabulary& vocab);

// Joins token strings back to text ("##" glues to the previous token).
std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab);

// One token per line, line number == id; first four lines are the
// reserved tokens and are validated on load.
void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary load_vocabulary(const std::filesystem::path& path);

}  // namespace mira
