#include "mira/text.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "mira/binio.hpp"
#include "mira/error.hpp"

namespace mira {

namespace {

const char* const kReserved[4] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};

struct CodePoint {
  uint32_t cp;
  int bytes;
};

CodePoint decode_utf8(std::string_view s, size_t pos) {
  const auto b0 = static_cast<unsigned char>(s[pos]);
  if (b0 < 0x80) return {b0, 1};
  auto cont = [&](size_t i) -> int {
    if (pos + i >= s.size()) return -1;
    const auto b = static_cast<unsigned char>(s[pos + i]);
    return (b & 0xc0) == 0x80 ? (b & 0x3f) : -1;
  };
  if ((b0 & 0xe0) == 0xc0) {
    int c1 = cont(1);
    if (c1 >= 0) return {(uint32_t(b0 & 0x1f) << 6) | uint32_t(c1), 2};
  } else if ((b0 & 0xf0) == 0xe0) {
    int c1 = cont(1), c2 = cont(2);
    if (c1 >= 0 && c2 >= 0)
      return {(uint32_t(b0 & 0x0f) << 12) | (uint32_t(c1) << 6) | uint32_t(c2), 3};
  } else if ((b0 & 0xf8) == 0xf0) {
    int c1 = cont(1), c2 = cont(2), c3 = cont(3);
    if (c1 >= 0 && c2 >= 0 && c3 >= 0)
      return {(uint32_t(b0 & 0x07) << 18) | (uint32_t(c1) << 12) | (uint32_t(c2) << 6) |
                  uint32_t(c3),
              4};
  }
  return {0xfffd, 1};  // invalid byte: replacement character
}

void encode_utf8(uint32_t cp, std::string& out) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else {
    out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  }
}

bool is_space_cp(uint32_t cp) {
  switch (cp) {
    case 0x09: case 0x0a: case 0x0b: case 0x0c: case 0x0d: case 0x20:
    case 0x85: case 0xa0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202f: case 0x205f: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200a;
  }
}

bool is_punct_cp(uint32_t cp) {
  return (cp >= 0x21 && cp <= 0x2f) || (cp >= 0x3a && cp <= 0x40) ||
         (cp >= 0x5b && cp <= 0x60) || (cp >= 0x7b && cp <= 0x7e);
}

uint32_t lower_cp(uint32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 0x20;
  // Latin-1 supplement, excluding the multiplication sign.
  if (cp >= 0xc0 && cp <= 0xde && cp != 0xd7) return cp + 0x20;
  return cp;
}

size_t count_code_points(std::string_view word) {
  size_t n = 0;
  for (size_t pos = 0; pos < word.size(); pos += decode_utf8(word, pos).bytes) ++n;
  return n;
}

bool has_continuation_prefix(const std::string& tok) {
  return tok.size() > 2 && tok[0] == '#' && tok[1] == '#';
}

}  // namespace

std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  auto emit = [&](uint32_t cp) {
    if (pending_space && !out.empty()) out.push_back(' ');
    pending_space = false;
    encode_utf8(cp, out);
  };
  for (size_t pos = 0; pos < text.size();) {
    const CodePoint c = decode_utf8(text, pos);
    pos += static_cast<size_t>(c.bytes);
    if (is_space_cp(c.cp)) {
      pending_space = true;
      continue;
    }
    if (is_punct_cp(c.cp)) {
      // Punctuation becomes its own single-character word.
      if (!out.empty()) out.push_back(' ');
      encode_utf8(c.cp, out);
      pending_space = true;
      continue;
    }
    emit(lower_cp(c.cp));
  }
  return out;
}

std::vector<std::string> normalize_words(std::string_view text) {
  const std::string norm = normalize_text(text);
  std::vector<std::string> words;
  size_t start = 0;
  while (start < norm.size()) {
    size_t end = norm.find(' ', start);
    if (end == std::string::npos) end = norm.size();
    if (end > start) words.emplace_back(norm.substr(start, end - start));
    start = end + 1;
  }
  return words;
}

Vocabulary train_vocab(const std::vector<std::string>& texts, int target_size) {
  if (target_size < 5) throw std::invalid_argument("train_vocab: target_size must be >= 5");

  // Unique words with corpus frequencies, in first-occurrence order.
  std::vector<std::string> word_order;
  std::unordered_map<std::string, int64_t> word_freq;
  for (const auto& text : texts) {
    for (auto& w : normalize_words(text)) {
      auto [it, inserted] = word_freq.emplace(w, 0);
      it->second += 1;
      if (inserted) word_order.push_back(w);
    }
  }
  if (word_order.empty()) throw Error("empty-corpus");

  // Symbol sequences: first code point bare, the rest "##"-prefixed.
  std::vector<std::vector<std::string>> seqs(word_order.size());
  std::vector<int64_t> freqs(word_order.size());
  std::unordered_map<std::string, std::pair<int64_t, size_t>> alpha;  // freq, first-occurrence
  std::vector<std::string> alpha_order;
  for (size_t wi = 0; wi < word_order.size(); ++wi) {
    const std::string& w = word_order[wi];
    freqs[wi] = word_freq[w];
    std::string sym;
    for (size_t pos = 0; pos < w.size();) {
      const CodePoint c = decode_utf8(w, pos);
      sym = pos == 0 ? "" : "##";
      encode_utf8(c.cp, sym);
      pos += static_cast<size_t>(c.bytes);
      seqs[wi].push_back(sym);
      auto [it, inserted] = alpha.emplace(sym, std::make_pair(int64_t{0}, alpha_order.size()));
      it->second.first += freqs[wi];
      if (inserted) alpha_order.push_back(sym);
    }
  }

  Vocabulary vocab;
  auto add_token = [&](const std::string& t) {
    if (vocab.token_to_id.count(t)) return;
    vocab.token_to_id.emplace(t, vocab.size());
    vocab.tokens.push_back(t);
  };
  for (const char* r : kReserved) add_token(r);

  std::sort(alpha_order.begin(), alpha_order.end(), [&](const auto& a, const auto& b) {
    const auto& [fa, oa] = alpha[a];
    const auto& [fb, ob] = alpha[b];
    if (fa != fb) return fa > fb;
    return oa < ob;
  });
  for (const auto& sym : alpha_order) {
    if (vocab.size() >= target_size) return vocab;
    add_token(sym);
  }

  // Merge loop: most frequent adjacent pair wins, ties by pair string order.
  while (vocab.size() < target_size) {
    std::map<std::pair<std::string, std::string>, int64_t> pair_freq;
    for (size_t wi = 0; wi < seqs.size(); ++wi) {
      const auto& s = seqs[wi];
      for (size_t i = 0; i + 1 < s.size(); ++i) {
        pair_freq[{s[i], s[i + 1]}] += freqs[wi];
      }
    }
    if (pair_freq.empty()) break;
    auto best = pair_freq.begin();
    for (auto it = std::next(pair_freq.begin()); it != pair_freq.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    const auto [left, right] = best->first;
    const std::string merged = left + right.substr(2);  // continuation always "##"-prefixed
    for (auto& s : seqs) {
      for (size_t i = 0; i + 1 < s.size();) {
        if (s[i] == left && s[i + 1] == right) {
          s[i] = merged;
          s.erase(s.begin() + static_cast<std::ptrdiff_t>(i) + 1);
        } else {
          ++i;
        }
      }
    }
    add_token(merged);
  }
  return vocab;
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab) {
  TokenSequence seq;
  seq.surface = normalize_text(text);
  for (const auto& word : normalize_words(seq.surface)) {
    size_t pos = 0;
    while (pos < word.size()) {
      // Longest vocabulary match starting at pos, shrinking one code point
      // at a time from the full remaining suffix.
      std::vector<size_t> ends;
      for (size_t p = pos; p < word.size(); p += static_cast<size_t>(decode_utf8(word, p).bytes)) {
        ends.push_back(p + static_cast<size_t>(decode_utf8(word, p).bytes));
      }
      int matched = -1;
      size_t match_end = pos;
      for (size_t ei = ends.size(); ei-- > 0;) {
        std::string cand = std::string(word.substr(pos, ends[ei] - pos));
        if (pos > 0) cand = "##" + cand;
        const int id = vocab.id(cand);
        if (id >= 0) {
          matched = id;
          match_end = ends[ei];
          break;
        }
      }
      if (matched >= 0) {
        seq.ids.push_back(matched);
        pos = match_end;
      } else {
        seq.ids.push_back(Vocabulary::kUnk);
        pos += static_cast<size_t>(decode_utf8(word, pos).bytes);
      }
    }
  }
  return seq;
}

std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab) {
  std::string out;
  for (int id : seq.ids) {
    const std::string& t = vocab.token(id);
    if (has_continuation_prefix(t)) {
      out += t.substr(2);
    } else {
      if (!out.empty()) out.push_back(' ');
      out += t;
    }
  }
  return out;
}

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
  atomic_write(path, [&](std::ostream& os) {
    for (const auto& t : vocab.tokens) os << t << '\n';
  });
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  std::ifstream is = open_input(path);
  Vocabulary vocab;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw Error("bad-vocab", "empty token at line " + std::to_string(vocab.size() + 1));
    if (vocab.token_to_id.count(line))
      throw Error("bad-vocab", "duplicate token '" + line + "'");
    vocab.token_to_id.emplace(line, vocab.size());
    vocab.tokens.push_back(line);
  }
  if (vocab.size() < 4) throw Error("bad-vocab", "fewer than four reserved tokens");
  for (int i = 0; i < 4; ++i) {
    if (vocab.tokens[static_cast<size_t>(i)] != kReserved[i])
      throw Error("bad-vocab", "reserved token mismatch at id " + std::to_string(i));
  }
  return vocab;
}

}  // namespace mira
