#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "amtl/error.hpp"

namespace amtl {

// Splits UTF-8 text into code point strings. Malformed bytes are treated
// as single-byte symbols rather than rejected.
inline std::vector<std::string> utf8_split(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const unsigned char b = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if ((b & 0x80u) == 0x00u) len = 1;
    else if ((b & 0xE0u) == 0xC0u) len = 2;
    else if ((b & 0xF0u) == 0xE0u) len = 3;
    else if ((b & 0xF8u) == 0xF0u) len = 4;
    if (i + len > text.size()) len = 1;
    out.push_back(text.substr(i, len));
    i += len;
  }
  return out;
}

// Character-to-id table. Content characters take the dense ids
// 0..n_content-1; the four specials sit at the tail so content ids can
// double as indices into content-only prediction heads.
class Vocab {
 public:
  Vocab() = default;

  explicit Vocab(std::vector<std::string> content_chars)
      : chars_(std::move(content_chars)) {
    require(chars_.size() >= 4, ErrorKind::contract,
            "vocab needs at least 4 content chars (vs >= 8)");
    for (std::size_t i = 0; i < chars_.size(); ++i) {
      auto [it, fresh] = index_.emplace(chars_[i], static_cast<int>(i));
      require(fresh, ErrorKind::contract, "duplicate vocab char: " + chars_[i]);
    }
  }

  // Unique code points of `text`, sorted, as a content vocabulary.
  static Vocab from_text(const std::string& text) {
    std::set<std::string> uniq;
    for (auto& c : utf8_split(text))
      if (c != "\n" && c != "\r" && c != "\t") uniq.insert(c);
    return Vocab(std::vector<std::string>(uniq.begin(), uniq.end()));
  }

  int n_content() const { return static_cast<int>(chars_.size()); }
  int vs() const { return n_content() + 4; }
  int mask_id() const { return n_content(); }
  int pad_id() const { return n_content() + 1; }
  int bos_id() const { return n_content() + 2; }
  int eos_id() const { return n_content() + 3; }

  bool is_content(int id) const { return id >= 0 && id < n_content(); }
  bool is_special(int id) const { return id >= n_content() && id < vs(); }

  const std::vector<std::string>& chars() const { return chars_; }
  const std::string& char_at(int id) const { return chars_[static_cast<std::size_t>(id)]; }

  int id_of(const std::string& c) const {
    auto it = index_.find(c);
    require(it != index_.end(), ErrorKind::unknown_symbol,
            "character not in vocabulary: '" + c + "'");
    return it->second;
  }

  bool contains(const std::string& c) const { return index_.count(c) > 0; }

  // Content characters concatenated; the serialized form used in checkpoints.
  std::string joined_chars() const {
    std::string s;
    for (const auto& c : chars_) s += c;
    return s;
  }

 private:
  std::vector<std::string> chars_;
  std::unordered_map<std::string, int> index_;
};

// An encoded sentence. Treated as an immutable value; `k` counts content
// (non-special) tokens, so a sequence holding MASK placeholders has
// k < ids.size().
struct TokenSeq {
  std::vector<int> ids;
  int k = 0;

  int length() const { return static_cast<int>(ids.size()); }
  bool operator==(const TokenSeq& o) const { return ids == o.ids; }
};

inline TokenSeq make_token_seq(const Vocab& v, std::vector<int> ids) {
  TokenSeq s;
  int k = 0;
  for (int id : ids) {
    require(id >= 0 && id < v.vs(), ErrorKind::contract, "token id out of range");
    if (v.is_content(id)) ++k;
  }
  s.ids = std::move(ids);
  s.k = k;
  return s;
}

inline TokenSeq encode(const Vocab& v, const std::string& text) {
  std::vector<int> ids;
  for (auto& c : utf8_split(text)) ids.push_back(v.id_of(c));
  return make_token_seq(v, std::move(ids));
}

inline std::string decode(const Vocab& v, const TokenSeq& s) {
  std::string out;
  for (int id : s.ids) {
    require(id >= 0 && id < v.vs(), ErrorKind::contract, "token id out of range");
    if (v.is_content(id)) out += v.char_at(id);
    else if (id == v.mask_id()) out += "\xE2\x96\xA1";  // U+25A1 mask placeholder
    // PAD/BOS/EOS never appear in sentence-level sequences; skip if they do
  }
  return out;
}

// New sequence with [start, end) replaced by `repl`.
inline TokenSeq replace_span(const Vocab& v, const TokenSeq& s, int start, int end,
                             const std::vector<int>& repl) {
  require(0 <= start && start <= end && end <= s.length(), ErrorKind::contract,
          "replace_span: bad range");
  std::vector<int> ids;
  ids.reserve(s.ids.size() - (end - start) + repl.size());
  ids.insert(ids.end(), s.ids.begin(), s.ids.begin() + start);
  ids.insert(ids.end(), repl.begin(), repl.end());
  ids.insert(ids.end(), s.ids.begin() + end, s.ids.end());
  return make_token_seq(v, std::move(ids));
}

}  // namespace amtl
