#pragma once

#include <array>
#include <string>
#include <vector>

#include "amtl/error.hpp"
#include "amtl/rng.hpp"
#include "amtl/vocab.hpp"

namespace amtl {

// Deterministic synthetic character-level language.
//
// Every word class draws from its own disjoint character alphabet and has
// a fixed word length, so tokenization is unambiguous: the first character
// of a word determines its class and extent. Sentences are clause chains
// over a small regular grammar with selectional constraints (motion verbs
// take place objects, transfer verbs take things).

enum class WordClass {
  det, adj, n_person, n_thing, n_place, conj, v_motion, v_transfer,
  v_stative, adv, num,
};

namespace toy {

struct ClassSpec {
  WordClass cls;
  const char* alphabet;   // characters owned by this class
  int word_len;           // fixed character length of its words
  std::vector<std::string> words;
};

inline const std::vector<ClassSpec>& class_specs() {
  static const std::vector<ClassSpec> specs = {
      {WordClass::det, "ab", 1, {"a", "b"}},
      {WordClass::adj, "cdef", 2, {"cd", "ce", "df", "dc", "ef", "ec", "fd", "fc"}},
      {WordClass::n_person, "ghijkl", 2,
       {"gh", "gi", "hj", "hk", "ij", "il", "jk", "jl", "kg", "lh"}},
      {WordClass::n_thing, "mnopqr", 2,
       {"mn", "mo", "np", "nq", "op", "or", "pq", "pm", "qr", "rn"}},
      {WordClass::n_place, "stuvwx", 2,
       {"st", "su", "tv", "tw", "uv", "ux", "vw", "vs", "wx", "xt"}},
      {WordClass::conj, "yz", 1, {"y", "z"}},
      {WordClass::v_motion, "ABCDEF", 3,
       {"ABC", "ABE", "ACD", "ADE", "BCD", "BCF", "BDE", "CDF", "DEF", "AEF"}},
      {WordClass::v_transfer, "GHIJKL", 3,
       {"GHI", "GHK", "GIJ", "GJL", "HIK", "HJL", "IJK", "IKL", "JKL", "GKL"}},
      {WordClass::v_stative, "MNOPQR", 2,
       {"MN", "MO", "NP", "OQ", "PQ", "PR", "QM", "RN"}},
      {WordClass::adv, "STUVWX", 2,
       {"ST", "SU", "TV", "UW", "VX", "WS", "XT", "UV"}},
      {WordClass::num, "0123456789", 1,
       {"0", "1", "2", "3", "4", "5", "6", "7", "8", "9"}},
  };
  return specs;
}

// The fixed 60-character content vocabulary of the toy language.
inline Vocab make_vocab() {
  std::vector<std::string> chars;
  for (const auto& spec : class_specs())
    for (const char* p = spec.alphabet; *p; ++p) chars.emplace_back(1, *p);
  return Vocab(std::move(chars));
}

inline const ClassSpec* class_of_char(char c) {
  for (const auto& spec : class_specs())
    for (const char* p = spec.alphabet; *p; ++p)
      if (*p == c) return &spec;
  return nullptr;
}

// Tokenizes a character string into word-class tokens. Returns false when
// any word is malformed (mixed alphabets, unknown char, not in lexicon).
inline bool tokenize(const std::string& text, std::vector<WordClass>* out) {
  out->clear();
  std::size_t i = 0;
  while (i < text.size()) {
    const ClassSpec* spec = class_of_char(text[i]);
    if (spec == nullptr) return false;
    const std::size_t len = static_cast<std::size_t>(spec->word_len);
    if (i + len > text.size()) return false;
    const std::string word = text.substr(i, len);
    for (char c : word)
      if (class_of_char(c) != spec) return false;
    bool in_lexicon = false;
    for (const auto& w : spec->words)
      if (w == word) { in_lexicon = true; break; }
    if (!in_lexicon) return false;
    out->push_back(spec->cls);
    i += len;
  }
  return true;
}

// Recognizer for the clause grammar over word-class tokens:
//   SENT   := CLAUSE (CONJ CLAUSE)*
//   CLAUSE := DET ADJ? NOUN PRED
//   NOUN   := NPER | NTHING | NPLACE
//   PRED   := VMOT DET NPLACE | VTRN (DET|NUM) NTHING | VSTA ADV?
inline bool accept_classes(const std::vector<WordClass>& toks) {
  std::size_t i = 0;
  auto at = [&](WordClass c) { return i < toks.size() && toks[i] == c; };
  auto is_noun = [&] {
    return at(WordClass::n_person) || at(WordClass::n_thing) || at(WordClass::n_place);
  };
  auto clause = [&]() -> bool {
    if (!at(WordClass::det)) return false;
    ++i;
    if (at(WordClass::adj)) ++i;
    if (!is_noun()) return false;
    ++i;
    if (at(WordClass::v_motion)) {
      ++i;
      if (!at(WordClass::det)) return false;
      ++i;
      if (!at(WordClass::n_place)) return false;
      ++i;
      return true;
    }
    if (at(WordClass::v_transfer)) {
      ++i;
      if (at(WordClass::det) || at(WordClass::num)) ++i;
      else return false;
      if (!at(WordClass::n_thing)) return false;
      ++i;
      return true;
    }
    if (at(WordClass::v_stative)) {
      ++i;
      if (at(WordClass::adv)) ++i;
      return true;
    }
    return false;
  };
  if (!clause()) return false;
  while (i < toks.size()) {
    if (!at(WordClass::conj)) return false;
    ++i;
    if (!clause()) return false;
  }
  return true;
}

// Membership oracle: true iff `text` parses under the generating grammar.
inline bool in_language(const std::string& text) {
  std::vector<WordClass> toks;
  return tokenize(text, &toks) && accept_classes(toks);
}

inline const std::string& pick_word(WordClass cls, Rng& rng) {
  for (const auto& spec : class_specs())
    if (spec.cls == cls)
      return spec.words[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<int>(spec.words.size()) - 1))];
  fail(ErrorKind::contract, "unknown word class");
}

inline std::string generate_clause(Rng& rng) {
  std::string s = pick_word(WordClass::det, rng);
  if (rng.uniform() < 0.4) s += pick_word(WordClass::adj, rng);
  const double noun_roll = rng.uniform();
  s += pick_word(noun_roll < 1.0 / 3 ? WordClass::n_person
                 : noun_roll < 2.0 / 3 ? WordClass::n_thing
                                       : WordClass::n_place,
                 rng);
  const double pred_roll = rng.uniform();
  if (pred_roll < 0.35) {
    s += pick_word(WordClass::v_motion, rng);
    s += pick_word(WordClass::det, rng);
    s += pick_word(WordClass::n_place, rng);
  } else if (pred_roll < 0.70) {
    s += pick_word(WordClass::v_transfer, rng);
    s += pick_word(rng.uniform() < 0.5 ? WordClass::det : WordClass::num, rng);
    s += pick_word(WordClass::n_thing, rng);
  } else {
    s += pick_word(WordClass::v_stative, rng);
    if (rng.uniform() < 0.5) s += pick_word(WordClass::adv, rng);
  }
  return s;
}

constexpr int kMinSentenceChars = 6;
constexpr int kMaxSentenceChars = 32;

inline std::string generate_sentence(Rng& rng) {
  for (;;) {
    const double roll = rng.uniform();
    const int n_clauses = roll < 0.50 ? 1 : roll < 0.85 ? 2 : 3;
    std::string s = generate_clause(rng);
    for (int c = 1; c < n_clauses; ++c) {
      s += pick_word(WordClass::conj, rng);
      s += generate_clause(rng);
    }
    const int len = static_cast<int>(s.size());
    if (len >= kMinSentenceChars && len <= kMaxSentenceChars) return s;
  }
}

}  // namespace toy

// Pure function of (seed, n): n sentences of the toy language.
inline std::vector<TokenSeq> generate_corpus(const Vocab& vocab, std::uint64_t seed,
                                             std::size_t n) {
  require(n >= 1, ErrorKind::empty_corpus, "requested corpus of size 0");
  Rng rng = Rng(seed).split(0x636f7270u /* corpus stream */);
  std::vector<TokenSeq> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(encode(vocab, toy::generate_sentence(rng)));
  return out;
}

// A manufactured wrong/correct sentence pair. Span indices are half-open
// positions into `corrupted`.
struct ErrorRecord {
  TokenSeq clean;
  TokenSeq corrupted;
  int span_start = 0;
  int span_end = 0;
  int orig_len = 0;
  int repl_len = 0;
};

// Replaces one contiguous span of 1..4 tokens with a random string of
// 0..4 content tokens (lengths may differ; length 0 deletes the span).
inline ErrorRecord inject_errors(const Vocab& vocab, const TokenSeq& s,
                                 std::uint64_t seed) {
  require(s.length() >= 6, ErrorKind::too_short,
          "inject_errors needs a sentence of at least 6 tokens");
  Rng rng = Rng(seed).split(0x696e6a65u /* inject stream */);
  const int k = s.length();
  const int orig_len = static_cast<int>(rng.uniform_int(1, 4));
  const int start = static_cast<int>(rng.uniform_int(0, k - orig_len));
  const int repl_len = static_cast<int>(rng.uniform_int(0, 4));
  std::vector<int> repl(static_cast<std::size_t>(repl_len));
  for (;;) {
    for (int& id : repl)
      id = static_cast<int>(rng.uniform_int(0, vocab.n_content() - 1));
    if (repl_len != orig_len) break;
    bool same = true;
    for (int i = 0; i < repl_len; ++i)
      if (repl[static_cast<std::size_t>(i)] != s.ids[static_cast<std::size_t>(start + i)]) {
        same = false;
        break;
      }
    if (!same) break;  // resample only the replacement, keeping lengths
  }
  ErrorRecord rec;
  rec.clean = s;
  rec.corrupted = replace_span(vocab, s, start, start + orig_len, repl);
  rec.span_start = start;
  rec.span_end = start + repl_len;
  rec.orig_len = orig_len;
  rec.repl_len = repl_len;
  return rec;
}

}  // namespace amtl
