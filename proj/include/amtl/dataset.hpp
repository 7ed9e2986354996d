#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "amtl/error.hpp"
#include "amtl/grammar.hpp"
#include "amtl/vocab.hpp"

namespace amtl {

// Plain clean corpus: one sentence per line.
inline void write_sentences(const std::string& path, const Vocab& v,
                            const std::vector<TokenSeq>& sents) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), ErrorKind::io, "cannot write " + path);
  for (const auto& s : sents) f << decode(v, s) << "\n";
}

inline std::vector<TokenSeq> read_sentences(const std::string& path, const Vocab& v) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorKind::io, "cannot read " + path);
  std::vector<TokenSeq> out;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    out.push_back(encode(v, line));
  }
  return out;
}

// Pair dataset: one record per line, `corrupted<TAB>clean<TAB>span_start<TAB>span_end`
// with the span half-open in corrupted coordinates.
inline void write_pairs(const std::string& path, const Vocab& v,
                        const std::vector<ErrorRecord>& recs) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), ErrorKind::io, "cannot write " + path);
  for (const auto& r : recs)
    f << decode(v, r.corrupted) << "\t" << decode(v, r.clean) << "\t"
      << r.span_start << "\t" << r.span_end << "\n";
}

inline std::vector<ErrorRecord> read_pairs(const std::string& path, const Vocab& v) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorKind::io, "cannot read " + path);
  std::vector<ErrorRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t pos = 0;
    for (;;) {
      const std::size_t tab = line.find('\t', pos);
      if (tab == std::string::npos) {
        cols.push_back(line.substr(pos));
        break;
      }
      cols.push_back(line.substr(pos, tab - pos));
      pos = tab + 1;
    }
    require(cols.size() == 4, ErrorKind::corrupt_file,
            path + ":" + std::to_string(lineno) + ": expected 4 tab-separated fields");
    ErrorRecord r;
    r.corrupted = encode(v, cols[0]);
    r.clean = encode(v, cols[1]);
    try {
      r.span_start = std::stoi(cols[2]);
      r.span_end = std::stoi(cols[3]);
    } catch (const std::exception&) {
      fail(ErrorKind::corrupt_file,
           path + ":" + std::to_string(lineno) + ": bad span index");
    }
    require(0 <= r.span_start && r.span_start <= r.span_end &&
                r.span_end <= r.corrupted.length(),
            ErrorKind::corrupt_file,
            path + ":" + std::to_string(lineno) + ": span out of range");
    r.repl_len = r.span_end - r.span_start;
    r.orig_len = r.clean.length() - r.corrupted.length() + r.repl_len;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace amtl
