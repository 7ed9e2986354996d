#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "amtl/dataset.hpp"
#include "amtl/grammar.hpp"
#include "amtl/vocab.hpp"

using amtl::Error;
using amtl::ErrorKind;
using amtl::ErrorRecord;
using amtl::TokenSeq;
using amtl::Vocab;

namespace {

const Vocab& vocab() {
  static const Vocab v = amtl::toy::make_vocab();
  return v;
}

}  // namespace

TEST(Vocab, SixtyContentCharsAndSpecials) {
  EXPECT_EQ(vocab().n_content(), 60);
  EXPECT_EQ(vocab().vs(), 64);
  EXPECT_TRUE(vocab().is_special(vocab().mask_id()));
  EXPECT_FALSE(vocab().is_content(vocab().eos_id()));
}

TEST(Vocab, EncodeDecodeRoundTrip) {
  EXPECT_EQ(amtl::encode(vocab(), "").length(), 0);
  const auto corpus = amtl::generate_corpus(vocab(), 5, 200);
  for (const auto& s : corpus) {
    const std::string text = amtl::decode(vocab(), s);
    EXPECT_EQ(amtl::encode(vocab(), text).ids, s.ids);
  }
}

TEST(Vocab, UnknownCharErrorNamesTheOffender) {
  try {
    amtl::encode(vocab(), "ab#cd");
    FAIL() << "expected unknown_symbol error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::unknown_symbol);
    EXPECT_NE(std::string(e.what()).find("#"), std::string::npos);
  }
}

TEST(Corpus, DeterministicInSeedAndCount) {
  const auto a = amtl::generate_corpus(vocab(), 1, 3);
  const auto b = amtl::generate_corpus(vocab(), 1, 3);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].ids, b[i].ids);
  const auto c = amtl::generate_corpus(vocab(), 2, 3);
  EXPECT_NE(amtl::decode(vocab(), a[0]), amtl::decode(vocab(), c[0]));
}

TEST(Corpus, LengthsWithinGrammarBounds) {
  const auto corpus = amtl::generate_corpus(vocab(), 3, 500);
  for (const auto& s : corpus) {
    EXPECT_GE(s.length(), 6);
    EXPECT_LE(s.length(), 32);
    EXPECT_EQ(s.k, s.length());
  }
}

TEST(Corpus, ZeroSentencesIsAnError) {
  try {
    amtl::generate_corpus(vocab(), 1, 0);
    FAIL() << "expected empty_corpus error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::empty_corpus);
  }
}

TEST(Corpus, GrammarOracleAcceptsEverySentence) {
  const auto corpus = amtl::generate_corpus(vocab(), 11, 1000);
  for (const auto& s : corpus)
    EXPECT_TRUE(amtl::toy::in_language(amtl::decode(vocab(), s)))
        << amtl::decode(vocab(), s);
}

TEST(InjectErrors, EqualLengthsWhenReplEqualsOrig) {
  const auto corpus = amtl::generate_corpus(vocab(), 21, 400);
  int seen = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const ErrorRecord r = amtl::inject_errors(vocab(), corpus[i], 1000 + i);
    if (r.repl_len == r.orig_len) {
      EXPECT_EQ(r.corrupted.length(), r.clean.length());
      ++seen;
    }
    if (r.repl_len == 0) {
      EXPECT_EQ(r.corrupted.length(), r.clean.length() - r.orig_len);
    }
    EXPECT_EQ(r.span_end - r.span_start, r.repl_len);
    EXPECT_NE(r.corrupted.ids, r.clean.ids);
  }
  EXPECT_GT(seen, 0);
}

TEST(InjectErrors, CorruptionConfinedToRecordedSpan) {
  // clean must be reconstructable by swapping the recorded span back in
  const auto corpus = amtl::generate_corpus(vocab(), 23, 500);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const ErrorRecord r = amtl::inject_errors(vocab(), corpus[i], 77 * i + 5);
    std::vector<int> orig_span(r.clean.ids.begin() + r.span_start,
                               r.clean.ids.begin() + r.span_start + r.orig_len);
    const TokenSeq rebuilt =
        amtl::replace_span(vocab(), r.corrupted, r.span_start, r.span_end, orig_span);
    EXPECT_EQ(rebuilt.ids, r.clean.ids);
    for (int id :
         std::vector<int>(r.corrupted.ids.begin() + r.span_start,
                          r.corrupted.ids.begin() + r.span_end))
      EXPECT_TRUE(vocab().is_content(id));
  }
}

TEST(InjectErrors, TooShortSentenceIsRejected) {
  const TokenSeq s = amtl::encode(vocab(), "abhj0");
  try {
    amtl::inject_errors(vocab(), s, 1);
    FAIL() << "expected too_short error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::too_short);
  }
}

TEST(InjectErrors, JointLengthFrequenciesUniform) {
  // counting oracle over 10k injections: 20 (orig, repl) cells, each 5%
  const auto corpus = amtl::generate_corpus(vocab(), 29, 1000);
  std::map<std::pair<int, int>, int> counts;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const ErrorRecord r =
        amtl::inject_errors(vocab(), corpus[static_cast<std::size_t>(i) % corpus.size()],
                            static_cast<std::uint64_t>(i));
    counts[{r.orig_len, r.repl_len}]++;
  }
  EXPECT_EQ(counts.size(), 20u);
  for (const auto& [cell, c] : counts) {
    const double freq = static_cast<double>(c) / n;
    EXPECT_NEAR(freq, 0.05, 0.02) << "cell (" << cell.first << "," << cell.second << ")";
  }
}

TEST(InjectErrors, CorruptionBreaksGrammarMembership) {
  const auto corpus = amtl::generate_corpus(vocab(), 37, 1000);
  int broken = 0;
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    const ErrorRecord r =
        amtl::inject_errors(vocab(), corpus[static_cast<std::size_t>(i) % corpus.size()],
                            static_cast<std::uint64_t>(9000 + i));
    if (!amtl::toy::in_language(amtl::decode(vocab(), r.corrupted))) ++broken;
  }
  EXPECT_GE(static_cast<double>(broken) / n, 0.95);
}

TEST(DatasetIo, SentenceAndPairFilesRoundTrip) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "amtl_dataset_test";
  fs::create_directories(dir);
  const auto corpus = amtl::generate_corpus(vocab(), 41, 50);
  const std::string sent_path = (dir / "clean.txt").string();
  amtl::write_sentences(sent_path, vocab(), corpus);
  const auto back = amtl::read_sentences(sent_path, vocab());
  ASSERT_EQ(back.size(), corpus.size());
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_EQ(back[i].ids, corpus[i].ids);

  std::vector<ErrorRecord> recs;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    recs.push_back(amtl::inject_errors(vocab(), corpus[i], i));
  const std::string pair_path = (dir / "pairs.tsv").string();
  amtl::write_pairs(pair_path, vocab(), recs);
  const auto pairs = amtl::read_pairs(pair_path, vocab());
  ASSERT_EQ(pairs.size(), recs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(pairs[i].corrupted.ids, recs[i].corrupted.ids);
    EXPECT_EQ(pairs[i].clean.ids, recs[i].clean.ids);
    EXPECT_EQ(pairs[i].span_start, recs[i].span_start);
    EXPECT_EQ(pairs[i].span_end, recs[i].span_end);
    EXPECT_EQ(pairs[i].orig_len, recs[i].orig_len);
    EXPECT_EQ(pairs[i].repl_len, recs[i].repl_len);
  }
  fs::remove_all(dir);
}
