#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <tuple>
#include <vector>

#include "amtl/error.hpp"
#include "amtl/model.hpp"
#include "amtl/vocab.hpp"

namespace amtl {

// Scoring-guided span search: mask a window around the most suspicious
// position, refill it with the masked LM at every width/depth combination,
// rescore, and keep the lowest mean-wrongness sentence.

struct CorrectorConfig {
  int width = 2;
  int depth = 4;
  bool include_identity = true;

  void validate() const {
    require(width >= 0 && depth >= 0, ErrorKind::config,
            "corrector width/depth must be >= 0");
  }
};

struct CandidateEdit {
  int p_s = 0;
  int p_e = 0;
  int num = 0;
  bool identity = false;
  TokenSeq filled;
  double norm_score = 0.0;

  int edit_cost() const { return identity ? 0 : (p_e - p_s) + num; }
};

struct CorrectionResult {
  TokenSeq output;
  CandidateEdit chosen;
  int search_passes = 0;     // initial scan plus one per evaluated candidate
  int degenerate_spans = 0;  // fast path: predicted end < start, repaired
};

template <class M>
concept CorrectionModel = requires(const M& m, const TokenSeq& s) {
  { m.score_tokens(s) } -> std::convertible_to<ScoreVector>;
  { m.fill_masks(s) } -> std::convertible_to<TokenSeq>;
  { m.vocab() } -> std::convertible_to<const Vocab&>;
};

template <class P>
concept SpanPolicy = requires(const P& p, const TokenSeq& s) {
  { p.policy_spans(s) } -> std::convertible_to<PolicyOutput>;
};

// Argmax position; ties resolve to the lowest index.
inline int detect_peak(const ScoreVector& scores) {
  require(!scores.empty(), ErrorKind::contract, "detect_peak: empty score vector");
  int best = 0;
  for (int i = 1; i < static_cast<int>(scores.size()); ++i)
    if (scores[static_cast<std::size_t>(i)] > scores[static_cast<std::size_t>(best)])
      best = i;
  return best;
}

// All (p_s, p_e, num) triples around the peak: p_s in [max(0, p_m-width), p_m],
// p_e in [p_m+1, min(k, p_m+1+width)] half-open, num in [0, depth].
inline std::vector<std::tuple<int, int, int>> enumerate_candidates(
    int k, int p_m, const CorrectorConfig& cfg) {
  require(0 <= p_m && p_m < k, ErrorKind::contract, "enumerate_candidates: bad peak");
  std::vector<std::tuple<int, int, int>> out;
  const int s_lo = std::max(0, p_m - cfg.width);
  const int e_hi = std::min(k, p_m + 1 + cfg.width);
  for (int p_s = s_lo; p_s <= p_m; ++p_s)
    for (int p_e = p_m + 1; p_e <= e_hi; ++p_e)
      for (int num = 0; num <= cfg.depth; ++num) out.emplace_back(p_s, p_e, num);
  return out;
}

// Mask [p_s, p_e) with `num` MASK tokens, refill, rescore.
template <CorrectionModel M>
CandidateEdit evaluate_candidate(const TokenSeq& s, int p_s, int p_e, int num,
                                 const M& model) {
  CandidateEdit cand;
  cand.p_s = p_s;
  cand.p_e = p_e;
  cand.num = num;
  const std::vector<int> masks(static_cast<std::size_t>(num), model.vocab().mask_id());
  const TokenSeq masked = replace_span(model.vocab(), s, p_s, p_e, masks);
  cand.filled = model.fill_masks(masked);
  if (cand.filled.length() == 0) {
    cand.norm_score = std::numeric_limits<double>::infinity();
    return cand;
  }
  const ScoreVector scores = model.score_tokens(cand.filled);
  double total = 0.0;
  for (double v : scores) total += v;
  cand.norm_score = total / static_cast<double>(scores.size());
  return cand;
}

namespace detail {

inline bool candidate_precedes(const CandidateEdit& a, const CandidateEdit& b) {
  if (a.norm_score != b.norm_score) return a.norm_score < b.norm_score;
  if (a.edit_cost() != b.edit_cost()) return a.edit_cost() < b.edit_cost();
  if (a.p_s != b.p_s) return a.p_s < b.p_s;
  return a.num < b.num;
}

inline CandidateEdit identity_candidate(const TokenSeq& s, const ScoreVector& scores) {
  CandidateEdit cand;
  cand.identity = true;
  cand.filled = s;
  double total = 0.0;
  for (double v : scores) total += v;
  cand.norm_score = total / static_cast<double>(scores.size());
  return cand;
}

}  // namespace detail

template <CorrectionModel M>
CorrectionResult correct(const TokenSeq& s, const M& model, const CorrectorConfig& cfg) {
  cfg.validate();
  require(s.length() >= 1, ErrorKind::contract, "correct: empty sentence");
  CorrectionResult res;
  const ScoreVector scores = model.score_tokens(s);
  res.search_passes = 1;
  const int p_m = detect_peak(scores);

  CandidateEdit best;
  bool have_best = false;
  if (cfg.include_identity) {
    best = detail::identity_candidate(s, scores);  // reuses the initial scan
    have_best = true;
  }
  for (const auto& [p_s, p_e, num] : enumerate_candidates(s.length(), p_m, cfg)) {
    CandidateEdit cand = evaluate_candidate(s, p_s, p_e, num, model);
    ++res.search_passes;
    if (!have_best || detail::candidate_precedes(cand, best)) {
      best = std::move(cand);
      have_best = true;
    }
  }
  res.chosen = std::move(best);
  res.output = res.chosen.filled;
  return res;
}

inline int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

inline double soft_argmax_value(const std::vector<double>& logits) {
  NoGradGuard ng;
  return soft_argmax(Tensor::from({static_cast<int>(logits.size())}, logits)).value();
}

// Policy-guided fast path: the predicted span replaces the scoring scan
// and the (p_s, p_e) sweep; only the mask count varies.
template <CorrectionModel M, SpanPolicy P>
CorrectionResult correct_fast(const TokenSeq& s, const M& model, const P& policy,
                              const CorrectorConfig& cfg) {
  cfg.validate();
  require(s.length() >= 1, ErrorKind::contract, "correct_fast: empty sentence");
  const int k = s.length();
  CorrectionResult res;
  const PolicyOutput po = policy.policy_spans(s);
  res.search_passes = 1;
  int p_s = std::clamp(round_half_up(soft_argmax_value(po.x_s)), 0, k - 1);
  int p_e = std::clamp(round_half_up(soft_argmax_value(po.x_e)), 0, k);
  if (p_e < p_s) {
    std::swap(p_s, p_e);
    p_e = std::min(p_e + 1, k);
    res.degenerate_spans = 1;
  }

  CandidateEdit best;
  bool have_best = false;
  if (cfg.include_identity) {
    best = detail::identity_candidate(s, model.score_tokens(s));
    ++res.search_passes;
    have_best = true;
  }
  for (int num = 0; num <= cfg.depth; ++num) {
    CandidateEdit cand = evaluate_candidate(s, p_s, p_e, num, model);
    ++res.search_passes;
    if (!have_best || detail::candidate_precedes(cand, best)) {
      best = std::move(cand);
      have_best = true;
    }
  }
  res.chosen = std::move(best);
  res.output = res.chosen.filled;
  return res;
}

}  // namespace amtl
