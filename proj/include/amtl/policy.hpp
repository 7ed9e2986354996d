#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "amtl/corrector.hpp"
#include "amtl/error.hpp"
#include "amtl/grammar.hpp"
#include "amtl/model.hpp"
#include "amtl/optimizer.hpp"
#include "amtl/rng.hpp"
#include "amtl/tensor.hpp"
#include "amtl/vocab.hpp"

namespace amtl {

// Supervision target for the span predictor: start/end position ranges
// plus the overlap coefficient weighting the asymmetric range losses.
struct SpanBounds {
  int S_l = 0;
  int S_h = 0;
  int E_l = 0;
  int E_h = 0;
  double mu = 0.0;
};

// Minimal differing window of `a` against `b`, in a's coordinates, found
// by longest-common-prefix/suffix alignment. Half-open result; zero-width
// when the difference is a pure insertion in b.
inline std::pair<int, int> diff_span(const TokenSeq& a, const TokenSeq& b) {
  require(a.ids != b.ids, ErrorKind::no_diff, "diff_span: sequences are identical");
  const int la = a.length(), lb = b.length();
  const int lmin = std::min(la, lb);
  int p = 0;
  while (p < lmin && a.ids[static_cast<std::size_t>(p)] == b.ids[static_cast<std::size_t>(p)]) ++p;
  int q = 0;
  while (q < lmin - p &&
         a.ids[static_cast<std::size_t>(la - 1 - q)] ==
             b.ids[static_cast<std::size_t>(lb - 1 - q)])
    ++q;
  return {p, la - q};
}

// Element-wise min/max of the two diff spans. The printed end-range rule
// mixes a start index into the min; that reading is available behind
// `strict_printed_form`.
inline SpanBounds range_bounds(int is_wo, int ie_wo, int is_wcw, int ie_wcw,
                               bool strict_printed_form = false) {
  SpanBounds b;
  b.S_l = std::min(is_wo, is_wcw);
  b.S_h = std::max(is_wo, is_wcw);
  b.E_l = strict_printed_form ? std::min(ie_wo, is_wcw) : std::min(ie_wo, ie_wcw);
  b.E_h = std::max(ie_wo, ie_wcw);
  return b;
}

// mu = |intersection|^2 / (|a| * |b|) for two half-open index spans over
// the same sentence. Both spans empty counts as perfect trivial agreement.
inline double overlap_coeff(std::pair<int, int> a, std::pair<int, int> b) {
  require(a.first <= a.second && b.first <= b.second, ErrorKind::contract,
          "overlap_coeff: malformed span");
  const int len_a = a.second - a.first;
  const int len_b = b.second - b.first;
  if (len_a == 0 && len_b == 0) return 1.0;
  if (len_a == 0 || len_b == 0) return 0.0;
  const int inter =
      std::max(0, std::min(a.second, b.second) - std::max(a.first, b.first));
  return static_cast<double>(inter) * inter /
         (static_cast<double>(len_a) * static_cast<double>(len_b));
}

// mu-weighted asymmetric range loss over soft-argmax positions:
//   L = 0.5*L_Rs + 0.5*L_Re with
//   L_R = mu*(sam-lo)^2*e^(lo-sam) + (1-mu)*(sam-hi)^2*e^(sam-hi)
inline Tensor policy_loss(const Tensor& x_s, const Tensor& x_e, const SpanBounds& b) {
  auto range_term = [](const Tensor& logits, int lo, int hi, double mu) {
    Tensor sam = soft_argmax(logits);
    Tensor dl = add_const(sam, -static_cast<double>(lo));
    Tensor low = mul(mul(dl, dl), exp_op(scale(dl, -1.0)));
    Tensor dh = add_const(sam, -static_cast<double>(hi));
    Tensor high = mul(mul(dh, dh), exp_op(dh));
    return add(scale(low, mu), scale(high, 1.0 - mu));
  };
  return scale(add(range_term(x_s, b.S_l, b.S_h, b.mu),
                   range_term(x_e, b.E_l, b.E_h, b.mu)),
               0.5);
}

// ---------------------------------------------------------------------------
// supervision generation and training

struct PolicySample {
  TokenSeq wrong;
  SpanBounds bounds;
};

struct PolicyTrainConfig {
  int n_samples = 2000;      // supervision records to generate
  int epochs = 30;
  int batch = 32;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::uint64_t seed = 1;
  bool use_truth_spans = false;  // ablation: injected spans instead of search output
  bool strict_printed_end_rule = false;

  void validate() const {
    require(n_samples >= 1 && epochs >= 1 && batch >= 1, ErrorKind::config,
            "policy training needs positive n_samples/epochs/batch");
    require(lr > 0.0, ErrorKind::config, "policy lr must be positive");
  }
};

struct PolicySupervisionStats {
  int generated = 0;
  int skipped_no_correction = 0;  // search returned the wrong sentence unchanged
  int skipped_short = 0;
};

// Builds (wrong sentence, span bounds) pairs by corrupting clean sentences
// and diffing the search's correction against both endpoints.
inline std::vector<PolicySample> make_policy_supervision(
    const std::vector<TokenSeq>& clean, const Model& model, const CorrectorConfig& ccfg,
    const PolicyTrainConfig& pcfg, PolicySupervisionStats* stats = nullptr) {
  PolicySupervisionStats local;
  PolicySupervisionStats& st = stats ? *stats : local;
  std::vector<PolicySample> out;
  Rng seed_stream = Rng(pcfg.seed).split(0x706f6c69u /* policy stream */);
  for (std::size_t i = 0; i < clean.size() && static_cast<int>(out.size()) < pcfg.n_samples; ++i) {
    const std::uint64_t rec_seed = seed_stream.next_u64();
    if (clean[i].length() < 6) {
      ++st.skipped_short;
      continue;
    }
    const ErrorRecord rec = inject_errors(model.vocab(), clean[i], rec_seed);
    PolicySample sample;
    sample.wrong = rec.corrupted;
    if (pcfg.use_truth_spans) {
      sample.bounds = SpanBounds{rec.span_start, rec.span_start, rec.span_end,
                                 rec.span_end, 1.0};
    } else {
      const TokenSeq corrected = correct(rec.corrupted, model, ccfg).output;
      if (corrected.ids == rec.corrupted.ids) {
        ++st.skipped_no_correction;
        continue;
      }
      const auto wo = diff_span(rec.corrupted, rec.clean);
      const auto wcw = diff_span(rec.corrupted, corrected);
      sample.bounds = range_bounds(wo.first, wo.second, wcw.first, wcw.second,
                                   pcfg.strict_printed_end_rule);
      sample.bounds.mu = overlap_coeff(wo, wcw);
    }
    out.push_back(std::move(sample));
    ++st.generated;
  }
  return out;
}

// Cache file: `wrong<TAB>S_l<TAB>S_h<TAB>E_l<TAB>E_h<TAB>mu`, regenerable.
inline void write_policy_cache(const std::string& path, const Vocab& v,
                               const std::vector<PolicySample>& samples) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), ErrorKind::io, "cannot write policy cache " + path);
  f.precision(17);
  for (const auto& s : samples)
    f << decode(v, s.wrong) << "\t" << s.bounds.S_l << "\t" << s.bounds.S_h << "\t"
      << s.bounds.E_l << "\t" << s.bounds.E_h << "\t" << s.bounds.mu << "\n";
}

inline std::vector<PolicySample> read_policy_cache(const std::string& path,
                                                   const Vocab& v) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorKind::io, "cannot read policy cache " + path);
  std::vector<PolicySample> out;
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
    require(cols.size() == 6, ErrorKind::corrupt_file,
            path + ":" + std::to_string(lineno) + ": expected 6 fields");
    PolicySample s;
    s.wrong = encode(v, cols[0]);
    try {
      s.bounds.S_l = std::stoi(cols[1]);
      s.bounds.S_h = std::stoi(cols[2]);
      s.bounds.E_l = std::stoi(cols[3]);
      s.bounds.E_h = std::stoi(cols[4]);
      s.bounds.mu = std::stod(cols[5]);
    } catch (const std::exception&) {
      fail(ErrorKind::corrupt_file, path + ":" + std::to_string(lineno) + ": bad field");
    }
    out.push_back(std::move(s));
  }
  return out;
}

struct PolicyTrainResult {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int samples_used = 0;
};

// Trains the policy head on frozen encoder features. Hidden states are
// precomputed once per sample; only the policy parameters update.
inline PolicyTrainResult train_policy_head(Model& model,
                                           const std::vector<PolicySample>& samples,
                                           const PolicyTrainConfig& pcfg) {
  pcfg.validate();
  require(!samples.empty(), ErrorKind::contract, "no policy supervision samples");
  std::vector<Tensor> features;
  features.reserve(samples.size());
  {
    NoGradGuard ng;
    for (const auto& s : samples) {
      Tensor h = model.hidden_states(s.wrong);
      features.push_back(Tensor::from(h.shape(), h.data()));
    }
  }
  std::vector<Tensor> policy_params = model.policy_params();
  AdamW opt(policy_params, pcfg.lr, pcfg.weight_decay);
  Rng order_rng = Rng(pcfg.seed).split(0x706f7264u);
  Rng drop_rng = Rng(pcfg.seed).split(0x70647270u);

  PolicyTrainResult result;
  result.samples_used = static_cast<int>(samples.size());
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  const int total_steps =
      pcfg.epochs * static_cast<int>((samples.size() + pcfg.batch - 1) / pcfg.batch);
  int step = 0;
  for (int epoch = 0; epoch < pcfg.epochs; ++epoch) {
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[static_cast<std::size_t>(
                    order_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    double epoch_loss = 0.0;
    std::size_t b0 = 0;
    while (b0 < idx.size()) {
      const std::size_t b1 = std::min(idx.size(), b0 + static_cast<std::size_t>(pcfg.batch));
      Tensor total = Tensor::scalar(0.0);
      for (std::size_t j = b0; j < b1; ++j) {
        const auto& s = samples[idx[j]];
        auto [xs, xe] = model.policy_logits(features[idx[j]], true, &drop_rng);
        total = add(total, policy_loss(xs, xe, s.bounds));
      }
      total = scale(total, 1.0 / static_cast<double>(b1 - b0));
      require(std::isfinite(total.value()), ErrorKind::divergence,
              "policy loss non-finite at epoch " + std::to_string(epoch));
      epoch_loss += total.value() * static_cast<double>(b1 - b0);
      zero_grad(policy_params);
      backward(total);
      opt.step(linear_then_decay_lr(step, total_steps, pcfg.lr, total_steps / 20));
      ++step;
      b0 = b1;
    }
    epoch_loss /= static_cast<double>(idx.size());
    if (epoch == 0) result.initial_loss = epoch_loss;
    result.final_loss = epoch_loss;
  }
  return result;
}

}  // namespace amtl
