#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "amtl/error.hpp"
#include "amtl/rng.hpp"
#include "amtl/tensor.hpp"
#include "amtl/vocab.hpp"

namespace amtl {

struct ModelConfig {
  int layers = 2;
  int hidden = 128;
  int heads = 4;
  int max_len = 64;
  int vs = 0;  // total vocabulary size including the 4 specials
  double dropout = 0.1;         // encoder and head dropout
  double policy_dropout = 0.5;  // dropout on the policy head input

  int ffn_dim() const { return 2 * hidden; }
  int n_content() const { return vs - 4; }

  void validate() const {
    require(layers >= 1, ErrorKind::config, "layers must be >= 1");
    require(hidden >= 2 && heads >= 1 && hidden % heads == 0, ErrorKind::config,
            "hidden must be a positive multiple of heads");
    require(max_len >= 4, ErrorKind::config, "max_len must be >= 4");
    require(vs >= 8, ErrorKind::config, "vocab size must be >= 8");
    require(dropout >= 0.0 && dropout < 1.0 && policy_dropout >= 0.0 &&
                policy_dropout < 1.0,
            ErrorKind::config, "dropout rates must be in [0, 1)");
  }
};

// Ranked masked-LM prediction at one position: token ids sorted by
// descending confidence with their probabilities.
struct CandidateDistribution {
  int position = 0;
  std::vector<int> ranked_ids;
  std::vector<double> d;
};

// Per-position wrongness probabilities (high = likely erroneous).
using ScoreVector = std::vector<double>;

// Raw start/end position logits from the policy head.
struct PolicyOutput {
  std::vector<double> x_s;
  std::vector<double> x_e;
};

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[4] = {'A', 'M', 'T', 'L'};

// Shared transformer encoder with a masked-LM head (generator), a
// per-token scoring head (discriminator) and a start/end policy head.
// Inference entry points run in eval mode and are safe to call
// concurrently; training owns exclusive mutation of the parameters.
class Model {
 public:
  static Model init(const ModelConfig& cfg, const Vocab& vocab, std::uint64_t seed) {
    cfg.validate();
    require(cfg.vs == vocab.vs(), ErrorKind::config,
            "config vocab size does not match vocabulary");
    Model m(cfg, vocab);
    Rng rng = Rng(seed).split(0x696e6974u /* init stream */);
    const int H = cfg.hidden, F = cfg.ffn_dim(), nc = cfg.n_content();
    auto gauss = [&](std::vector<int> shape, const std::string& name) {
      m.params_.push_back(Tensor::gaussian(std::move(shape), 0.02, rng, true, name));
    };
    auto zeros = [&](std::vector<int> shape, const std::string& name) {
      m.params_.push_back(Tensor::zeros(std::move(shape), true, name));
    };
    auto ones = [&](int n, const std::string& name) {
      m.params_.push_back(Tensor::from({n}, std::vector<double>(n, 1.0), true, name));
    };
    gauss({cfg.vs, H}, "emb.tok");
    gauss({cfg.max_len, H}, "emb.pos");
    ones(H, "emb.ln.g");
    zeros({H}, "emb.ln.b");
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      gauss({H, H}, p + "attn.wq");
      zeros({H}, p + "attn.bq");
      gauss({H, H}, p + "attn.wk");
      zeros({H}, p + "attn.bk");
      gauss({H, H}, p + "attn.wv");
      zeros({H}, p + "attn.bv");
      gauss({H, H}, p + "attn.wo");
      zeros({H}, p + "attn.bo");
      ones(H, p + "ln1.g");
      zeros({H}, p + "ln1.b");
      gauss({H, F}, p + "ffn.w1");
      zeros({F}, p + "ffn.b1");
      gauss({F, H}, p + "ffn.w2");
      zeros({H}, p + "ffn.b2");
      ones(H, p + "ln2.g");
      zeros({H}, p + "ln2.b");
    }
    m.encoder_end_ = m.params_.size();
    gauss({H, nc}, "mlm.w");
    zeros({nc}, "mlm.b");
    m.mlm_end_ = m.params_.size();
    gauss({H, 1}, "score.w");
    zeros({1}, "score.b");
    m.score_end_ = m.params_.size();
    gauss({H, 1}, "policy.ws");
    zeros({1}, "policy.bs");
    gauss({H, 1}, "policy.we");
    zeros({1}, "policy.be");
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }

  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }

  bool is_encoder_param(std::size_t idx) const { return idx < encoder_end_; }

  std::vector<Tensor> encoder_params() const {
    return {params_.begin(), params_.begin() + encoder_end_};
  }
  std::vector<Tensor> mlm_params() const {
    return {params_.begin() + encoder_end_, params_.begin() + mlm_end_};
  }
  std::vector<Tensor> score_params() const {
    return {params_.begin() + mlm_end_, params_.begin() + score_end_};
  }
  std::vector<Tensor> policy_params() const {
    return {params_.begin() + score_end_, params_.end()};
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const Tensor& p : params_) n += p.numel();
    return n;
  }

  // ---- graph-building forwards (training) ----

  // Hidden states for the content positions of `s` (shape [len, hidden]).
  // BOS/EOS are added internally and their rows dropped from the output.
  Tensor hidden_states(const TokenSeq& s, bool train = false, Rng* drop_rng = nullptr) const {
    require(s.length() >= 1, ErrorKind::contract, "empty sentence");
    require(s.length() + 2 <= cfg_.max_len, ErrorKind::length,
            "sentence of " + std::to_string(s.length()) +
                " tokens exceeds max_len " + std::to_string(cfg_.max_len));
    const int H = cfg_.hidden, nh = cfg_.heads, dh = H / nh;
    std::vector<int> ids;
    ids.reserve(s.ids.size() + 2);
    ids.push_back(vocab_.bos_id());
    ids.insert(ids.end(), s.ids.begin(), s.ids.end());
    ids.push_back(vocab_.eos_id());
    const int L = static_cast<int>(ids.size());
    std::vector<int> pos(static_cast<std::size_t>(L));
    std::iota(pos.begin(), pos.end(), 0);

    std::size_t pi = 0;
    auto next = [&]() -> const Tensor& { return params_[pi++]; };
    const Tensor& tok_emb = next();
    const Tensor& pos_emb = next();
    const Tensor& eg = next();
    const Tensor& eb = next();
    Tensor x = layer_norm(add(embedding(tok_emb, ids), embedding(pos_emb, pos)), eg, eb);
    if (train && cfg_.dropout > 0.0) x = dropout(x, cfg_.dropout, *drop_rng);

    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int l = 0; l < cfg_.layers; ++l) {
      const Tensor& wq = next(); const Tensor& bq = next();
      const Tensor& wk = next(); const Tensor& bk = next();
      const Tensor& wv = next(); const Tensor& bv = next();
      const Tensor& wo = next(); const Tensor& bo = next();
      const Tensor& g1 = next(); const Tensor& b1 = next();
      const Tensor& w_in = next(); const Tensor& b_in = next();
      const Tensor& w_out = next(); const Tensor& b_out = next();
      const Tensor& g2 = next(); const Tensor& b2 = next();

      Tensor q = add(matmul(x, wq), bq);
      Tensor k = add(matmul(x, wk), bk);
      Tensor v = add(matmul(x, wv), bv);
      std::vector<Tensor> ctx;
      ctx.reserve(static_cast<std::size_t>(nh));
      for (int h = 0; h < nh; ++h) {
        Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
        Tensor att = softmax(scale(matmul_nt(qh, kh), inv_sqrt_dh));
        ctx.push_back(matmul(att, vh));
      }
      Tensor attn_out = add(matmul(concat_cols(ctx), wo), bo);
      if (train && cfg_.dropout > 0.0) attn_out = dropout(attn_out, cfg_.dropout, *drop_rng);
      x = layer_norm(add(x, attn_out), g1, b1);

      Tensor ff = tanh_op(add(matmul(x, w_in), b_in));
      if (train && cfg_.dropout > 0.0) ff = dropout(ff, cfg_.dropout, *drop_rng);
      ff = add(matmul(ff, w_out), b_out);
      x = layer_norm(add(x, ff), g2, b2);
    }
    std::vector<int> content_rows(static_cast<std::size_t>(L - 2));
    std::iota(content_rows.begin(), content_rows.end(), 1);
    return gather_rows(x, content_rows);
  }

  // Masked-LM logits over content tokens, one row per position. [len, nc]
  Tensor mlm_logits(const Tensor& hidden) const {
    return add(matmul(hidden, params_[encoder_end_]), params_[encoder_end_ + 1]);
  }

  // Raw pre-sigmoid wrongness scores, one per position. [len]
  Tensor score_raw(const Tensor& hidden) const {
    return flatten(add(matmul(hidden, params_[mlm_end_]), params_[mlm_end_ + 1]));
  }

  // Start/end logits from the policy head. [len] each.
  std::pair<Tensor, Tensor> policy_logits(const Tensor& hidden, bool train = false,
                                          Rng* drop_rng = nullptr) const {
    Tensor h = hidden;
    if (train && cfg_.policy_dropout > 0.0) h = dropout(h, cfg_.policy_dropout, *drop_rng);
    Tensor xs = flatten(add(matmul(h, params_[score_end_]), params_[score_end_ + 1]));
    Tensor xe = flatten(add(matmul(h, params_[score_end_ + 2]), params_[score_end_ + 3]));
    return {xs, xe};
  }

  // ---- eval-mode inference ----

  ScoreVector score_tokens(const TokenSeq& s) const {
    require(s.length() >= 1, ErrorKind::contract, "score_tokens: empty sentence");
    NoGradGuard ng;
    Tensor probs = sigmoid(score_raw(hidden_states(s)));
    return probs.data();
  }

  // Softmax rows over content tokens at the given positions.
  std::vector<std::vector<double>> mlm_probs_at(const TokenSeq& s,
                                                const std::vector<int>& positions) const {
    NoGradGuard ng;
    Tensor logits = mlm_logits(hidden_states(s));
    const int nc = cfg_.n_content();
    std::vector<std::vector<double>> out;
    out.reserve(positions.size());
    for (int pos : positions) {
      require(pos >= 0 && pos < s.length(), ErrorKind::contract,
              "mlm position out of range");
      const double* row = logits.data().data() + static_cast<std::size_t>(pos) * nc;
      double mx = row[0];
      for (int j = 1; j < nc; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      std::vector<double> p(static_cast<std::size_t>(nc));
      for (int j = 0; j < nc; ++j) {
        p[static_cast<std::size_t>(j)] = std::exp(row[j] - mx);
        sum += p[static_cast<std::size_t>(j)];
      }
      for (double& v : p) v /= sum;
      out.push_back(std::move(p));
    }
    return out;
  }

  // Ranked candidate distributions at several masked positions, sharing
  // one forward pass.
  std::vector<CandidateDistribution> mlm_distributions_at(
      const TokenSeq& s, const std::vector<int>& positions) const {
    for (int pos : positions) {
      require(pos >= 0 && pos < s.length(), ErrorKind::contract,
              "mlm_distribution: position out of range");
      require(s.ids[static_cast<std::size_t>(pos)] == vocab_.mask_id(),
              ErrorKind::contract, "mlm_distribution: position does not hold MASK");
    }
    const auto rows = mlm_probs_at(s, positions);
    const int nc = cfg_.n_content();
    std::vector<CandidateDistribution> out;
    out.reserve(positions.size());
    for (std::size_t r = 0; r < positions.size(); ++r) {
      const auto& probs = rows[r];
      CandidateDistribution dist;
      dist.position = positions[r];
      dist.ranked_ids.resize(static_cast<std::size_t>(nc));
      std::iota(dist.ranked_ids.begin(), dist.ranked_ids.end(), 0);
      std::sort(dist.ranked_ids.begin(), dist.ranked_ids.end(), [&](int a, int b) {
        const double pa = probs[static_cast<std::size_t>(a)];
        const double pb = probs[static_cast<std::size_t>(b)];
        return pa != pb ? pa > pb : a < b;
      });
      dist.d.reserve(static_cast<std::size_t>(nc));
      for (int id : dist.ranked_ids) dist.d.push_back(probs[static_cast<std::size_t>(id)]);
      out.push_back(std::move(dist));
    }
    return out;
  }

  CandidateDistribution mlm_distribution(const TokenSeq& s, int position) const {
    return mlm_distributions_at(s, {position})[0];
  }

  // Fills every MASK with its argmax content token in one forward pass.
  TokenSeq fill_masks(const TokenSeq& s) const {
    std::vector<int> mask_pos;
    for (int i = 0; i < s.length(); ++i)
      if (s.ids[static_cast<std::size_t>(i)] == vocab_.mask_id()) mask_pos.push_back(i);
    if (mask_pos.empty()) return s;
    const auto rows = mlm_probs_at(s, mask_pos);
    std::vector<int> ids = s.ids;
    for (std::size_t r = 0; r < mask_pos.size(); ++r) {
      const auto& p = rows[r];
      int best = 0;
      for (int j = 1; j < static_cast<int>(p.size()); ++j)
        if (p[static_cast<std::size_t>(j)] > p[static_cast<std::size_t>(best)]) best = j;
      ids[static_cast<std::size_t>(mask_pos[r])] = best;
    }
    return make_token_seq(vocab_, std::move(ids));
  }

  PolicyOutput policy_spans(const TokenSeq& s) const {
    require(s.length() >= 1, ErrorKind::contract, "policy_spans: empty sentence");
    NoGradGuard ng;
    auto [xs, xe] = policy_logits(hidden_states(s));
    return PolicyOutput{xs.data(), xe.data()};
  }

  // ---- checkpoint io ----
  // Layout (little-endian):
  //   magic 'AMTL' | u32 version | u32 layers,hidden,heads,max_len,vs
  //   | f64 dropout, policy_dropout | u32 vocab_bytes | vocab chars (UTF-8)
  //   | u64 n_params | n_params f64 values in declaration order

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::io, "cannot write checkpoint " + path);
    f.write(kCheckpointMagic, 4);
    write_u32(f, kCheckpointVersion);
    write_u32(f, static_cast<std::uint32_t>(cfg_.layers));
    write_u32(f, static_cast<std::uint32_t>(cfg_.hidden));
    write_u32(f, static_cast<std::uint32_t>(cfg_.heads));
    write_u32(f, static_cast<std::uint32_t>(cfg_.max_len));
    write_u32(f, static_cast<std::uint32_t>(cfg_.vs));
    write_f64(f, cfg_.dropout);
    write_f64(f, cfg_.policy_dropout);
    const std::string chars = vocab_.joined_chars();
    write_u32(f, static_cast<std::uint32_t>(chars.size()));
    f.write(chars.data(), static_cast<std::streamsize>(chars.size()));
    write_u64(f, param_count());
    for (const Tensor& p : params_)
      for (double v : p.data()) write_f64(f, v);
    require(f.good(), ErrorKind::io, "write failed for checkpoint " + path);
  }

  static Model load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::io, "cannot read checkpoint " + path);
    char magic[4] = {};
    f.read(magic, 4);
    require(f.gcount() == 4 && std::memcmp(magic, kCheckpointMagic, 4) == 0,
            ErrorKind::corrupt_file, "bad checkpoint magic in " + path);
    const std::uint32_t version = read_u32(f, path);
    require(version == kCheckpointVersion, ErrorKind::version_mismatch,
            "checkpoint " + path + " has format version " + std::to_string(version) +
                ", expected " + std::to_string(kCheckpointVersion));
    ModelConfig cfg;
    cfg.layers = static_cast<int>(read_u32(f, path));
    cfg.hidden = static_cast<int>(read_u32(f, path));
    cfg.heads = static_cast<int>(read_u32(f, path));
    cfg.max_len = static_cast<int>(read_u32(f, path));
    cfg.vs = static_cast<int>(read_u32(f, path));
    cfg.dropout = read_f64(f, path);
    cfg.policy_dropout = read_f64(f, path);
    const std::uint32_t nbytes = read_u32(f, path);
    std::string chars(nbytes, '\0');
    f.read(chars.data(), static_cast<std::streamsize>(nbytes));
    require(f.gcount() == static_cast<std::streamsize>(nbytes), ErrorKind::corrupt_file,
            "truncated vocabulary in " + path);
    Vocab vocab(utf8_split(chars));
    require(vocab.vs() == cfg.vs, ErrorKind::corrupt_file,
            "vocabulary does not match header in " + path);
    Model m = Model::init(cfg, vocab, 0);
    const std::uint64_t n_params = read_u64(f, path);
    require(n_params == m.param_count(), ErrorKind::corrupt_file,
            "parameter count mismatch in " + path);
    for (Tensor& p : m.params_)
      for (double& v : p.data()) v = read_f64(f, path);
    f.peek();
    require(f.eof(), ErrorKind::corrupt_file, "trailing bytes in " + path);
    return m;
  }

  // Deep copy with independent parameter storage.
  Model clone() const {
    Model m = Model::init(cfg_, vocab_, 0);
    for (std::size_t i = 0; i < params_.size(); ++i)
      m.params_[i].data() = params_[i].data();
    return m;
  }

 private:
  Model(const ModelConfig& cfg, const Vocab& vocab) : cfg_(cfg), vocab_(vocab) {}

  static void write_u32(std::ofstream& f, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    f.write(b, 4);
  }
  static void write_u64(std::ofstream& f, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    f.write(b, 8);
  }
  static void write_f64(std::ofstream& f, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    write_u64(f, v);
  }
  static std::uint32_t read_u32(std::ifstream& f, const std::string& path) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    require(f.gcount() == 4, ErrorKind::corrupt_file, "truncated checkpoint " + path);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  static std::uint64_t read_u64(std::ifstream& f, const std::string& path) {
    unsigned char b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    require(f.gcount() == 8, ErrorKind::corrupt_file, "truncated checkpoint " + path);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  static double read_f64(std::ifstream& f, const std::string& path) {
    const std::uint64_t v = read_u64(f, path);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }

  ModelConfig cfg_;
  Vocab vocab_;
  std::vector<Tensor> params_;
  std::size_t encoder_end_ = 0;
  std::size_t mlm_end_ = 0;
  std::size_t score_end_ = 0;
};

}  // namespace amtl
