#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "patchlens/model/config.hpp"
#include "patchlens/model/data.hpp"
#include "patchlens/nn/tape.hpp"

namespace patchlens::model {

using nn::Matrix;
using nn::Tape;
using nn::Var;

/// Insertion / deletion pointers over a bug of n symbols; both in [0, n].
struct PointerPair {
  std::size_t insert = 0;
  std::size_t del = 0;
  friend bool operator==(const PointerPair&, const PointerPair&) = default;
};

template <class T>
struct PointerScores {
  std::vector<T> insert_log_probs;  // n + 1 entries
  Matrix<T> delete_logits;          // 1 x (n + 1), unnormalised

  /// log P(del = j | insert = i), renormalised over j >= i.
  std::vector<T> delete_log_probs(std::size_t insert) const {
    Matrix<T> mask = delete_mask(static_cast<std::size_t>(delete_logits.cols()), insert);
    Matrix<T> lp = nn::log_softmax_rows<T>(delete_logits, &mask);
    return {lp.data(), lp.data() + lp.size()};
  }

  static Matrix<T> delete_mask(std::size_t width, std::size_t insert) {
    Matrix<T> m = Matrix<T>::Zero(1, static_cast<Eigen::Index>(width));
    for (std::size_t j = 0; j < insert && j < width; ++j) m(0, static_cast<Eigen::Index>(j)) = -std::numeric_limits<T>::infinity();
    return m;
  }
};

/// Per-sample teacher-forced statistics.
template <class T>
struct ForwardStats {
  T loss = 0;
  std::size_t positions = 0;  // scored decisions (tokens, plus pointers for edit)
  std::size_t correct = 0;
  T gold_prob_sum = 0;        // over decoder tokens only
  std::size_t gold_tokens = 0;

  double token_acc() const { return positions == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(positions); }
  double mean_gold_prob() const {
    return gold_tokens == 0 ? 0.0 : static_cast<double>(gold_prob_sum) / static_cast<double>(gold_tokens);
  }
};

/// Cross-attention weights captured during a decoder pass: one matrix per
/// (layer, head), rows = target positions, cols = source positions.
template <class T>
struct AttentionTrace {
  std::vector<Matrix<T>> cross;
};

/// Transformer encoder-decoder for line repair. The edit variants add two
/// pointer heads over the buggy span and condition the decoder on the chosen
/// span; the context variants add a learned bias to cross-attention logits
/// on buggy source positions.
template <class T>
class RepairModel {
public:
  RepairModel(ModelConfig cfg, Vocab vocab) : cfg_(std::move(cfg)), vocab_(std::move(vocab)) {
    cfg_.validate();
    declare();
    initialize();
  }

  const ModelConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  nn::ParameterSet<T>& params() { return params_; }
  const nn::ParameterSet<T>& params() const { return params_; }

  /// When false, the context bias is skipped entirely (as if absent).
  void set_context_bias_enabled(bool on) { bias_enabled_ = on; }
  bool has_context_bias() const { return uses_context(cfg_.variant); }
  void set_context_bias(T value) { params_.at("ctx.bias").value(0, 0) = value; }
  T context_bias() const { return params_.at("ctx.bias").value(0, 0); }

  // ---------------------------------------------------------------------
  // Training-time forward.

  /// Builds the loss for one sample on `tape`. Dropout is active only when
  /// `rng` is given.
  template <class Rng = std::mt19937_64>
  Var forward_train(Tape<T>& tape, const Sample& s, ForwardStats<T>* stats = nullptr, Rng* rng = nullptr) {
    check_sample(s);
    Var enc = encode_var(tape, s.src, rng);
    std::vector<Var> terms;
    std::vector<T> weights;
    ForwardStats<T> st;

    std::optional<PointerPair> gold;
    if (is_edit(cfg_.variant)) {
      gold = PointerPair{s.script.insert_ptr, s.script.delete_ptr};
      auto [ins_logits, del_logits] = pointer_logits(tape, enc, s.bug_start, s.bug_len);
      Var ins_ce = tape.cross_entropy(ins_logits, {static_cast<int>(gold->insert)});
      Matrix<T> mask = PointerScores<T>::delete_mask(s.bug_len + 1, gold->insert);
      Var del_ce = tape.cross_entropy(del_logits, {static_cast<int>(gold->del)}, &mask);
      terms.push_back(ins_ce);
      weights.push_back(static_cast<T>(cfg_.insert_loss_weight));
      terms.push_back(del_ce);
      weights.push_back(static_cast<T>(cfg_.delete_loss_weight));
      st.positions += 2;
      st.correct += argmax(tape.value(ins_logits), nullptr) == gold->insert;
      st.correct += argmax(tape.value(del_logits), &mask) == gold->del;
    }

    Var memory = decoder_memory_var(tape, enc, s, gold);
    const auto& tgt = s.target(cfg_.variant);
    std::vector<int> dec_in{Vocab::kBos};
    dec_in.insert(dec_in.end(), tgt.begin(), tgt.end());
    std::vector<int> dec_out(tgt.begin(), tgt.end());
    dec_out.push_back(Vocab::kEos);
    Var logits = decode_var(tape, dec_in, memory, s.bug_columns(), rng, nullptr);
    Var tok_ce = tape.cross_entropy(logits, dec_out);
    terms.push_back(tok_ce);
    weights.push_back(static_cast<T>(cfg_.token_loss_weight));

    const auto& lv = tape.value(logits);
    for (Eigen::Index i = 0; i < lv.rows(); ++i) {
      Eigen::Index best;
      lv.row(i).maxCoeff(&best);
      st.correct += best == dec_out[static_cast<std::size_t>(i)];
      ++st.positions;
      const T mx = lv.row(i).maxCoeff();
      const T z = (lv.row(i).array() - mx).exp().sum();
      st.gold_prob_sum += std::exp(lv(i, dec_out[static_cast<std::size_t>(i)]) - mx) / z;
      ++st.gold_tokens;
    }
    Var loss = tape.weighted_sum(std::move(terms), std::move(weights));
    st.loss = tape.scalar(loss);
    if (stats) *stats = st;
    return loss;
  }

  // ---------------------------------------------------------------------
  // Inference pieces (evaluation only, no gradients).

  /// Final encoder states, one row per source position.
  Matrix<T> encode(const std::vector<int>& src) {
    Tape<T> tape(false);
    return tape.value(encode_var(tape, src, static_cast<std::mt19937_64*>(nullptr)));
  }

  PointerScores<T> pointer_scores(const Matrix<T>& enc, std::size_t bug_start, std::size_t bug_len) {
    Tape<T> tape(false);
    Var e = tape.view(enc);
    auto [ins, del] = pointer_logits(tape, e, bug_start, bug_len);
    Matrix<T> lp = nn::log_softmax_rows<T>(tape.value(ins));
    PointerScores<T> out;
    out.insert_log_probs.assign(lp.data(), lp.data() + lp.size());
    out.delete_logits = tape.value(del);
    return out;
  }

  /// Encoder states as seen by the decoder; for edit variants the chosen
  /// pointers are marked on the buggy span.
  Matrix<T> decoder_memory(const Matrix<T>& enc, const Sample& s, std::optional<PointerPair> ptrs) {
    Tape<T> tape(false);
    Var e = tape.view(enc);
    return tape.value(decoder_memory_var(tape, e, s, ptrs));
  }

  /// Log-probabilities over the vocabulary for the position after `prefix`
  /// (which starts with <s>).
  std::vector<T> next_log_probs(const Matrix<T>& memory, const std::vector<char>& bug_cols,
                                const std::vector<int>& prefix) {
    Tape<T> tape(false);
    Var m = tape.view(memory);
    Var logits = decode_var(tape, prefix, m, bug_cols, static_cast<std::mt19937_64*>(nullptr), nullptr);
    const auto& lv = tape.value(logits);
    Matrix<T> last = lv.row(lv.rows() - 1);
    Matrix<T> lp = nn::log_softmax_rows<T>(last);
    return {lp.data(), lp.data() + lp.size()};
  }

  /// Log-probability rows for every position of a teacher-forced pass.
  Matrix<T> sequence_log_probs(const Matrix<T>& memory, const std::vector<char>& bug_cols,
                               const std::vector<int>& dec_in, AttentionTrace<T>* trace = nullptr) {
    Tape<T> tape(false);
    Var m = tape.view(memory);
    Var logits = decode_var(tape, dec_in, m, bug_cols, static_cast<std::mt19937_64*>(nullptr), trace);
    return nn::log_softmax_rows<T>(tape.value(logits));
  }

  /// Deterministic re-initialisation from cfg.seed.
  void initialize() {
    std::mt19937_64 rng(cfg_.seed);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      const std::string& n = p.name;
      if (n.ends_with(".g")) {
        p.value.setOnes();
      } else if (n == "emb") {
        std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(cfg_.d_model)));
        for (Eigen::Index k = 0; k < p.value.size(); ++k) p.value.data()[k] = static_cast<T>(dist(rng));
      } else if (n == "ctx.bias") {
        p.value(0, 0) = T(1);
      } else if (n.ends_with(".b") || n.starts_with("mark.")) {
        p.value.setZero();
        if (n.starts_with("mark.")) {
          std::normal_distribution<double> dist(0.0, 0.1);
          for (Eigen::Index k = 0; k < p.value.size(); ++k) p.value.data()[k] = static_cast<T>(dist(rng));
        }
      } else {
        const double limit = std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (Eigen::Index k = 0; k < p.value.size(); ++k) p.value.data()[k] = static_cast<T>(dist(rng));
      }
    }
  }

private:
  ModelConfig cfg_;
  Vocab vocab_;
  nn::ParameterSet<T> params_;
  bool bias_enabled_ = true;

  Eigen::Index d() const { return cfg_.d_model; }

  void declare() {
    const Eigen::Index dm = d(), ff = cfg_.ff_dim, V = static_cast<Eigen::Index>(vocab_.size());
    params_.add("emb", V, dm);
    auto attn = [&](const std::string& pre) {
      for (const char* m : {"q", "k", "v", "o"}) {
        params_.add(pre + ".w" + m, dm, dm);
        params_.add(pre + ".w" + m + ".b", 1, dm);
      }
    };
    auto norm = [&](const std::string& pre) {
      params_.add(pre + ".g", 1, dm);
      params_.add(pre + ".b", 1, dm);
    };
    auto ffn = [&](const std::string& pre) {
      params_.add(pre + ".w1", dm, ff);
      params_.add(pre + ".w1.b", 1, ff);
      params_.add(pre + ".w2", ff, dm);
      params_.add(pre + ".w2.b", 1, dm);
    };
    for (int l = 0; l < cfg_.n_enc_layers; ++l) {
      const std::string p = "enc." + std::to_string(l);
      norm(p + ".ln1");
      attn(p + ".self");
      norm(p + ".ln2");
      ffn(p + ".ff");
    }
    norm("enc.ln");
    for (int l = 0; l < cfg_.n_dec_layers; ++l) {
      const std::string p = "dec." + std::to_string(l);
      norm(p + ".ln1");
      attn(p + ".self");
      norm(p + ".ln2");
      attn(p + ".cross");
      norm(p + ".ln3");
      ffn(p + ".ff");
    }
    norm("dec.ln");
    params_.add("out.w", dm, V);
    params_.add("out.w.b", 1, V);
    if (is_edit(cfg_.variant)) {
      params_.add("ptr.ins", dm, 1);
      params_.add("ptr.del", dm, 1);
      params_.add("mark.ins", 1, dm);
      params_.add("mark.del", 1, dm);
    }
    if (uses_context(cfg_.variant)) params_.add("ctx.bias", 1, 1);
  }

  Var P(Tape<T>& t, const std::string& name) { return t.param(params_.at(name)); }

  void check_sample(const Sample& s) const {
    if (s.src.size() > static_cast<std::size_t>(cfg_.max_src_len)) throw Error("sample source exceeds max_src_len");
    if (s.target(cfg_.variant).size() + 1 > static_cast<std::size_t>(cfg_.max_tgt_len))
      throw Error("sample target exceeds max_tgt_len");
    if (s.bug_start + s.bug_len >= s.src.size()) throw Error("sample bug span out of range");
  }

  static std::size_t argmax(const Matrix<T>& row, const Matrix<T>* mask) {
    Matrix<T> v = row;
    if (mask) v += *mask;
    Eigen::Index best;
    v.row(0).maxCoeff(&best);
    return static_cast<std::size_t>(best);
  }

  Matrix<T> positional(std::size_t len) const {
    Matrix<T> pe(static_cast<Eigen::Index>(len), d());
    for (std::size_t pos = 0; pos < len; ++pos) {
      for (Eigen::Index i = 0; i < d(); i += 2) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d()));
        pe(static_cast<Eigen::Index>(pos), i) = static_cast<T>(std::sin(static_cast<double>(pos) * freq));
        if (i + 1 < d()) pe(static_cast<Eigen::Index>(pos), i + 1) = static_cast<T>(std::cos(static_cast<double>(pos) * freq));
      }
    }
    return pe;
  }

  template <class Rng>
  Var embed(Tape<T>& t, const std::vector<int>& ids, Rng* rng) {
    Var e = t.gather_rows(P(t, "emb"), ids);
    e = t.scale(e, static_cast<T>(std::sqrt(static_cast<double>(d()))));
    e = t.add(e, t.constant(positional(ids.size())));
    return drop(t, e, rng);
  }

  template <class Rng>
  Var drop(Tape<T>& t, Var x, Rng* rng) {
    if (rng == nullptr || cfg_.dropout <= 0.0) return x;
    return t.dropout(x, static_cast<T>(cfg_.dropout), *rng);
  }

  Var linear(Tape<T>& t, Var x, const std::string& w) { return t.add_row(t.matmul(x, P(t, w)), P(t, w + ".b")); }

  Var layer_norm(Tape<T>& t, Var x, const std::string& pre) { return t.layer_norm(x, P(t, pre + ".g"), P(t, pre + ".b")); }

  Var attention(Tape<T>& t, const std::string& pre, Var q_in, Var kv_in, const Matrix<T>* mask,
                const std::vector<char>* bias_cols, AttentionTrace<T>* trace) {
    Var q = linear(t, q_in, pre + ".wq");
    Var k = linear(t, kv_in, pre + ".wk");
    Var v = linear(t, kv_in, pre + ".wv");
    const Eigen::Index heads = cfg_.n_heads, dh = d() / heads;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<Var> outs;
    for (Eigen::Index h = 0; h < heads; ++h) {
      Var qh = t.slice_cols(q, h * dh, dh);
      Var kh = t.slice_cols(k, h * dh, dh);
      Var vh = t.slice_cols(v, h * dh, dh);
      Var scores = t.scale(t.matmul_nt(qh, kh), scale);
      if (bias_cols != nullptr)
        scores = t.add_column_bias(scores, P(t, "ctx.bias"), *bias_cols, static_cast<T>(cfg_.bias_limit));
      Var w = t.softmax_rows(scores, mask);
      if (trace) trace->cross.push_back(t.value(w));
      outs.push_back(t.matmul(w, vh));
    }
    Var cat = heads == 1 ? outs.front() : t.concat_cols(std::move(outs));
    return linear(t, cat, pre + ".wo");
  }

  template <class Rng>
  Var feed_forward(Tape<T>& t, const std::string& pre, Var x, Rng* rng) {
    Var h = t.relu(linear(t, x, pre + ".w1"));
    h = drop(t, h, rng);
    return linear(t, h, pre + ".w2");
  }

  template <class Rng>
  Var encode_var(Tape<T>& t, const std::vector<int>& src, Rng* rng) {
    Var x = embed(t, src, rng);
    for (int l = 0; l < cfg_.n_enc_layers; ++l) {
      const std::string p = "enc." + std::to_string(l);
      Var h = layer_norm(t, x, p + ".ln1");
      x = t.add(x, drop(t, attention(t, p + ".self", h, h, nullptr, nullptr, nullptr), rng));
      h = layer_norm(t, x, p + ".ln2");
      x = t.add(x, drop(t, feed_forward(t, p + ".ff", h, rng), rng));
    }
    return layer_norm(t, x, "enc.ln");
  }

  /// 1 x (n+1) insertion and deletion logits over the buggy span plus the
  /// <eob> row that follows it.
  std::pair<Var, Var> pointer_logits(Tape<T>& t, Var enc, std::size_t bug_start, std::size_t bug_len) {
    Var span = t.slice_rows(enc, static_cast<Eigen::Index>(bug_start), static_cast<Eigen::Index>(bug_len + 1));
    Var ins = t.transpose(t.matmul(span, P(t, "ptr.ins")));
    Var del = t.transpose(t.matmul(span, P(t, "ptr.del")));
    return {ins, del};
  }

  Var decoder_memory_var(Tape<T>& t, Var enc, const Sample& s, std::optional<PointerPair> ptrs) {
    if (!is_edit(cfg_.variant) || !ptrs) return enc;
    if (ptrs->insert > ptrs->del || ptrs->del > s.bug_len) throw Error("pointer pair out of range");
    Var m = t.add_to_rows(enc, P(t, "mark.ins"), {s.bug_start + ptrs->insert});
    std::vector<std::size_t> rows;
    for (std::size_t r = ptrs->insert; r < ptrs->del; ++r) rows.push_back(s.bug_start + r);
    if (!rows.empty()) m = t.add_to_rows(m, P(t, "mark.del"), std::move(rows));
    return m;
  }

  template <class Rng>
  Var decode_var(Tape<T>& t, const std::vector<int>& dec_in, Var memory, const std::vector<char>& bug_cols, Rng* rng,
                 AttentionTrace<T>* trace) {
    const auto L = static_cast<Eigen::Index>(dec_in.size());
    Matrix<T> causal = Matrix<T>::Zero(L, L);
    for (Eigen::Index i = 0; i < L; ++i)
      for (Eigen::Index j = i + 1; j < L; ++j) causal(i, j) = -std::numeric_limits<T>::infinity();
    const bool biased = uses_context(cfg_.variant) && bias_enabled_;
    if (biased && std::none_of(bug_cols.begin(), bug_cols.end(), [](char c) { return c != 0; }))
      throw Error("context bias needs a non-empty bug span");

    Var x = embed(t, dec_in, rng);
    for (int l = 0; l < cfg_.n_dec_layers; ++l) {
      const std::string p = "dec." + std::to_string(l);
      Var h = layer_norm(t, x, p + ".ln1");
      x = t.add(x, drop(t, attention(t, p + ".self", h, h, &causal, nullptr, nullptr), rng));
      h = layer_norm(t, x, p + ".ln2");
      x = t.add(x, drop(t, attention(t, p + ".cross", h, memory, nullptr, biased ? &bug_cols : nullptr, trace), rng));
      h = layer_norm(t, x, p + ".ln3");
      x = t.add(x, drop(t, feed_forward(t, p + ".ff", h, rng), rng));
    }
    Var y = layer_norm(t, x, "dec.ln");
    return linear(t, y, "out.w");
  }
};

}  // namespace patchlens::model
