#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "patchlens/model/transformer.hpp"

namespace patchlens::model {

/// One decoded candidate. `tokens` are the emitted ids (the inserted segment
/// for edit variants), `symbols` the materialised patch.
struct Hypothesis {
  std::vector<int> tokens;
  std::optional<PointerPair> pointers;
  std::vector<std::string> symbols;
  double log_prob = 0.0;
  double pointer_log_prob = 0.0;
  double score = 0.0;
  bool finished = false;  // ended with </s> rather than the length cap
};

struct BeamOptions {
  std::size_t beam = 5;
  std::size_t pointer_beam = 1;
  /// Score = log_prob / length^alpha; 0 keeps the raw sum.
  double length_alpha = 0.0;
};

namespace decode_detail {

struct Partial {
  std::vector<int> prefix;  // starts with <s>
  double log_prob = 0.0;
};

inline double normalized(double lp, std::size_t len, double alpha) {
  if (alpha <= 0.0) return lp;
  return lp / std::pow(static_cast<double>(std::max<std::size_t>(len, 1)), alpha);
}

/// Orders hypotheses by score, then by token ids so ties are reproducible.
inline bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.pointers != b.pointers) {
    if (!a.pointers) return true;
    if (!b.pointers) return false;
    return std::tie(a.pointers->insert, a.pointers->del) < std::tie(b.pointers->insert, b.pointers->del);
  }
  return a.tokens < b.tokens;
}

}  // namespace decode_detail

/// Decoder over a single model; keeps no state between calls.
template <class T>
class Decoder {
public:
  explicit Decoder(RepairModel<T>& model) : model_(model) {}

  std::size_t max_tokens() const { return static_cast<std::size_t>(model_.config().max_tgt_len) - 1; }

  /// Joint argmax over insert <= delete of log P(i) + log P(j | i); ties go
  /// to the smallest (i, j).
  std::vector<std::pair<PointerPair, double>> top_pointer_pairs(const PointerScores<T>& ps, std::size_t count) const {
    std::vector<std::pair<PointerPair, double>> all;
    const std::size_t width = ps.insert_log_probs.size();
    for (std::size_t i = 0; i < width; ++i) {
      auto del = ps.delete_log_probs(i);
      for (std::size_t j = i; j < width; ++j)
        all.push_back({PointerPair{i, j}, static_cast<double>(ps.insert_log_probs[i]) + static_cast<double>(del[j])});
    }
    std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    if (all.size() > count) all.resize(count);
    return all;
  }

  Hypothesis greedy(const Sample& s) {
    Matrix<T> enc = model_.encode(s.src);
    std::optional<PointerPair> ptrs;
    double ptr_lp = 0.0;
    if (is_edit(model_.config().variant)) {
      auto best = top_pointer_pairs(model_.pointer_scores(enc, s.bug_start, s.bug_len), 1).front();
      ptrs = best.first;
      ptr_lp = best.second;
    }
    Matrix<T> memory = model_.decoder_memory(enc, s, ptrs);
    const auto cols = s.bug_columns();
    Hypothesis h;
    std::vector<int> prefix{Vocab::kBos};
    while (h.tokens.size() < max_tokens()) {
      auto lp = model_.next_log_probs(memory, cols, prefix);
      const auto best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
      h.log_prob += static_cast<double>(lp[static_cast<std::size_t>(best)]);
      if (best == Vocab::kEos) {
        h.finished = true;
        break;
      }
      h.tokens.push_back(best);
      prefix.push_back(best);
    }
    h.pointers = ptrs;
    h.pointer_log_prob = ptr_lp;
    h.log_prob += ptr_lp;
    h.score = h.log_prob;
    h.symbols = materialize(s, h);
    return h;
  }

  /// Token beam; for edit variants one beam per top pointer pair, merged and
  /// deduplicated on the materialised patch.
  std::vector<Hypothesis> beam_search(const Sample& s, const BeamOptions& opt) {
    if (opt.beam == 0) throw Error("beam size must be >= 1");
    Matrix<T> enc = model_.encode(s.src);
    std::vector<std::pair<std::optional<PointerPair>, double>> starts;
    if (is_edit(model_.config().variant)) {
      if (opt.pointer_beam == 0) throw Error("pointer beam must be >= 1");
      for (auto& [p, lp] : top_pointer_pairs(model_.pointer_scores(enc, s.bug_start, s.bug_len), opt.pointer_beam))
        starts.push_back({p, lp});
    } else {
      starts.push_back({std::nullopt, 0.0});
    }

    std::vector<Hypothesis> all;
    for (const auto& [ptrs, ptr_lp] : starts) {
      Matrix<T> memory = model_.decoder_memory(enc, s, ptrs);
      for (auto& h : token_beam(memory, s.bug_columns(), opt)) {
        h.pointers = ptrs;
        h.pointer_log_prob = ptr_lp;
        h.log_prob += ptr_lp;
        h.score = decode_detail::normalized(h.log_prob, h.tokens.size() + (h.finished ? 1 : 0), opt.length_alpha);
        h.symbols = materialize(s, h);
        all.push_back(std::move(h));
      }
    }
    std::sort(all.begin(), all.end(), decode_detail::better);
    std::vector<Hypothesis> out;
    std::map<std::vector<std::string>, bool> seen;
    for (auto& h : all)
      if (seen.emplace(h.symbols, true).second) out.push_back(std::move(h));
    return out;
  }

  /// Recomputes a hypothesis's log-probability from scratch.
  double rescore(const Sample& s, const Hypothesis& h) {
    Matrix<T> enc = model_.encode(s.src);
    double total = 0.0;
    if (h.pointers) {
      auto ps = model_.pointer_scores(enc, s.bug_start, s.bug_len);
      total += static_cast<double>(ps.insert_log_probs.at(h.pointers->insert));
      total += static_cast<double>(ps.delete_log_probs(h.pointers->insert).at(h.pointers->del));
    }
    Matrix<T> memory = model_.decoder_memory(enc, s, h.pointers);
    std::vector<int> dec_in{Vocab::kBos};
    dec_in.insert(dec_in.end(), h.tokens.begin(), h.tokens.end());
    std::vector<int> gold = h.tokens;
    if (h.finished) gold.push_back(Vocab::kEos);
    else dec_in.pop_back();
    if (gold.empty()) return total;
    Matrix<T> lp = model_.sequence_log_probs(memory, s.bug_columns(), dec_in);
    for (std::size_t i = 0; i < gold.size(); ++i) total += static_cast<double>(lp(static_cast<Eigen::Index>(i), gold[i]));
    return total;
  }

  /// Patch symbols for a hypothesis. Edit hypotheses copy the untouched
  /// parts from the bug itself, so unknown bug symbols survive.
  std::vector<std::string> materialize(const Sample& s, const Hypothesis& h) const {
    std::vector<std::string> ins;
    for (int id : h.tokens) ins.push_back(model_.vocab().symbol(id));
    if (!h.pointers) return ins;
    editcodec::EditScript<std::string> script{h.pointers->insert, h.pointers->del, std::move(ins)};
    return editcodec::apply(s.bug_symbols, script);
  }

private:
  RepairModel<T>& model_;

  std::vector<Hypothesis> token_beam(const Matrix<T>& memory, const std::vector<char>& cols, const BeamOptions& opt) {
    using decode_detail::Partial;
    std::vector<Partial> live{Partial{{Vocab::kBos}, 0.0}};
    std::vector<Hypothesis> done;
    auto finish = [&](const Partial& p, bool eos) {
      Hypothesis h;
      h.tokens.assign(p.prefix.begin() + 1, p.prefix.end());
      h.log_prob = p.log_prob;
      h.finished = eos;
      h.score = decode_detail::normalized(h.log_prob, h.tokens.size() + (eos ? 1 : 0), opt.length_alpha);
      done.push_back(std::move(h));
    };

    for (std::size_t step = 0; step <= max_tokens() && !live.empty(); ++step) {
      if (done.size() >= opt.beam && opt.length_alpha <= 0.0) {
        // Log-probs only fall, so no live prefix can overtake the kth result.
        auto kth = done;
        std::sort(kth.begin(), kth.end(), decode_detail::better);
        const double bar = kth[opt.beam - 1].score;
        if (std::all_of(live.begin(), live.end(), [&](const Partial& p) { return p.log_prob < bar; })) break;
      }
      if (step == max_tokens()) {
        for (const auto& p : live) finish(p, false);
        live.clear();
        break;
      }
      struct Cand {
        double lp;
        std::size_t from;
        int tok;
      };
      std::vector<Cand> cands;
      for (std::size_t b = 0; b < live.size(); ++b) {
        auto lp = model_.next_log_probs(memory, cols, live[b].prefix);
        for (std::size_t v = 0; v < lp.size(); ++v)
          cands.push_back({live[b].log_prob + static_cast<double>(lp[v]), b, static_cast<int>(v)});
      }
      const std::size_t take = std::min(opt.beam, cands.size());
      std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(take), cands.end(),
                        [](const Cand& a, const Cand& b) {
                          return std::tie(b.lp, a.from, a.tok) < std::tie(a.lp, b.from, b.tok);
                        });
      std::vector<Partial> next;
      for (std::size_t c = 0; c < take; ++c) {
        Partial p{live[cands[c].from].prefix, cands[c].lp};
        if (cands[c].tok == Vocab::kEos) {
          finish(p, true);
        } else {
          p.prefix.push_back(cands[c].tok);
          next.push_back(std::move(p));
        }
      }
      live = std::move(next);
    }
    for (const auto& p : live) finish(p, false);
    std::sort(done.begin(), done.end(), decode_detail::better);
    if (done.size() > opt.beam) done.resize(opt.beam);
    return done;
  }
};

}  // namespace patchlens::model
