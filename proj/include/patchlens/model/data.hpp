#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "patchlens/bpe.hpp"
#include "patchlens/corpus.hpp"
#include "patchlens/editcodec.hpp"
#include "patchlens/lexer.hpp"
#include "patchlens/model/config.hpp"

namespace patchlens::model {

/// Symbol <-> id table. Ids 0..4 are reserved.
class Vocab {
public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kEob = 4;  // closes the buggy line in the source

  Vocab() : Vocab(std::vector<std::string>{}) {}

  /// Specials first, then `symbols` in the given order (duplicates dropped).
  explicit Vocab(const std::vector<std::string>& symbols) {
    for (const char* s : {"<pad>", "<unk>", "<s>", "</s>", "<eob>"}) add(s);
    for (const auto& s : symbols) add(s);
  }

  /// Every symbol seen in the given sequences, sorted for determinism.
  static Vocab from_sequences(const std::vector<std::vector<std::string>>& seqs) {
    std::vector<std::string> all;
    for (const auto& seq : seqs) all.insert(all.end(), seq.begin(), seq.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    return Vocab(all);
  }

  int id(const std::string& s) const {
    auto it = stoi_.find(s);
    return it == stoi_.end() ? kUnk : it->second;
  }
  const std::string& symbol(int id) const { return itos_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return itos_.size(); }
  const std::vector<std::string>& symbols() const { return itos_; }

  std::vector<int> ids(const std::vector<std::string>& syms) const {
    std::vector<int> out;
    out.reserve(syms.size());
    for (const auto& s : syms) out.push_back(id(s));
    return out;
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.itos_ == b.itos_; }

private:
  std::vector<std::string> itos_;
  std::unordered_map<std::string, int> stoi_;

  void add(const std::string& s) {
    if (stoi_.count(s)) return;
    stoi_[s] = static_cast<int>(itos_.size());
    itos_.push_back(s);
  }
};

/// One model input: the encoded source with the buggy span marked, plus the
/// gold targets for both decoding styles.
struct Sample {
  std::string id;
  std::vector<std::string> bug_tokens;    // lexer tokens
  std::vector<std::string> patch_tokens;
  std::vector<std::string> bug_symbols;   // BPE symbols
  std::vector<std::string> patch_symbols;
  std::vector<int> src;                   // context_before ++ bug ++ <eob> ++ context_after
  std::size_t bug_start = 0;
  std::size_t bug_len = 0;
  std::vector<int> patch_ids;
  editcodec::EditScript<std::string> script;  // over symbols
  std::vector<int> inserted_ids;
  bool context_trimmed = false;

  /// Ids the decoder must emit (without the closing </s>).
  const std::vector<int>& target(Variant v) const { return is_edit(v) ? inserted_ids : patch_ids; }

  /// Source columns covering the buggy line.
  std::vector<char> bug_columns() const {
    std::vector<char> cols(src.size(), 0);
    for (std::size_t i = 0; i < bug_len; ++i) cols[bug_start + i] = 1;
    return cols;
  }
};

/// Context symbols kept around the bug: nearest first, alternating sides,
/// until `budget` symbols are taken.
inline std::pair<std::vector<std::string>, std::vector<std::string>> trim_context(
    const std::vector<std::string>& before, const std::vector<std::string>& after, std::size_t budget, bool* trimmed) {
  std::size_t take_before = 0, take_after = 0;
  while (take_before + take_after < budget && (take_before < before.size() || take_after < after.size())) {
    if (take_before < before.size()) ++take_before;
    if (take_before + take_after < budget && take_after < after.size()) ++take_after;
  }
  if (trimmed) *trimmed = take_before < before.size() || take_after < after.size();
  return {std::vector<std::string>(before.end() - static_cast<std::ptrdiff_t>(take_before), before.end()),
          std::vector<std::string>(after.begin(), after.begin() + static_cast<std::ptrdiff_t>(take_after))};
}

struct EncodeStats {
  std::size_t kept = 0;
  std::size_t rejected_overlength = 0;
  std::size_t context_trimmed = 0;
};

/// Build the model sample for a pair, or nothing when the bug or the target
/// exceeds the configured lengths.
inline std::optional<Sample> make_sample(const corpus::BugFixPair& pair, const bpe::BpeModel& bpe, const Vocab& vocab,
                                         const ModelConfig& cfg) {
  Sample s;
  s.id = pair.id();
  s.bug_tokens = lex_texts(pair.bug_line);
  s.patch_tokens = lex_texts(pair.patch_line);
  s.bug_symbols = bpe.encode_words(s.bug_tokens);
  s.patch_symbols = bpe.encode_words(s.patch_tokens);
  s.script = editcodec::diff(s.bug_symbols, s.patch_symbols);
  s.patch_ids = vocab.ids(s.patch_symbols);
  s.inserted_ids = vocab.ids(s.script.inserted);
  s.bug_len = s.bug_symbols.size();

  const auto max_src = static_cast<std::size_t>(cfg.max_src_len);
  const auto max_tgt = static_cast<std::size_t>(cfg.max_tgt_len);
  if (s.bug_len == 0 || s.bug_len + 1 > max_src) return std::nullopt;
  if (s.target(cfg.variant).size() + 1 > max_tgt) return std::nullopt;

  std::vector<std::string> before, after;
  if (uses_context(cfg.variant)) {
    auto ctx = corpus::extract_context(pair, cfg.context_mode);
    auto b = bpe.encode_words(token_texts(ctx.tokens_before));
    auto a = bpe.encode_words(token_texts(ctx.tokens_after));
    const std::size_t budget = std::min<std::size_t>(static_cast<std::size_t>(cfg.context_budget), max_src - s.bug_len - 1);
    std::tie(before, after) = trim_context(b, a, budget, &s.context_trimmed);
  }
  s.bug_start = before.size();
  s.src = vocab.ids(before);
  auto bug_ids = vocab.ids(s.bug_symbols);
  s.src.insert(s.src.end(), bug_ids.begin(), bug_ids.end());
  s.src.push_back(Vocab::kEob);
  auto after_ids = vocab.ids(after);
  s.src.insert(s.src.end(), after_ids.begin(), after_ids.end());
  return s;
}

inline std::vector<Sample> make_samples(const std::vector<corpus::BugFixPair>& pairs, const bpe::BpeModel& bpe,
                                        const Vocab& vocab, const ModelConfig& cfg, EncodeStats* stats = nullptr) {
  std::vector<Sample> out;
  EncodeStats st;
  for (const auto& p : pairs) {
    auto s = make_sample(p, bpe, vocab, cfg);
    if (!s) {
      ++st.rejected_overlength;
      continue;
    }
    if (s->context_trimmed) ++st.context_trimmed;
    ++st.kept;
    out.push_back(std::move(*s));
  }
  if (stats) *stats = st;
  return out;
}

/// Vocabulary over every symbol of the training pairs (bug, patch and, for
/// context variants, context).
inline Vocab build_vocab(const std::vector<corpus::BugFixPair>& train, const bpe::BpeModel& bpe, const ModelConfig& cfg) {
  std::vector<std::vector<std::string>> seqs;
  for (const auto& p : train) {
    seqs.push_back(bpe.encode_words(lex_texts(p.bug_line)));
    seqs.push_back(bpe.encode_words(lex_texts(p.patch_line)));
    if (uses_context(cfg.variant)) {
      auto ctx = corpus::extract_context(p, cfg.context_mode);
      seqs.push_back(bpe.encode_words(token_texts(ctx.tokens_before)));
      seqs.push_back(bpe.encode_words(token_texts(ctx.tokens_after)));
    }
  }
  return Vocab::from_sequences(seqs);
}

}  // namespace patchlens::model
