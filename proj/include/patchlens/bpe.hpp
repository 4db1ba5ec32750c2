#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "patchlens/text.hpp"

namespace patchlens::bpe {

inline constexpr std::string_view kFormatHeader = "#patchlens-bpe";
inline constexpr int kFormatVersion = 1;
inline constexpr std::string_view kDefaultEndMarker = "</w>";

using Merge = std::pair<std::string, std::string>;

/// Ordered merge list plus the symbols it can produce. Immutable once
/// trained; safe to share across threads.
class BpeModel {
public:
  BpeModel() : BpeModel(std::string(kDefaultEndMarker), {}) {}

  BpeModel(std::string end_marker, std::vector<Merge> merges)
      : end_marker_(std::move(end_marker)), merges_(std::move(merges)) {
    vocab_.insert(end_marker_);
    for (std::size_t i = 0; i < merges_.size(); ++i) {
      const auto& [l, r] = merges_[i];
      ranks_.emplace(l + '\0' + r, i);
      vocab_.insert(l);
      vocab_.insert(r);
      vocab_.insert(l + r);
    }
  }

  const std::string& end_marker() const { return end_marker_; }
  const std::vector<Merge>& merges() const { return merges_; }
  const std::set<std::string>& vocab() const { return vocab_; }

  /// Model symbols for one token; the word's final symbol carries the end
  /// marker (possibly as a standalone symbol).
  std::vector<std::string> encode_symbols(std::string_view token) const {
    std::vector<std::string> sym = text::utf8_chars(token);
    sym.push_back(end_marker_);
    while (sym.size() > 1) {
      std::size_t best_rank = merges_.size();
      for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
        auto it = ranks_.find(sym[i] + '\0' + sym[i + 1]);
        if (it != ranks_.end() && it->second < best_rank) best_rank = it->second;
      }
      if (best_rank == merges_.size()) break;
      const auto& [l, r] = merges_[best_rank];
      std::vector<std::string> next;
      next.reserve(sym.size());
      for (std::size_t i = 0; i < sym.size();) {
        if (i + 1 < sym.size() && sym[i] == l && sym[i + 1] == r) {
          next.push_back(l + r);
          i += 2;
        } else {
          next.push_back(sym[i]);
          ++i;
        }
      }
      sym = std::move(next);
    }
    return sym;
  }

  /// Subtokens of one token with the end marker removed.
  std::vector<std::string> encode(std::string_view token) const {
    std::vector<std::string> pieces;
    for (auto& s : encode_symbols(token)) {
      std::string p = strip_marker(s);
      if (!p.empty()) pieces.push_back(std::move(p));
    }
    return pieces;
  }

  /// Concatenation with end markers stripped.
  std::string decode(const std::vector<std::string>& subtokens) const {
    std::string out;
    for (const auto& s : subtokens) out += strip_marker(s);
    return out;
  }

  /// Symbols for a token sequence, word boundaries kept through markers.
  std::vector<std::string> encode_words(const std::vector<std::string>& tokens) const {
    std::vector<std::string> out;
    for (const auto& t : tokens) {
      auto sym = encode_symbols(t);
      out.insert(out.end(), std::make_move_iterator(sym.begin()), std::make_move_iterator(sym.end()));
    }
    return out;
  }

  /// Inverse of encode_words. A trailing unterminated word is kept.
  std::vector<std::string> decode_words(const std::vector<std::string>& symbols) const {
    std::vector<std::string> words;
    std::string cur;
    bool open = false;
    for (const auto& s : symbols) {
      if (ends_with_marker(s)) {
        cur += s.substr(0, s.size() - end_marker_.size());
        words.push_back(std::move(cur));
        cur.clear();
        open = false;
      } else {
        cur += s;
        open = true;
      }
    }
    if (open) words.push_back(std::move(cur));
    return words;
  }

  bool ends_with_marker(std::string_view s) const { return s.ends_with(end_marker_); }

  void save(std::ostream& os) const {
    os << kFormatHeader << " v" << kFormatVersion << ' ' << escape(end_marker_) << '\n';
    for (const auto& [l, r] : merges_) os << escape(l) << ' ' << escape(r) << '\n';
  }

  std::string to_string() const {
    std::ostringstream os;
    save(os);
    return os.str();
  }

  static BpeModel load(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw Error("bpe: empty model file");
    auto head = text::split(line, ' ');
    if (head.size() != 3 || head[0] != kFormatHeader) throw Error("bpe: bad header line");
    if (head[1] != "v" + std::to_string(kFormatVersion)) throw Error("bpe: unsupported version " + head[1]);
    std::string marker = unescape(head[2]);
    std::vector<Merge> merges;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      auto parts = text::split(line, ' ');
      if (parts.size() != 2) throw Error("bpe: malformed merge line: " + line);
      merges.emplace_back(unescape(parts[0]), unescape(parts[1]));
    }
    return BpeModel(std::move(marker), std::move(merges));
  }

  static BpeModel from_string(const std::string& s) {
    std::istringstream is(s);
    return load(is);
  }

  static BpeModel load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("bpe: cannot open " + path);
    return load(in);
  }

  void save_file(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("bpe: cannot write " + path);
    save(out);
  }

  friend bool operator==(const BpeModel& a, const BpeModel& b) {
    return a.end_marker_ == b.end_marker_ && a.merges_ == b.merges_;
  }

private:
  std::string end_marker_;
  std::vector<Merge> merges_;
  std::set<std::string> vocab_;
  std::unordered_map<std::string, std::size_t> ranks_;

  std::string strip_marker(const std::string& s) const {
    return ends_with_marker(s) ? s.substr(0, s.size() - end_marker_.size()) : s;
  }

  static std::string escape(std::string_view s) {
    std::string out;
    for (char c : s) {
      switch (c) {
        case '\\': out += "\\\\"; break;
        case ' ': out += "\\s"; break;
        case '\t': out += "\\t"; break;
        case '\n': out += "\\n"; break;
        case '\r': out += "\\r"; break;
        default: out.push_back(c);
      }
    }
    return out;
  }

  static std::string unescape(std::string_view s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] != '\\' || i + 1 == s.size()) {
        out.push_back(s[i]);
        continue;
      }
      switch (s[++i]) {
        case 's': out.push_back(' '); break;
        case 't': out.push_back('\t'); break;
        case 'n': out.push_back('\n'); break;
        case 'r': out.push_back('\r'); break;
        default: out.push_back(s[i]);
      }
    }
    return out;
  }
};

struct TrainOptions {
  std::size_t num_merges = 10000;
  /// Merging stops once the best pair occurs fewer times than this.
  std::size_t min_frequency = 2;
  std::string end_marker = std::string(kDefaultEndMarker);
};

/// Pick an end marker that no token contains.
inline std::string choose_end_marker(const std::map<std::string, std::size_t>& words, std::string base) {
  std::string marker = base;
  for (int attempt = 1;; ++attempt) {
    bool clash = std::any_of(words.begin(), words.end(),
                             [&](const auto& w) { return w.first.find(marker) != std::string::npos; });
    if (!clash) return marker;
    marker = base.substr(0, base.size() - 1) + "_" + std::to_string(attempt) + base.back();
  }
}

/// Standard BPE over a token stream: start from characters plus end marker,
/// repeatedly merge the most frequent adjacent pair. Ties go to the
/// lexicographically smallest (left, right).
template <class Range>
BpeModel train(const Range& tokens, const TrainOptions& opt = {}) {
  std::map<std::string, std::size_t> word_freq;
  for (const auto& t : tokens)
    if (!std::string_view(t).empty()) ++word_freq[std::string(t)];
  const std::string marker = choose_end_marker(word_freq, opt.end_marker);

  // Interned symbols keep the pair counting cheap.
  std::vector<std::string> names;
  std::unordered_map<std::string, std::uint32_t> ids;
  auto intern = [&](const std::string& s) {
    auto [it, fresh] = ids.emplace(s, static_cast<std::uint32_t>(names.size()));
    if (fresh) names.push_back(s);
    return it->second;
  };

  struct Word {
    std::vector<std::uint32_t> sym;
    std::size_t freq;
  };
  std::vector<Word> words;
  words.reserve(word_freq.size());
  for (const auto& [w, f] : word_freq) {
    Word word{{}, f};
    for (auto& c : text::utf8_chars(w)) word.sym.push_back(intern(c));
    word.sym.push_back(intern(marker));
    words.push_back(std::move(word));
  }

  std::vector<Merge> merges;
  std::unordered_map<std::uint64_t, std::size_t> counts;
  while (merges.size() < opt.num_merges) {
    counts.clear();
    for (const auto& w : words)
      for (std::size_t i = 0; i + 1 < w.sym.size(); ++i)
        counts[(std::uint64_t{w.sym[i]} << 32) | w.sym[i + 1]] += w.freq;
    if (counts.empty()) break;

    std::uint64_t best = 0;
    std::size_t best_count = 0;
    for (const auto& [key, c] : counts) {
      if (c < best_count) continue;
      if (c > best_count) {
        best = key;
        best_count = c;
        continue;
      }
      const auto& l = names[key >> 32];
      const auto& r = names[key & 0xFFFFFFFFu];
      const auto& bl = names[best >> 32];
      const auto& br = names[best & 0xFFFFFFFFu];
      if (std::tie(l, r) < std::tie(bl, br)) best = key;
    }
    if (best_count < std::max<std::size_t>(opt.min_frequency, 1)) break;

    const auto left = static_cast<std::uint32_t>(best >> 32);
    const auto right = static_cast<std::uint32_t>(best & 0xFFFFFFFFu);
    merges.emplace_back(names[left], names[right]);
    const std::uint32_t joined = intern(names[left] + names[right]);
    for (auto& w : words) {
      std::vector<std::uint32_t> next;
      next.reserve(w.sym.size());
      for (std::size_t i = 0; i < w.sym.size();) {
        if (i + 1 < w.sym.size() && w.sym[i] == left && w.sym[i + 1] == right) {
          next.push_back(joined);
          i += 2;
        } else {
          next.push_back(w.sym[i++]);
        }
      }
      w.sym = std::move(next);
    }
  }
  return BpeModel(marker, std::move(merges));
}

}  // namespace patchlens::bpe
