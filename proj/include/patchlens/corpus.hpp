#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "patchlens/lexer.hpp"
#include "patchlens/text.hpp"

namespace patchlens::corpus {

/// One mined single-line fix.
struct BugFixPair {
  std::string repo_id;
  std::string org_id;
  std::string commit_hash;
  std::string file_path;
  std::size_t line_number = 0;  // 1-based, into file_before
  std::string bug_line;
  std::string patch_line;
  std::string file_before;
  std::string commit_message;

  /// Stable identifier derived from provenance.
  std::string id() const {
    std::uint64_t h = text::fnv1a(repo_id);
    h = text::fnv1a("|" + commit_hash + "|" + file_path + "|" + std::to_string(line_number), h);
    return text::hex64(h);
  }

  /// Key of the side-table entry holding file_before.
  std::string file_key() const { return repo_id + ":" + commit_hash + ":" + file_path; }

  friend bool operator==(const BugFixPair&, const BugFixPair&) = default;
};

inline const std::set<std::string>& default_keywords() {
  static const std::set<std::string> kw = {"fix", "bug", "defect", "fault", "error", "patch", "repair"};
  return kw;
}

/// Keyword heuristic on the lowercased message. "prefix", "suffix" and
/// "postfix" are blanked out first so they cannot match "fix".
inline bool is_bugfix_message(std::string_view message,
                              const std::set<std::string>& keywords = default_keywords()) {
  std::string msg = text::to_lower(message);
  for (std::string_view blocked : {"prefix", "suffix", "postfix"}) {
    for (auto pos = msg.find(blocked); pos != std::string::npos; pos = msg.find(blocked, pos))
      msg.replace(pos, blocked.size(), std::string(blocked.size(), ' '));
  }
  return std::any_of(keywords.begin(), keywords.end(), [&](const std::string& kw) {
    return !kw.empty() && msg.find(text::to_lower(kw)) != std::string::npos;
  });
}

struct LineChange {
  std::size_t line_number = 0;  // 1-based, into the parent file
  std::string bug_line;
  std::string patch_line;

  friend bool operator==(const LineChange&, const LineChange&) = default;
};

/// The single changed line between two file versions, ignoring whitespace
/// (including lines that are blank on either side). Nothing when zero or
/// several lines differ.
inline std::optional<LineChange> extract_single_line_change(std::string_view parent_file,
                                                            std::string_view child_file) {
  struct Line {
    std::size_t index;
    std::string raw;
    std::string norm;
  };
  auto significant = [](std::string_view file) {
    std::vector<Line> out;
    auto lines = text::split_lines(file);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      std::string norm = text::normalize_whitespace(lines[i]);
      if (!norm.empty()) out.push_back({i, std::move(lines[i]), std::move(norm)});
    }
    return out;
  };
  auto before = significant(parent_file);
  auto after = significant(child_file);
  if (before.size() != after.size()) return std::nullopt;

  std::optional<LineChange> change;
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (before[i].norm == after[i].norm) continue;
    if (change) return std::nullopt;
    change = LineChange{before[i].index + 1, before[i].raw, after[i].raw};
  }
  return change;
}

enum class ContextKind { None, Lines, WholeFile };

struct ContextMode {
  ContextKind kind = ContextKind::None;
  std::size_t lines_per_side = 0;

  static ContextMode none() { return {}; }
  static ContextMode lines(std::size_t w) { return {ContextKind::Lines, w}; }
  static ContextMode whole_file() { return {ContextKind::WholeFile, 0}; }

  std::string name() const {
    switch (kind) {
      case ContextKind::None: return "none";
      case ContextKind::Lines: return "lines" + std::to_string(lines_per_side);
      case ContextKind::WholeFile: return "file";
    }
    return "?";
  }

  /// Parses "none", "file", "lines10" or a bare number of lines per side.
  static ContextMode parse(std::string_view s) {
    if (s == "none") return none();
    if (s == "file" || s == "whole" || s == "wholefile") return whole_file();
    if (s.starts_with("lines")) s.remove_prefix(5);
    if (!s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }))
      return lines(std::stoul(std::string(s)));
    throw Error("unknown context mode: " + std::string(s));
  }

  friend bool operator==(const ContextMode&, const ContextMode&) = default;
};

struct ContextSlice {
  ContextMode mode;
  std::vector<Token> tokens_before;
  std::vector<Token> tokens_after;
};

/// Lexed lines surrounding the buggy line; the buggy line itself is never
/// included. Windows clip at file boundaries.
inline ContextSlice extract_context(const BugFixPair& pair, ContextMode mode) {
  ContextSlice slice{mode, {}, {}};
  if (mode.kind == ContextKind::None) return slice;
  auto lines = text::split_lines(pair.file_before);
  if (pair.line_number == 0 || pair.line_number > lines.size())
    throw Error("extract_context: line_number out of range for " + pair.id());
  const std::size_t bug = pair.line_number - 1;
  std::size_t first = 0, last = lines.size();
  if (mode.kind == ContextKind::Lines) {
    first = bug > mode.lines_per_side ? bug - mode.lines_per_side : 0;
    last = std::min(lines.size(), bug + 1 + mode.lines_per_side);
  }
  for (std::size_t i = first; i < bug; ++i) {
    auto toks = tokenize(lines[i]);
    slice.tokens_before.insert(slice.tokens_before.end(), toks.begin(), toks.end());
  }
  for (std::size_t i = bug + 1; i < last; ++i) {
    auto toks = tokenize(lines[i]);
    slice.tokens_after.insert(slice.tokens_after.end(), toks.begin(), toks.end());
  }
  return slice;
}

struct DatasetSplit {
  std::vector<BugFixPair> train;
  std::vector<BugFixPair> valid;
  std::vector<BugFixPair> test;
  std::uint64_t seed = 0;
};

struct SplitRatios {
  double train = 0.9;
  double valid = 0.05;
  double test = 0.05;
};

/// Org-disjoint split. Orgs are ordered by a seeded hash, then each org goes
/// to whichever of valid/test still has room for it and the larger
/// remaining quota; everything else lands in train.
inline DatasetSplit split_dataset(const std::vector<BugFixPair>& pairs, SplitRatios ratios,
                                  std::uint64_t seed) {
  if (std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-6)
    throw Error("split_dataset: ratios must sum to 1");
  if (ratios.train < 0 || ratios.valid < 0 || ratios.test < 0)
    throw Error("split_dataset: ratios must be non-negative");

  std::map<std::string, std::vector<std::size_t>> by_org;
  for (std::size_t i = 0; i < pairs.size(); ++i) by_org[pairs[i].org_id].push_back(i);
  if (by_org.size() < 3) throw Error("split_dataset: need at least 3 organizations, got " +
                                     std::to_string(by_org.size()));

  std::vector<std::pair<std::uint64_t, std::string>> order;
  for (const auto& [org, _] : by_org)
    order.emplace_back(text::splitmix64(text::fnv1a(org) ^ text::splitmix64(seed)), org);
  std::sort(order.begin(), order.end());

  const double total = static_cast<double>(pairs.size());
  const std::array<std::size_t, 2> quota = {static_cast<std::size_t>(std::llround(ratios.valid * total)),
                                            static_cast<std::size_t>(std::llround(ratios.test * total))};
  std::array<std::size_t, 2> filled = {0, 0};
  std::array<std::vector<std::string>, 3> assigned;  // valid, test, train
  for (const auto& [_, org] : order) {
    const std::size_t size = by_org[org].size();
    int best = -1;
    std::size_t best_room = 0;
    for (int part = 0; part < 2; ++part) {
      const std::size_t room = quota[part] - filled[part];
      if (filled[part] + size <= quota[part] && (best < 0 || room > best_room)) {
        best = part;
        best_room = room;
      }
    }
    if (best < 0) {
      assigned[2].push_back(org);
    } else {
      filled[best] += size;
      assigned[best].push_back(org);
    }
  }
  // Keep every part non-empty when the quota asks for something.
  for (int part = 0; part < 2; ++part) {
    if (!assigned[part].empty() || quota[part] == 0 || assigned[2].size() <= 1) continue;
    auto smallest = std::min_element(assigned[2].begin(), assigned[2].end(), [&](const auto& a, const auto& b) {
      return std::make_pair(by_org[a].size(), a) < std::make_pair(by_org[b].size(), b);
    });
    assigned[part].push_back(*smallest);
    assigned[2].erase(smallest);
  }

  DatasetSplit split;
  split.seed = seed;
  auto collect = [&](const std::vector<std::string>& orgs, std::vector<BugFixPair>& out) {
    std::vector<std::size_t> idx;
    for (const auto& org : orgs) idx.insert(idx.end(), by_org[org].begin(), by_org[org].end());
    std::sort(idx.begin(), idx.end());
    for (std::size_t i : idx) out.push_back(pairs[i]);
  };
  collect(assigned[0], split.valid);
  collect(assigned[1], split.test);
  collect(assigned[2], split.train);
  return split;
}

using DedupKey = std::pair<std::vector<std::string>, std::vector<std::string>>;

inline DedupKey dedup_key(const BugFixPair& p) { return {lex_texts(p.bug_line), lex_texts(p.patch_line)}; }

/// Drops test pairs whose (bug tokens, patch tokens) already occur in
/// train, valid, or earlier in test.
inline DatasetSplit dedup_test(const DatasetSplit& split) {
  std::set<DedupKey> seen;
  for (const auto& p : split.train) seen.insert(dedup_key(p));
  for (const auto& p : split.valid) seen.insert(dedup_key(p));
  DatasetSplit out;
  out.train = split.train;
  out.valid = split.valid;
  out.seed = split.seed;
  for (const auto& p : split.test)
    if (seen.insert(dedup_key(p)).second) out.test.push_back(p);
  return out;
}

// ---------------------------------------------------------------------------
// JSONL persistence. Pair records carry every field except file_before, which
// lives once per (repo, commit, path) in a side table next to the corpus.

inline nlohmann::json to_json(const BugFixPair& p) {
  return nlohmann::json{{"id", p.id()},
                        {"repo_id", p.repo_id},
                        {"org_id", p.org_id},
                        {"commit_hash", p.commit_hash},
                        {"file_path", p.file_path},
                        {"line_number", p.line_number},
                        {"bug_line", p.bug_line},
                        {"patch_line", p.patch_line},
                        {"commit_message", p.commit_message},
                        {"file_key", p.file_key()}};
}

inline BugFixPair from_json(const nlohmann::json& j) {
  BugFixPair p;
  p.repo_id = j.at("repo_id").get<std::string>();
  p.org_id = j.at("org_id").get<std::string>();
  p.commit_hash = j.at("commit_hash").get<std::string>();
  p.file_path = j.at("file_path").get<std::string>();
  p.line_number = j.at("line_number").get<std::size_t>();
  p.bug_line = j.at("bug_line").get<std::string>();
  p.patch_line = j.at("patch_line").get<std::string>();
  p.commit_message = j.value("commit_message", std::string{});
  return p;
}

inline std::string side_table_path(const std::string& corpus_path) {
  constexpr std::string_view ext = ".jsonl";
  if (std::string_view(corpus_path).ends_with(ext))
    return corpus_path.substr(0, corpus_path.size() - ext.size()) + ".files.jsonl";
  return corpus_path + ".files.jsonl";
}

inline void write_corpus(const std::string& path, const std::vector<BugFixPair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  std::ofstream side(side_table_path(path), std::ios::binary);
  if (!side) throw Error("cannot write " + side_table_path(path));
  std::set<std::string> written;
  for (const auto& p : pairs) {
    out << to_json(p).dump() << '\n';
    if (written.insert(p.file_key()).second)
      side << nlohmann::json{{"file_key", p.file_key()}, {"text", p.file_before}}.dump() << '\n';
  }
}

inline std::vector<BugFixPair> read_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open corpus " + path);
  std::map<std::string, std::string> files;
  if (std::ifstream side(side_table_path(path), std::ios::binary); side) {
    std::string line;
    while (std::getline(side, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line);
      files[j.at("file_key").get<std::string>()] = j.at("text").get<std::string>();
    }
  }
  std::vector<BugFixPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      auto p = from_json(nlohmann::json::parse(line));
      if (auto it = files.find(p.file_key()); it != files.end()) p.file_before = it->second;
      pairs.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw Error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return pairs;
}

inline void write_split(const std::filesystem::path& dir, const DatasetSplit& split) {
  std::filesystem::create_directories(dir);
  write_corpus((dir / "train.jsonl").string(), split.train);
  write_corpus((dir / "valid.jsonl").string(), split.valid);
  write_corpus((dir / "test.jsonl").string(), split.test);
}

inline DatasetSplit read_split(const std::filesystem::path& dir) {
  DatasetSplit split;
  split.train = read_corpus((dir / "train.jsonl").string());
  split.valid = read_corpus((dir / "valid.jsonl").string());
  split.test = read_corpus((dir / "test.jsonl").string());
  return split;
}

}  // namespace patchlens::corpus
