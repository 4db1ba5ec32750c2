#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <sys/wait.h>

#include "patchlens/corpus.hpp"
#include "patchlens/parallel.hpp"
#include "patchlens/text.hpp"

namespace patchlens::mining {

namespace fs = std::filesystem;

struct MineOptions {
  std::set<std::string> keywords = corpus::default_keywords();
  std::vector<std::string> extensions = {".java"};
  /// 0 means no limit.
  std::size_t max_commits = 0;
  std::size_t max_file_bytes = 1 << 20;
};

struct MineStats {
  std::size_t commits_scanned = 0;
  std::size_t keyword_hits = 0;
  std::size_t pairs = 0;
  std::size_t skipped_undecodable = 0;

  MineStats& operator+=(const MineStats& o) {
    commits_scanned += o.commits_scanned;
    keyword_hits += o.keyword_hits;
    pairs += o.pairs;
    skipped_undecodable += o.skipped_undecodable;
    return *this;
  }
};

namespace detail {

inline std::string shell_quote(std::string_view s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'')
      out += "'\\''";
    else
      out.push_back(c);
  }
  out.push_back('\'');
  return out;
}

struct CommandResult {
  int status = -1;
  std::string output;
};

inline CommandResult run(const std::string& command) {
  CommandResult r;
  FILE* pipe = ::popen((command + " 2>/dev/null").c_str(), "r");
  if (pipe == nullptr) throw Error("cannot spawn: " + command);
  char buf[65536];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  int raw = ::pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

inline CommandResult git(const fs::path& repo, std::initializer_list<std::string_view> args) {
  std::string cmd = "git -C " + shell_quote(repo.string());
  for (auto a : args) cmd += " " + shell_quote(a);
  return run(cmd);
}

struct CommitRecord {
  std::string hash;
  std::vector<std::string> parents;
  std::string message;
  std::vector<std::pair<char, std::string>> changes;  // status letter, path
};

// One `git log` pass: records separated by \x1e, header fields by \x1f,
// header terminated by \x1d and followed by --name-status lines.
inline std::vector<CommitRecord> read_history(const fs::path& repo, std::size_t max_commits) {
  auto r = git(repo, {"log", "--topo-order", "--reverse", "--no-renames", "--name-status",
                      "--format=%x1e%H%x1f%P%x1f%B%x1d", "HEAD"});
  if (r.status != 0) throw Error("git log failed in " + repo.string());
  std::vector<CommitRecord> out;
  for (const auto& rec : text::split(r.output, '\x1e')) {
    if (rec.empty()) continue;
    auto end = rec.find('\x1d');
    if (end == std::string::npos) continue;
    auto head = text::split(std::string_view(rec).substr(0, end), '\x1f');
    if (head.size() != 3) continue;
    CommitRecord c;
    c.hash = head[0];
    for (auto& p : text::split(head[1], ' '))
      if (!p.empty()) c.parents.push_back(p);
    c.message = head[2];
    for (const auto& line : text::split_lines(std::string_view(rec).substr(end + 1))) {
      if (line.empty()) continue;
      auto tab = line.find('\t');
      if (tab == std::string::npos || tab == 0) continue;
      c.changes.emplace_back(line[0], line.substr(tab + 1));
    }
    out.push_back(std::move(c));
    if (max_commits != 0 && out.size() >= max_commits) break;
  }
  return out;
}

inline std::optional<std::string> show_blob(const fs::path& repo, const std::string& rev,
                                            const std::string& path) {
  auto r = git(repo, {"show", rev + ":" + path});
  if (r.status != 0) return std::nullopt;
  return r.output;
}

}  // namespace detail

/// True when `path` is the top of a work tree or a bare repository (an
/// enclosing repository further up does not count).
inline bool is_git_repository(const fs::path& path) {
  std::error_code ec;
  auto canonical = fs::canonical(path, ec);
  if (ec) return false;
  auto top = detail::git(path, {"rev-parse", "--show-toplevel"});
  if (top.status == 0) {
    std::string out = text::normalize_whitespace(top.output);
    return fs::canonical(out, ec) == canonical;
  }
  auto bare = detail::git(path, {"rev-parse", "--is-bare-repository"});
  return bare.status == 0 && bare.output.starts_with("true");
}

/// Walk one repository and emit every qualifying single-line fix, in
/// topological commit order. `repo_id`/`org_id` label provenance.
inline MineStats mine_repo(const fs::path& repo, const std::string& repo_id, const std::string& org_id,
                           const MineOptions& opt, const std::function<void(corpus::BugFixPair)>& sink) {
  if (!fs::is_directory(repo) || !is_git_repository(repo))
    throw Error("not a readable git repository: " + repo.string());
  MineStats stats;
  if (detail::git(repo, {"rev-parse", "--verify", "-q", "HEAD"}).status != 0) return stats;  // empty

  auto matches_ext = [&](const std::string& path) {
    for (const auto& ext : opt.extensions)
      if (std::string_view(path).ends_with(ext)) return true;
    return false;
  };

  for (const auto& c : detail::read_history(repo, opt.max_commits)) {
    ++stats.commits_scanned;
    if (c.parents.size() != 1) continue;
    if (!corpus::is_bugfix_message(c.message, opt.keywords)) continue;
    ++stats.keyword_hits;
    if (c.changes.size() != 1) continue;
    const auto& [status, path] = c.changes.front();
    if (status != 'M' || !matches_ext(path)) continue;

    auto before = detail::show_blob(repo, c.parents.front(), path);
    auto after = detail::show_blob(repo, c.hash, path);
    if (!before || !after) continue;
    if (before->size() > opt.max_file_bytes || after->size() > opt.max_file_bytes) continue;
    if (!text::valid_utf8(*before) || !text::valid_utf8(*after)) {
      ++stats.skipped_undecodable;
      continue;
    }
    auto change = corpus::extract_single_line_change(*before, *after);
    if (!change) continue;

    corpus::BugFixPair pair;
    pair.repo_id = repo_id;
    pair.org_id = org_id;
    pair.commit_hash = c.hash;
    pair.file_path = path;
    pair.line_number = change->line_number;
    pair.bug_line = change->bug_line;
    pair.patch_line = change->patch_line;
    pair.file_before = std::move(*before);
    pair.commit_message = text::normalize_whitespace(c.message);
    ++stats.pairs;
    sink(std::move(pair));
  }
  return stats;
}

struct RepoRef {
  fs::path path;
  std::string repo_id;
  std::string org_id;
};

/// Repositories directly under `root` (org = repo name) or one level deeper
/// (`root/<org>/<repo>`), sorted by repo id.
inline std::vector<RepoRef> discover_repos(const fs::path& root) {
  if (!fs::is_directory(root)) throw Error("not a directory: " + root.string());
  std::vector<RepoRef> repos;
  auto is_repo_dir = [](const fs::path& p) { return fs::exists(p / ".git") || fs::exists(p / "HEAD"); };
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const auto name = entry.path().filename().string();
    if (is_repo_dir(entry.path())) {
      repos.push_back({entry.path(), name, name});
      continue;
    }
    for (const auto& sub : fs::directory_iterator(entry.path())) {
      if (sub.is_directory() && is_repo_dir(sub.path()))
        repos.push_back({sub.path(), name + "/" + sub.path().filename().string(), name});
    }
  }
  std::sort(repos.begin(), repos.end(), [](const auto& a, const auto& b) { return a.repo_id < b.repo_id; });
  return repos;
}

/// Mine every repository under `root`. Repositories fan out over `jobs`
/// workers; results are concatenated in repo-id order.
inline std::vector<corpus::BugFixPair> mine_all(const fs::path& root, const MineOptions& opt, std::size_t jobs,
                                                MineStats* stats_out = nullptr) {
  auto repos = discover_repos(root);
  std::vector<std::vector<corpus::BugFixPair>> per_repo(repos.size());
  std::vector<MineStats> stats(repos.size());
  parallel_for(repos.size(), jobs, [&](std::size_t i) {
    stats[i] = mine_repo(repos[i].path, repos[i].repo_id, repos[i].org_id, opt,
                         [&](corpus::BugFixPair p) { per_repo[i].push_back(std::move(p)); });
  });
  std::vector<corpus::BugFixPair> out;
  MineStats total;
  for (std::size_t i = 0; i < repos.size(); ++i) {
    total += stats[i];
    for (auto& p : per_repo[i]) out.push_back(std::move(p));
  }
  if (stats_out) *stats_out = total;
  return out;
}

}  // namespace patchlens::mining
