#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "patchlens/corpus.hpp"
#include "patchlens/mining.hpp"
#include "patchlens/text.hpp"

namespace fixtures {

namespace fs = std::filesystem;
using patchlens::corpus::BugFixPair;

/// Deterministic generator of plausible Java single-line fixes embedded in
/// small class files.
class JavaFixGenerator {
public:
  explicit JavaFixGenerator(std::uint64_t seed) : rng_(seed) {}

  struct Change {
    std::string bug;
    std::string patch;
    std::vector<std::string> hints;  // statements that mention patch-only names
  };

  Change change() {
    const std::string a = pick(names_), b = other(a), c = other(a, b);
    const std::string m1 = pick(methods_), m2 = other_method(m1);
    switch (pick_index(16)) {
      case 0: return {"if (" + a + " >= " + b + ") {", "if (" + a + " <= " + b + ") {", {}};
      case 1: return {"private boolean " + camel("is", a) + " = false;", "private boolean " + camel("is", a) + " = true;", {}};
      case 2: return {"for (int i = 0; i < " + a + "; i++) {", "for (int i = 0; i <= " + a + "; i++) {", {}};
      case 3: return {"return " + a + "." + m1 + "();", "return " + a + "." + m2 + "();", {b + "." + m2 + "();"}};
      case 4: return {a + " = " + b + " + " + c + ";", a + " = " + b + " - " + c + ";", {}};
      case 5:
        return {"LOG.error(\"Can't read " + a + " for \" + " + b + ", e);",
                "LOG.warn(\"Can't read " + a + " for \" + " + b + ", e);", {"LOG.warn(\"skipping\");"}};
      case 6: return {"if (" + a + " == null) {", "if (" + a + " != null) {", {}};
      case 7: return {a + "." + m1 + "(" + b + ");", a + "." + m1 + "(" + b + ", " + c + ");", {}};
      case 8: return {"int " + a + " = " + b + ".length;", "int " + a + " = " + b + ".length - 1;", {}};
      case 9: return {"this." + a + " = " + a + ";", "this." + a + " = " + b + ";", {}};
      case 10:
        return {"String " + a + " = " + b + ".substring(0, " + c + ");",
                "String " + a + " = " + b + ".substring(1, " + c + ");", {}};
      case 11:
        return {"throw new IllegalStateException(\"" + a + "\");", "throw new IllegalArgumentException(\"" + a + "\");",
                {"catch (IllegalArgumentException ex) {"}};
      case 12: return {a + " = " + b + " + " + c + " + 1;", a + " = " + b + " + " + c + ";", {}};
      case 13: return {"while (" + a + " > 0) {", "while (" + a + " >= 0) {", {}};
      case 14: return {"return " + a + ";", "return " + a + " + " + b + ";", {}};
      default: return {a + "." + m1 + "();", a + "." + m1 + "(); " + a + ".close();", {a + ".close();"}};
    }
  }

  /// A class file of roughly 20-40 lines with `bug` at a random line inside
  /// a method body. Returns the text and the 1-based bug line number.
  std::pair<std::string, std::size_t> file(const std::string& cls, const Change& ch) {
    std::vector<std::string> lines{"package fixture;", "", "import java.util.List;", "", "public class " + cls + " {"};
    const std::size_t fields = 2 + pick_index(3);
    for (std::size_t i = 0; i < fields; ++i) lines.push_back("    private int " + pick(names_) + ";");
    lines.push_back("");
    lines.push_back("    public void " + pick(methods_) + "() {");
    std::vector<std::string> body;
    const std::size_t n = 6 + pick_index(14);
    for (std::size_t i = 0; i < n; ++i) body.push_back(filler());
    for (const auto& h : ch.hints)
      if (pick_index(2) == 0) body.insert(body.begin() + static_cast<std::ptrdiff_t>(pick_index(body.size() + 1)), h);
    const std::size_t at = pick_index(body.size() + 1);
    body.insert(body.begin() + static_cast<std::ptrdiff_t>(at), ch.bug);
    for (const auto& b : body) lines.push_back("        " + b);
    lines.push_back("    }");
    lines.push_back("}");
    std::string text;
    for (const auto& l : lines) text += l + "\n";
    return {text, lines.size() - 2 - body.size() + at + 1};
  }

private:
  std::mt19937_64 rng_;
  std::vector<std::string> names_{"count", "index", "total", "level", "damage", "size",  "limit", "offset",
                                  "buffer", "name", "value", "result", "item",  "node", "key",   "width"};
  std::vector<std::string> methods_{"getName", "getValue", "size",  "isEmpty", "toString",
                                    "length",  "flush",    "apply", "reset",   "update"};

  std::size_t pick_index(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }
  const std::string& pick(const std::vector<std::string>& v) { return v[pick_index(v.size())]; }
  std::string other(const std::string& a, const std::string& b = "") {
    for (;;) {
      const auto& s = pick(names_);
      if (s != a && s != b) return s;
    }
  }
  std::string other_method(const std::string& m) {
    for (;;) {
      const auto& s = pick(methods_);
      if (s != m) return s;
    }
  }
  static std::string camel(const std::string& pre, std::string s) {
    s[0] = static_cast<char>(s[0] - 'a' + 'A');
    return pre + s;
  }
  std::string filler() {
    const std::string a = pick(names_), b = other(a);
    switch (pick_index(6)) {
      case 0: return "int " + a + " = " + b + " + 1;";
      case 1: return b + "." + pick(methods_) + "();";
      case 2: return "// keep " + a + " in sync";
      case 3: return a + " += " + std::to_string(pick_index(9) + 1) + ";";
      case 4: return "System.out.println(" + a + ");";
      default: return "List<String> " + a + "s = " + b + ".list();";
    }
  }
};

/// `orgs` x `per_org` distinct pairs; org ids "org00", repo ids "org00/app".
inline std::vector<BugFixPair> synthetic_pairs(std::size_t orgs, std::size_t per_org, std::uint64_t seed) {
  JavaFixGenerator gen(seed);
  std::vector<BugFixPair> out;
  std::set<std::string> seen;
  for (std::size_t o = 0; o < orgs; ++o) {
    const std::string org = (o < 10 ? "org0" : "org") + std::to_string(o);
    for (std::size_t k = 0; k < per_org; ++k) {
      JavaFixGenerator::Change ch;
      do {
        ch = gen.change();
      } while (!seen.insert(patchlens::text::normalize_whitespace(ch.bug)).second);
      BugFixPair p;
      p.org_id = org;
      p.repo_id = org + "/app";
      p.file_path = "src/C" + std::to_string(k) + ".java";
      auto [text, line] = gen.file("C" + std::to_string(k), ch);
      p.file_before = text;
      p.line_number = line;
      p.bug_line = patchlens::text::split_lines(text)[line - 1];
      p.patch_line = p.bug_line.substr(0, p.bug_line.find_first_not_of(' ')) + ch.patch;
      p.commit_hash = "synthetic" + std::to_string(out.size());
      p.commit_message = "Fix " + ch.bug;
      out.push_back(std::move(p));
    }
  }
  return out;
}

inline std::string replace_line(const std::string& file, std::size_t line, const std::string& with) {
  auto lines = patchlens::text::split_lines(file);
  lines.at(line - 1) = with;
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

inline void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

inline void sh(const std::string& cmd) {
  if (std::system((cmd + " >/dev/null 2>&1").c_str()) != 0) throw std::runtime_error("fixture command failed: " + cmd);
}

/// Git repositories laid out as root/<org>/app, one per org, with one
/// qualifying fix commit per pair plus commits the miner must skip.
class GitFixture {
public:
  GitFixture(fs::path root, std::vector<BugFixPair> pairs, bool noise = true)
      : root_(std::move(root)), expected_(std::move(pairs)) {
    ::setenv("GIT_AUTHOR_NAME", "fixture", 1);
    ::setenv("GIT_AUTHOR_EMAIL", "fixture@example.com", 1);
    ::setenv("GIT_COMMITTER_NAME", "fixture", 1);
    ::setenv("GIT_COMMITTER_EMAIL", "fixture@example.com", 1);
    ::setenv("GIT_AUTHOR_DATE", "2020-01-01T00:00:00Z", 1);
    ::setenv("GIT_COMMITTER_DATE", "2020-01-01T00:00:00Z", 1);
    fs::create_directories(root_);
    std::vector<std::string> orgs;
    for (const auto& p : expected_)
      if (orgs.empty() || orgs.back() != p.org_id) orgs.push_back(p.org_id);
    for (const auto& org : orgs) build_repo(org, noise);
  }

  const fs::path& root() const { return root_; }
  const std::vector<BugFixPair>& expected() const { return expected_; }

private:
  fs::path root_;
  std::vector<BugFixPair> expected_;

  static std::string noise_file() {
    std::string s = "package fixture;\n\npublic class Noise {\n";
    for (int i = 0; i < 12; ++i) s += "    int f" + std::to_string(i) + " = " + std::to_string(i) + ";\n";
    return s + "}\n";
  }

  void commit(const fs::path& repo, const std::string& message) {
    write_file(repo / ".git" / "FIXTURE_MSG", message);
    sh("git -C " + patchlens::mining::detail::shell_quote(repo.string()) +
       " -c commit.gpgsign=false commit -q -a -F .git/FIXTURE_MSG");
  }

  void build_repo(const std::string& org, bool noise) {
    const fs::path repo = root_ / org / "app";
    const std::string q = patchlens::mining::detail::shell_quote(repo.string());
    fs::create_directories(repo);
    sh("git -c init.defaultBranch=main init -q " + q);
    std::string noise_text = noise_file();
    write_file(repo / "src/Noise.java", noise_text);
    write_file(repo / "src/Other.java", noise_text);
    write_file(repo / "README.md", "# app\n\nfixture repository\n");
    std::vector<BugFixPair*> mine;
    for (auto& p : expected_)
      if (p.org_id == org) {
        write_file(repo / p.file_path, p.file_before);
        mine.push_back(&p);
      }
    sh("git -C " + q + " add -A");
    commit(repo, "Initial import");

    auto touch_noise = [&](int line, const std::string& with) {
      noise_text = replace_line(noise_text, static_cast<std::size_t>(line), with);
      write_file(repo / "src/Noise.java", noise_text);
    };
    for (std::size_t i = 0; i < mine.size(); ++i) {
      BugFixPair& p = *mine[i];
      write_file(repo / p.file_path, replace_line(p.file_before, p.line_number, p.patch_line));
      commit(repo, "Fix " + std::string(i % 2 == 0 ? "wrong condition" : "bug in update path") + "\n\nDetails.\n");
      auto head = patchlens::mining::detail::git(repo, {"rev-parse", "HEAD"});
      p.commit_hash = patchlens::text::normalize_whitespace(head.output);
      p.commit_message = "Fix " + std::string(i % 2 == 0 ? "wrong condition" : "bug in update path") + "\n\nDetails.\n";
      if (!noise || i >= 6) continue;
      const int base = 4 + static_cast<int>(i) * 2;
      switch (i) {
        case 0:  // no keyword
          touch_noise(base, "    int f0 = 100;");
          commit(repo, "Add initial value");
          break;
        case 1:  // two files
          touch_noise(base, "    int f2 = 200;");
          write_file(repo / "src/Other.java", replace_line(noise_text, 5, "    int f1 = 42;"));
          commit(repo, "Fix two settings");
          break;
        case 2:  // whitespace only
          touch_noise(base, "\tint f4 = 4;");
          commit(repo, "Fix indentation");
          break;
        case 3:  // non-java file
          write_file(repo / "README.md", "# app\n\nfixture repository (fixed)\n");
          commit(repo, "Fix readme typo");
          break;
        case 4:  // two lines in one file
          touch_noise(base, "    int f8 = 80;");
          touch_noise(base + 1, "    int f9 = 90;");
          commit(repo, "Fix several defaults");
          break;
        default:  // blocklisted keyword
          touch_noise(base, "    int f10 = 1000;");
          commit(repo, "Add prefix handling");
          break;
      }
    }
  }
};

}  // namespace fixtures
