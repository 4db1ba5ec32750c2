#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "patchlens/text.hpp"

namespace patchlens {

enum class TokenKind {
  Keyword,
  Identifier,
  Separator,
  Operator,
  IntegerLiteral,
  FloatLiteral,
  StringLiteral,
  CharLiteral,
  BooleanLiteral,
  NullLiteral,
  Annotation,
  Other,
};

inline constexpr std::array<std::string_view, 12> kTokenKindNames = {
    "Keyword",       "Identifier",    "Separator",   "Operator",
    "IntegerLiteral", "FloatLiteral", "StringLiteral", "CharLiteral",
    "BooleanLiteral", "NullLiteral",  "Annotation",  "Other"};

inline std::string_view to_string(TokenKind kind) {
  return kTokenKindNames[static_cast<std::size_t>(kind)];
}

inline std::optional<TokenKind> token_kind_from_string(std::string_view name) {
  for (std::size_t i = 0; i < kTokenKindNames.size(); ++i)
    if (kTokenKindNames[i] == name) return static_cast<TokenKind>(i);
  return std::nullopt;
}

struct Token {
  std::string text;
  TokenKind kind = TokenKind::Other;

  friend bool operator==(const Token&, const Token&) = default;
};

namespace lexer_detail {

inline constexpr std::array<std::string_view, 51> kKeywords = {
    "abstract",  "assert",     "boolean",   "break",     "byte",     "case",
    "catch",     "char",       "class",     "const",     "continue", "default",
    "do",        "double",     "else",      "enum",      "extends",  "final",
    "finally",   "float",      "for",       "goto",      "if",       "implements",
    "import",    "instanceof", "int",       "interface", "long",     "native",
    "new",       "package",    "private",   "protected", "public",   "return",
    "short",     "static",     "strictfp",  "super",     "switch",   "synchronized",
    "this",      "throw",      "throws",    "transient", "try",      "void",
    "volatile",  "while",      "_"};

// Longest first so a linear scan yields the longest match.
inline constexpr std::array<std::string_view, 38> kOperators = {
    ">>>=", "<<=", ">>=", ">>>", "->", "==", ">=", "<=", "!=", "&&",
    "||",   "++",  "--",  "<<",  ">>", "+=", "-=", "*=", "/=", "&=",
    "|=",   "^=",  "%=",  "=",   ">",  "<",  "!",  "~",  "?",  ":",
    "+",    "-",   "*",   "/",   "&",  "|",  "^",  "%"};

inline constexpr std::array<std::string_view, 11> kSeparators = {
    "...", "::", "(", ")", "{", "}", "[", "]", ";", ",", "."};

inline bool is_keyword(std::string_view word) {
  return std::find(kKeywords.begin(), kKeywords.end(), word) != kKeywords.end();
}

inline bool is_digit(char c) { return c >= '0' && c <= '9'; }
inline bool is_hex_digit(char c) {
  return is_digit(c) || (c >= 'a' && c <= 'f') || (c >= 'A' && c <= 'F');
}

// Non-ASCII code points are accepted as Java letters; the Java rules
// (Character.isJavaIdentifierStart) admit nearly all of them.
inline bool is_ident_start(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' || c == '$' || c >= 0x80;
}
inline bool is_ident_part(unsigned char c) { return is_ident_start(c) || is_digit(static_cast<char>(c)); }

class Scanner {
public:
  explicit Scanner(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    while (skip_trivia()) {
      out.push_back(next());
    }
    return out;
  }

private:
  std::string_view src_;
  std::size_t pos_ = 0;

  char peek(std::size_t ahead = 0) const {
    return pos_ + ahead < src_.size() ? src_[pos_ + ahead] : '\0';
  }

  bool starts_with(std::string_view s) const { return src_.substr(pos_).starts_with(s); }

  // Skips whitespace and comments; returns false at end of input.
  bool skip_trivia() {
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (text::is_space(c)) {
        ++pos_;
      } else if (starts_with("\xC2\xA0")) {
        pos_ += 2;
      } else if (starts_with("//")) {
        pos_ = src_.size();
      } else if (starts_with("/*")) {
        std::size_t end = src_.find("*/", pos_ + 2);
        pos_ = end == std::string_view::npos ? src_.size() : end + 2;
      } else {
        return true;
      }
    }
    return false;
  }

  Token take(std::size_t start, TokenKind kind) {
    return Token{std::string(src_.substr(start, pos_ - start)), kind};
  }

  Token rest_as_other(std::size_t start) {
    std::string_view rest = src_.substr(start);
    while (!rest.empty() && text::is_space(rest.back())) rest.remove_suffix(1);
    pos_ = src_.size();
    return Token{std::string(rest), TokenKind::Other};
  }

  Token next() {
    const std::size_t start = pos_;
    const char c = peek();
    const auto uc = static_cast<unsigned char>(c);

    if (is_ident_start(uc)) {
      while (pos_ < src_.size() && is_ident_part(static_cast<unsigned char>(src_[pos_]))) ++pos_;
      std::string_view word = src_.substr(start, pos_ - start);
      if (word == "true" || word == "false") return take(start, TokenKind::BooleanLiteral);
      if (word == "null") return take(start, TokenKind::NullLiteral);
      return take(start, is_keyword(word) ? TokenKind::Keyword : TokenKind::Identifier);
    }
    if (is_digit(c) || (c == '.' && is_digit(peek(1)))) return number(start);
    if (c == '"') return quoted(start, '"', TokenKind::StringLiteral);
    if (c == '\'') return quoted(start, '\'', TokenKind::CharLiteral);
    if (c == '@' && is_ident_start(static_cast<unsigned char>(peek(1)))) {
      ++pos_;
      while (pos_ < src_.size() && is_ident_part(static_cast<unsigned char>(src_[pos_]))) ++pos_;
      return take(start, TokenKind::Annotation);
    }
    for (std::string_view sep : kSeparators) {
      if (starts_with(sep)) {
        pos_ += sep.size();
        return take(start, TokenKind::Separator);
      }
    }
    if (c == '@') {
      ++pos_;
      return take(start, TokenKind::Separator);
    }
    for (std::string_view op : kOperators) {
      if (starts_with(op)) {
        pos_ += op.size();
        return take(start, TokenKind::Operator);
      }
    }
    std::size_t n = text::utf8_length(uc);
    pos_ += (n == 0 ? 1 : std::min(n, src_.size() - pos_));
    return take(start, TokenKind::Other);
  }

  Token quoted(std::size_t start, char quote, TokenKind kind) {
    if (quote == '"' && starts_with("\"\"\"")) return rest_as_other(start);  // text block
    ++pos_;
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (c == '\\') {
        pos_ += 2;
        continue;
      }
      ++pos_;
      if (c == quote) return take(start, kind);
    }
    return rest_as_other(start);
  }

  void digits(bool hex) {
    while (pos_ < src_.size() &&
           (src_[pos_] == '_' || (hex ? is_hex_digit(src_[pos_]) : is_digit(src_[pos_]))))
      ++pos_;
  }

  bool exponent(char lower) {
    char c = peek();
    if (c != lower && c != lower - 32) return false;
    std::size_t save = pos_;
    ++pos_;
    if (peek() == '+' || peek() == '-') ++pos_;
    if (!is_digit(peek())) {
      pos_ = save;
      return false;
    }
    digits(false);
    return true;
  }

  Token number(std::size_t start) {
    bool is_float = false;
    if (peek() == '0' && (peek(1) == 'x' || peek(1) == 'X')) {
      pos_ += 2;
      digits(true);
      if (peek() == '.') {
        ++pos_;
        digits(true);
        is_float = true;
      }
      if (exponent('p')) is_float = true;
    } else if (peek() == '0' && (peek(1) == 'b' || peek(1) == 'B')) {
      pos_ += 2;
      digits(false);
    } else {
      digits(false);
      if (peek() == '.' && peek(1) != '.' &&
          !(is_ident_start(static_cast<unsigned char>(peek(1))) && peek(1) != 'e' &&
            peek(1) != 'E' && peek(1) != 'f' && peek(1) != 'F' && peek(1) != 'd' &&
            peek(1) != 'D')) {
        ++pos_;
        digits(false);
        is_float = true;
      }
      if (exponent('e')) is_float = true;
    }
    char s = peek();
    if (s == 'l' || s == 'L') {
      ++pos_;
      return take(start, is_float ? TokenKind::Other : TokenKind::IntegerLiteral);
    }
    if (s == 'f' || s == 'F' || s == 'd' || s == 'D') {
      ++pos_;
      return take(start, TokenKind::FloatLiteral);
    }
    return take(start, is_float ? TokenKind::FloatLiteral : TokenKind::IntegerLiteral);
  }
};

}  // namespace lexer_detail

/// Lex one line of Java source. Comments and whitespace are dropped;
/// an unterminated string or char literal swallows the rest of the line as
/// a single Other token.
inline std::vector<Token> tokenize(std::string_view line) {
  return lexer_detail::Scanner(line).run();
}

inline std::vector<TokenKind> type_sequence(const std::vector<Token>& tokens) {
  std::vector<TokenKind> kinds;
  kinds.reserve(tokens.size());
  for (const Token& t : tokens) kinds.push_back(t.kind);
  return kinds;
}

/// True iff the fix keeps the exact token-type sequence of the bug.
inline bool syntax_unchanged(const std::vector<Token>& bug, const std::vector<Token>& patch) {
  return type_sequence(bug) == type_sequence(patch);
}

inline std::vector<std::string> token_texts(const std::vector<Token>& tokens) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const Token& t : tokens) out.push_back(t.text);
  return out;
}

/// Lex a line and keep only the token texts.
inline std::vector<std::string> lex_texts(std::string_view line) { return token_texts(tokenize(line)); }

}  // namespace patchlens
