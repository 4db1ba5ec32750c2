#include <gtest/gtest.h>

#include "patchlens/lexer.hpp"

using namespace patchlens;

namespace {
std::vector<std::pair<std::string, TokenKind>> lex(std::string_view s) {
  std::vector<std::pair<std::string, TokenKind>> out;
  for (const auto& t : tokenize(s)) out.emplace_back(t.text, t.kind);
  return out;
}
}  // namespace

TEST(Lexer, IfStatementFromPaper) {
  using K = TokenKind;
  auto got = lex("if (level >= damage)");
  std::vector<std::pair<std::string, TokenKind>> want{{"if", K::Keyword},     {"(", K::Separator},
                                                      {"level", K::Identifier}, {">=", K::Operator},
                                                      {"damage", K::Identifier}, {")", K::Separator}};
  EXPECT_EQ(got, want);
}

TEST(Lexer, EmptyLine) { EXPECT_TRUE(tokenize("").empty()); }

TEST(Lexer, StringLiteralIsOneToken) {
  auto toks = tokenize("LOG.error(\"Can't read settings for \" + tool, e);");
  auto it = std::find_if(toks.begin(), toks.end(), [](const Token& t) { return t.kind == TokenKind::StringLiteral; });
  ASSERT_NE(it, toks.end());
  EXPECT_EQ(it->text, "\"Can't read settings for \"");
  EXPECT_EQ(std::count_if(toks.begin(), toks.end(), [](const Token& t) { return t.kind == TokenKind::StringLiteral; }),
            1);
}

TEST(Lexer, TypeSequenceOfAssignment) {
  using K = TokenKind;
  EXPECT_EQ(type_sequence(tokenize("x = 1 ;")),
            (std::vector<TokenKind>{K::Identifier, K::Operator, K::IntegerLiteral, K::Separator}));
  EXPECT_TRUE(type_sequence({}).empty());
}

TEST(Lexer, LiteralKinds) {
  auto k = [](std::string_view s) { return tokenize(s).at(0).kind; };
  EXPECT_EQ(k("true"), TokenKind::BooleanLiteral);
  EXPECT_EQ(k("null"), TokenKind::NullLiteral);
  EXPECT_EQ(k("0x1F"), TokenKind::IntegerLiteral);
  EXPECT_EQ(k("1.5e3"), TokenKind::FloatLiteral);
  EXPECT_EQ(k("'c'"), TokenKind::CharLiteral);
}

TEST(Lexer, LongestOperatorMatch) {
  EXPECT_EQ(lex_texts("a >>>= b"), (std::vector<std::string>{"a", ">>>=", "b"}));
  EXPECT_EQ(lex_texts("i++"), (std::vector<std::string>{"i", "++"}));
}

TEST(Lexer, CommentsAreDropped) {
  EXPECT_EQ(lex_texts("x = 1; // note"), (std::vector<std::string>{"x", "=", "1", ";"}));
  EXPECT_EQ(lex_texts("/* a */ y"), (std::vector<std::string>{"y"}));
}

TEST(Lexer, UnterminatedStringBecomesOther) {
  auto toks = tokenize("s = \"open");
  ASSERT_EQ(toks.size(), 3u);
  EXPECT_EQ(toks[2].kind, TokenKind::Other);
  EXPECT_EQ(toks[2].text, "\"open");
}

TEST(Lexer, SyntaxUnchanged) {
  EXPECT_TRUE(syntax_unchanged(tokenize("if (level >= damage)"), tokenize("if (level <= damage)")));
  EXPECT_TRUE(syntax_unchanged(tokenize("x = false;"), tokenize("x = true;")));
  EXPECT_FALSE(syntax_unchanged(tokenize("f(a);"), tokenize("f(a, b);")));
}
