#include <gtest/gtest.h>

#include <fstream>
#include <string>
#include <vector>

#include "tamer/vocab.hpp"

namespace tamer {
namespace {

using Strings = std::vector<std::string>;

TEST(Vocab, ReservedIdsAreDistinctAndFirst) {
  auto v = Vocab::crohme();
  EXPECT_EQ(v->token(Vocab::kSos), "<sos>");
  EXPECT_EQ(v->token(Vocab::kEos), "<eos>");
  EXPECT_EQ(v->token(Vocab::kPad), "<pad>");
  EXPECT_GT(v->size(), 100u);
}

TEST(Vocab, ExactlyFourStructuralTokens) {
  auto v = Vocab::crohme();
  Strings structural;
  for (std::size_t i = 0; i < v->size(); ++i)
    if (v->structural(static_cast<TokenId>(i))) structural.push_back(v->token(static_cast<TokenId>(i)));
  std::sort(structural.begin(), structural.end());
  EXPECT_EQ(structural, (Strings{"^", "_", "{", "}"}));
}

TEST(Vocab, ClassificationDependsOnlyOnTheString) {
  EXPECT_EQ(classify("\\frac"), TokenClass::Command);
  EXPECT_EQ(classify("\\{"), TokenClass::Command);
  EXPECT_EQ(classify("x"), TokenClass::Symbol);
  EXPECT_EQ(classify("\\"), TokenClass::Symbol);
  EXPECT_EQ(classify("^"), TokenClass::Structural);
  Vocab a(Strings{"x", "\\pi", "{"});
  Vocab b(Strings{"{", "\\pi", "x"});
  EXPECT_EQ(a.token_class(*a.find("\\pi")), b.token_class(*b.find("\\pi")));
}

TEST(Vocab, DuplicateTokensRejected) {
  EXPECT_THROW(Vocab(Strings{"a", "b", "a"}), Error);
  EXPECT_THROW(Vocab(Strings{"<eos>"}), Error);
}

TEST(Vocab, AssetFileMatchesBuiltIn) {
  auto from_file = Vocab::load(std::string(TAMER_ASSET_DIR) + "/crohme_vocab.txt");
  EXPECT_EQ(*from_file, *Vocab::crohme());
}

TEST(Vocab, FileRoundTripKeepsIds) {
  Vocab v(Strings{"x", "+", "\\sqrt"});
  const std::string path = ::testing::TempDir() + "/vocab_rt.txt";
  v.save(path);
  auto back = Vocab::load(path);
  EXPECT_EQ(*back, v);
  EXPECT_EQ(*back->find("x"), 3);
  EXPECT_EQ(*back->find("\\sqrt"), 5);
}

TEST(Tokenize, GoldenSpacedString) {
  auto seq = tokenize_spaced("3 ^ { 2 } - 1 = 8", Vocab::crohme());
  EXPECT_EQ(seq.size(), 9u);
  EXPECT_EQ(seq.strings(), (Strings{"3", "^", "{", "2", "}", "-", "1", "=", "8"}));
}

TEST(Tokenize, EmptyText) {
  EXPECT_TRUE(tokenize_spaced("", Vocab::crohme()).empty());
  EXPECT_TRUE(tokenize_spaced("   \t ", Vocab::crohme()).empty());
  EXPECT_TRUE(tokenize_raw("", Vocab::crohme()).empty());
}

TEST(Tokenize, FractionSpaced) {
  auto seq = tokenize_spaced("\\frac { a } { b }", Vocab::crohme());
  EXPECT_EQ(seq.strings(), (Strings{"\\frac", "{", "a", "}", "{", "b", "}"}));
}

TEST(Tokenize, UnknownChunkReportsPosition) {
  try {
    tokenize_spaced("a + \\foo", Vocab::crohme());
    FAIL() << "expected UnknownToken";
  } catch (const UnknownTokenError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnknownToken);
    EXPECT_EQ(e.chunk(), "\\foo");
    EXPECT_EQ(e.position(), 2u);
  }
}

TEST(Tokenize, RawScan) {
  auto v = Vocab::crohme();
  EXPECT_EQ(tokenize_raw("x^{2}", v).strings(), (Strings{"x", "^", "{", "2", "}"}));
  EXPECT_EQ(tokenize_raw("a", v).strings(), (Strings{"a"}));
  EXPECT_EQ(tokenize_raw("\\sqrt{b}", v).strings(), (Strings{"\\sqrt", "{", "b", "}"}));
  EXPECT_EQ(tokenize_raw("\\{x\\}", v).strings(), (Strings{"\\{", "x", "\\}"}));
  EXPECT_EQ(tokenize_raw("\\frac12", v).strings(), (Strings{"\\frac", "1", "2"}));
}

TEST(Tokenize, RawUnknown) { EXPECT_THROW(tokenize_raw("x#", Vocab::crohme()), UnknownTokenError); }

TEST(Detokenize, JoinsWithSingleSpaces) {
  auto v = Vocab::crohme();
  EXPECT_EQ(detokenize(TokenSeq({}, v)), "");
  EXPECT_EQ(detokenize(tokenize_spaced("3  ^ {   2 }", v)), "3 ^ { 2 }");
}

TEST(TokenSeq, RejectsOutOfRangeIds) {
  auto v = std::make_shared<const Vocab>(Strings{"a"});
  EXPECT_THROW(TokenSeq({4}, v), Error);
  EXPECT_THROW(TokenSeq({-1}, v), Error);
  EXPECT_NO_THROW(TokenSeq({3}, v));
}

}  // namespace
}  // namespace tamer
