#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tamer/corpus.hpp"

namespace tamer {
namespace {

using Strings = std::vector<std::string>;
using Ints = std::vector<int>;

const std::string kInk = std::string(TAMER_FIXTURE_DIR) + "/inkml";
const std::string kBadInk = std::string(TAMER_FIXTURE_DIR) + "/inkml_bad";

void expect_kind(const std::function<void()>& f, ErrorKind kind) {
  try {
    f();
    FAIL() << "expected " << to_string(kind);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
  }
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("tamer_corpus_" + name)).string();
}

const std::vector<CorpusRecord>& standard_corpus() {
  static const auto records = generate(GrammarConfig{}, 2000);
  return records;
}

bool is_group_opener(const std::string& t) { return t == "^" || t == "_" || t == "\\frac" || t == "\\sqrt" || t == "}"; }

TEST(Generate, Empty) { EXPECT_TRUE(generate(GrammarConfig{}, 0).empty()); }

TEST(Generate, DepthZeroIsFlat) {
  GrammarConfig cfg;
  cfg.max_depth = 0;
  for (const auto& r : generate(cfg, 200)) {
    EXPECT_EQ(r.complexity, 0);
    for (const auto& t : r.tokens) EXPECT_FALSE(is_structural(t)) << t;
  }
}

TEST(Generate, DeterministicBytes) {
  GrammarConfig cfg;
  cfg.seed = 7;
  auto a = generate(cfg, 300), b = generate(cfg, 300);
  EXPECT_EQ(to_jsonl(a), to_jsonl(b));
  cfg.seed = 8;
  EXPECT_NE(to_jsonl(generate(cfg, 300)), to_jsonl(a));
}

TEST(Generate, RecordsAgreeWithTreebank) {
  for (const auto& r : standard_corpus()) {
    const ParentAnnotation ann = treeify(r.tokens);
    ASSERT_EQ(r.parents, ann.parents) << join_tokens(r.tokens);
    EXPECT_EQ(r.complexity, structural_complexity(build_tree(ann)));
    EXPECT_EQ(check_annotation(ann, r.tokens), std::nullopt) << join_tokens(r.tokens);
    EXPECT_TRUE(brackets_balanced(r.tokens));
    EXPECT_LE(r.tokens.size(), 40u);
  }
}

TEST(Generate, ExactlyOneRoot) {
  for (const auto& r : standard_corpus()) {
    ASSERT_FALSE(r.tokens.empty());
    EXPECT_EQ(build_tree(treeify(r.tokens)).roots.size(), 1u) << join_tokens(r.tokens);
  }
}

TEST(Generate, CoversEveryBucketUpToTheMaximum) {
  std::set<int> seen;
  for (const auto& r : standard_corpus()) seen.insert(r.complexity);
  const int top = *seen.rbegin();
  EXPECT_GE(top, GrammarConfig{}.max_depth);
  for (int c = 0; c <= top; ++c) EXPECT_TRUE(seen.count(c)) << "missing complexity " << c;
}

TEST(Generate, SmallVocabulary) {
  std::vector<Strings> seqs;
  for (const auto& r : standard_corpus()) seqs.push_back(r.tokens);
  auto vocab = Vocab::from_corpus(seqs);
  EXPECT_LE(vocab->size(), 40u);
  const auto declared = grammar_symbols(GrammarConfig{});
  for (const auto& s : vocab->symbols()) EXPECT_TRUE(std::binary_search(declared.begin(), declared.end(), s)) << s;
}

TEST(Generate, BareGroupsOnlyWhenEnabled) {
  auto bare = [](const std::vector<CorpusRecord>& rs) {
    std::size_t n = 0;
    for (const auto& r : rs)
      for (std::size_t i = 0; i < r.tokens.size(); ++i)
        if (r.tokens[i] == "{" && (i == 0 || !is_group_opener(r.tokens[i - 1]))) ++n;
    return n;
  };
  EXPECT_EQ(bare(standard_corpus()), 0u);
  GrammarConfig cfg;
  cfg.bare_groups = true;
  auto stressed = generate(cfg, 500);
  EXPECT_GT(bare(stressed), 0u);
  for (const auto& r : stressed) EXPECT_EQ(r.parents, treeify(r.tokens).parents);
}

TEST(Generate, InvalidConfig) {
  GrammarConfig cfg;
  cfg.w_script = cfg.w_frac = cfg.w_sqrt = cfg.w_sum = 0.0;
  expect_kind([&] { generate(cfg, 1); }, ErrorKind::InvalidConfig);
  cfg = GrammarConfig{};
  cfg.max_depth = -1;
  expect_kind([&] { generate(cfg, 1); }, ErrorKind::InvalidConfig);
  cfg = GrammarConfig{};
  cfg.alphabet = {"^"};
  expect_kind([&] { generate(cfg, 1); }, ErrorKind::InvalidConfig);
}

TEST(Tokenizer, RawRoundTripOverGenerator) {
  std::vector<Strings> seqs;
  for (const auto& r : standard_corpus()) seqs.push_back(r.tokens);
  auto vocab = Vocab::from_corpus(seqs);
  for (const auto& r : standard_corpus()) {
    auto seq = TokenSeq::from_tokens(r.tokens, vocab);
    std::string squeezed = detokenize(seq);
    std::erase(squeezed, ' ');
    EXPECT_EQ(tokenize_raw(squeezed, vocab), seq) << squeezed;
  }
}

TEST(Treebank, GraftingNeverLowersComplexity) {
  const auto& rs = standard_corpus();
  for (std::size_t k = 0; k + 1 < 400; k += 2) {
    const ParentAnnotation a = treeify(rs[k].tokens), b = treeify(rs[k + 1].tokens);
    const ExprTree ta = build_tree(a), tb = build_tree(b);
    const int base = structural_complexity(ta);
    for (int host : ta.nodes) {
      if (ta.children[static_cast<std::size_t>(host)].empty()) continue;
      ParentAnnotation g = a;
      const int offset = static_cast<int>(a.size());
      for (std::size_t i = 0; i < b.size(); ++i) {
        const int p = b.parents[i];
        g.parents.push_back(p == kNoParent ? (b.node[i] ? host : kNoParent) : p + offset);
        g.node.push_back(b.node[i]);
      }
      ASSERT_EQ(tb.roots.size(), 1u);
      EXPECT_GE(structural_complexity(build_tree(g)), base);
    }
  }
}

TEST(Jsonl, RoundTripThousandRecords) {
  auto records = generate(GrammarConfig{}, 1000);
  records[3].traces = {{{1.5, 2.25}, {3.0, -4.125}}, {{0.1, 0.2, 0.3}}};
  records[5].raw = "x^{2}";
  const std::string path = temp_path("roundtrip.jsonl");
  write_jsonl(path, records);
  EXPECT_EQ(read_jsonl(path), records);
  std::filesystem::remove(path);
}

TEST(Jsonl, EmptyCorpus) {
  const std::string path = temp_path("empty.jsonl");
  write_jsonl(path, std::vector<CorpusRecord>{});
  EXPECT_EQ(std::filesystem::file_size(path), 0u);
  EXPECT_TRUE(read_jsonl(path).empty());
  std::filesystem::remove(path);
}

TEST(Jsonl, NoParentIsMinusOne) {
  auto r = make_record("r", Strings{"a", "+", "b"});
  EXPECT_EQ(to_json(r).dump(), R"({"complexity":0,"id":"r","parents":[-1,0,1],"tokens":["a","+","b"]})");
}

TEST(Jsonl, SchemaErrorsCarryLineNumbers) {
  auto check = [](const std::string& text, const std::string& where) {
    std::istringstream in(text);
    try {
      parse_jsonl(in, "c.jsonl");
      FAIL() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::SchemaError);
      EXPECT_NE(std::string(e.what()).find(where), std::string::npos) << e.what();
    }
  };
  const std::string good = R"({"id":"a","tokens":["a"],"parents":[-1],"complexity":0})";
  check(good + "\n{not json\n", "c.jsonl:2:");
  check(good + "\n" + good + "\n" + R"({"id":"b","tokens":["a"],"complexity":0})" + "\n", "c.jsonl:3:");
  check(R"({"id":"b","tokens":["a","b"],"parents":[-1,-1],"complexity":0})", "c.jsonl:1:");
  check(R"({"id":"b","tokens":["a"],"parents":[-1],"complexity":2})", "c.jsonl:1:");
}

TEST(Jsonl, MissingFileIsIoError) {
  expect_kind([] { read_jsonl("/nonexistent/dir/x.jsonl"); }, ErrorKind::IoError);
}

TEST(Inkml, MinimalFixture) {
  auto r = ingest_inkml(kInk + "/minimal.inkml");
  EXPECT_EQ(r.id, "minimal");
  EXPECT_EQ(r.tokens, (Strings{"a", "+", "b"}));
  EXPECT_EQ(r.parents, (Ints{-1, 0, 1}));
  EXPECT_EQ(r.complexity, 0);
  ASSERT_EQ(r.traces.size(), 1u);
  EXPECT_EQ(r.traces[0], (Trace{{10, 20}, {11.5, 21}, {12, 22.25}}));
  EXPECT_EQ(r.raw, "a + b");
}

TEST(Inkml, NamespacePrefixesAndDelimiters) {
  auto r = ingest_inkml(kInk + "/prefixed.inkml");
  EXPECT_EQ(r.tokens, (Strings{"x", "^", "{", "2", "}", "+", "1"}));
  EXPECT_EQ(r.parents, treeify(r.tokens).parents);
  EXPECT_EQ(r.complexity, 1);
  ASSERT_EQ(r.traces.size(), 2u);
  EXPECT_EQ(r.traces[1], (Trace{{5, 5, 20}, {6, 4, 30}, {7, 3, 40}}));
  EXPECT_EQ(r.raw, "$x^{2}+1$");
}

TEST(Inkml, LabelsOnly) {
  auto r = ingest_inkml(kInk + "/labels_only.inkml");
  EXPECT_EQ(r.tokens, (Strings{"\\frac", "{", "1", "}", "{", "2", "}"}));
  EXPECT_TRUE(r.traces.empty());
  EXPECT_TRUE(brackets_balanced(r.tokens));
}

TEST(Inkml, Errors) {
  expect_kind([] { ingest_inkml(kBadInk + "/no_truth.inkml"); }, ErrorKind::MissingTruthAnnotation);
  expect_kind([] { ingest_inkml(kBadInk + "/malformed.inkml"); }, ErrorKind::MalformedXml);
  expect_kind([] { ingest_inkml(kBadInk + "/unknown_token.inkml"); }, ErrorKind::UnknownToken);
  expect_kind([] { ingest_inkml(kBadInk + "/absent.inkml"); }, ErrorKind::IoError);
}

TEST(Inkml, Directory) {
  auto rs = ingest_directory(kInk);
  ASSERT_EQ(rs.size(), 3u);
  EXPECT_EQ(rs[0].id, "labels_only");
  EXPECT_EQ(rs[1].id, "minimal");
  EXPECT_EQ(rs[2].id, "prefixed");
  const std::string path = temp_path("ingested.jsonl");
  write_jsonl(path, rs);
  EXPECT_EQ(read_jsonl(path), rs);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace tamer
