#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "tamer/gradcheck_suite.hpp"
#include "tamer/model.hpp"

namespace tamer {
namespace {

using nn::Tape;

std::vector<std::string> words(const std::string& s) { return split_whitespace(s); }

struct Fixture {
  VocabPtr vocab = small_check_vocab();
  ToyModel model;
  Batch batch;

  Fixture(std::vector<std::string> texts, ModelConfig cfg = small_check_config(5), std::uint64_t source_seed = 1) {
    model = ToyModel::create(cfg, vocab);
    std::vector<std::vector<int>> seqs;
    std::vector<ParentAnnotation> anns;
    for (const auto& t : texts) {
      TokenSeq s = tokenize_spaced(t, vocab);
      seqs.push_back(s.ids());
      anns.push_back(treeify(s));
    }
    Rng rng(source_seed);
    batch = make_batch(seqs, anns, vocab->size(), cfg.noise_sigma, rng);
  }
};

std::string describe(const nn::GradCheckReport& r) {
  std::ostringstream os;
  os << std::setprecision(3);
  for (const auto& e : r.entries)
    if (!e.pass)
      os << e.name << "[" << e.worst_index << "] rel " << e.max_rel_error << " analytic " << e.analytic << " numeric "
         << e.numeric << "\n";
  return os.str();
}

bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// ---------------------------------------------------------------------------
// Config and batching

TEST(ModelConfig, ValidatesDivisibility) {
  ModelConfig c = ModelConfig::toy(20);
  EXPECT_NO_THROW(c.validate());
  c.heads = 3;
  EXPECT_THROW(c.validate(), Error);
  ModelConfig full;
  EXPECT_EQ(full.d_model, 256);
  EXPECT_EQ(full.heads, 8);
  EXPECT_EQ(full.d_ff, 1024);
  EXPECT_EQ(full.decoder_layers, 3);
  EXPECT_EQ(c.d_model, 64);
  EXPECT_EQ(ModelConfig::toy(20).decoder_layers, 2);
}

TEST(Batching, FramesTokensTargetsAndParents) {
  auto vocab = small_check_vocab();
  TokenSeq s = tokenize_spaced("a ^ { b } + c", vocab);
  std::vector<std::vector<int>> seqs{s.ids(), tokenize_spaced("a", vocab).ids()};
  std::vector<ParentAnnotation> anns{treeify(s), treeify(tokenize_spaced("a", vocab))};
  Rng rng(1);
  Batch b = make_batch(seqs, anns, vocab->size(), 0.0, rng);
  const std::size_t T = 8;
  ASSERT_EQ(b.input.length, T);
  EXPECT_EQ(b.input.lengths, (std::vector<std::size_t>{8, 2}));
  EXPECT_EQ(b.input.ids[0], Vocab::kSos);
  EXPECT_EQ(b.input.ids[1], *vocab->find("a"));
  EXPECT_EQ(b.targets[6], *vocab->find("c"));
  EXPECT_EQ(b.targets[7], Vocab::kEos);
  EXPECT_EQ(b.input.ids[T + 2], Vocab::kPad);
  EXPECT_EQ(b.targets[T + 1], Vocab::kEos);
  EXPECT_EQ(b.targets[T + 2], Vocab::kPad);
  // a ^ { b } + c: b -> a, + -> a, c -> +; framed columns are token + 1
  EXPECT_EQ(std::vector<int>(b.parents.begin(), b.parents.begin() + T),
            (std::vector<int>{kNoParent, kNoParent, kNoParent, kNoParent, 1, kNoParent, 1, 6}));
  EXPECT_EQ(b.parents[T + 2], kPadTarget);
  // sigma = 0: the source is an exact one-hot of [y, EOS]
  EXPECT_EQ(b.source.features.shape(), (Shape{2, 8, vocab->size()}));
  EXPECT_EQ(b.source.features[(0 * 8 + 7) * vocab->size() + Vocab::kEos], 1.0);
}

// ---------------------------------------------------------------------------
// Forward

TEST(ToyForward, SingleStepShapes) {
  auto vocab = small_check_vocab();
  ModelConfig cfg = small_check_config(3);
  ToyModel m = ToyModel::create(cfg, vocab);
  std::vector<std::vector<int>> empty{{}};
  Rng rng(2);
  Batch b = make_batch(empty, {}, vocab->size(), 0.1, rng);
  ForwardResult fr = toy_forward(m, b.source, b.input);
  EXPECT_EQ(fr.features.shape(), (Shape{1, 1, 8}));
  EXPECT_EQ(fr.logits.shape(), (Shape{1, 1, 12}));
}

TEST(ToyForward, DefaultSizedModelShapes) {
  auto vocab = small_check_vocab();
  ToyModel m = ToyModel::create(ModelConfig::toy(0), vocab);
  Fixture f({"a + b"});
  ForwardResult fr = toy_forward(m, f.batch.source, f.batch.input);
  EXPECT_EQ(fr.features.shape(), (Shape{1, 4, 64}));
  EXPECT_EQ(fr.logits.shape(), (Shape{1, 4, 12}));
}

TEST(ToyForward, WrongSourceWidthIsShapeMismatch) {
  Fixture f({"a + b"});
  SourceInput bad{Tensor::zeros({1, 4, 5}), {4}};
  try {
    toy_forward(f.model, bad, f.batch.input);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
}

TEST(ToyForward, CausalMaskKeepsPrefixBitIdentical) {
  Fixture f({"a + b = c"});
  ForwardResult before = toy_forward(f.model, f.batch.source, f.batch.input);
  const std::size_t d = 8;
  for (std::size_t t = 0; t + 1 < f.batch.input.length; ++t) {
    DecoderInput changed = f.batch.input;
    changed.ids[t + 1] = changed.ids[t + 1] == *f.vocab->find("c") ? *f.vocab->find("a") : *f.vocab->find("c");
    ForwardResult after = toy_forward(f.model, f.batch.source, changed);
    EXPECT_TRUE(bit_equal(before.features.data().subspan(0, (t + 1) * d), after.features.data().subspan(0, (t + 1) * d)))
        << "position " << t;
    EXPECT_FALSE(bit_equal(before.features.data().subspan((t + 1) * d, d), after.features.data().subspan((t + 1) * d, d)));
  }
}

TEST(ToyForward, PaddingDoesNotLeakIntoShorterRows) {
  Fixture alone({"a + b"});
  Fixture padded({"a + b", "a + b = c ^ { a }"});
  ForwardResult a = toy_forward(alone.model, alone.batch.source, alone.batch.input);
  // Same noise draws for the first row in both batches requires identical
  // source rows, so copy them over.
  SourceInput src = padded.batch.source;
  const std::size_t Ts = src.features.dim(1), V = src.features.dim(2);
  auto dst = src.features.mutable_data();
  for (std::size_t t = 0; t < alone.batch.source.features.dim(1); ++t)
    for (std::size_t v = 0; v < V; ++v) dst[t * V + v] = alone.batch.source.features[t * V + v];
  for (std::size_t t = alone.batch.source.features.dim(1); t < Ts; ++t)
    for (std::size_t v = 0; v < V; ++v) dst[t * V + v] = 123.0;  // beyond length 4: must be ignored
  ForwardResult b = toy_forward(padded.model, src, padded.batch.input);
  const std::size_t d = 8, T = padded.batch.input.length;
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(a.features[t * d + k], b.features[t * d + k], 1e-12);
  (void)T;
}

TEST(TamEncode, ShapeAndPermutationEquivariance) {
  ModelConfig cfg = small_check_config(9);
  cfg.tam_positions = false;
  Fixture f({"a + b = c"}, cfg);
  const std::size_t T = 6, d = 8;
  Rng rng(4);
  std::vector<double> xv(T * d);
  for (auto& v : xv) v = rng.normal();
  std::vector<std::size_t> lengths{T};
  Tensor out = tam_encode(f.model, Tensor::from({1, T, d}, xv), lengths);
  EXPECT_EQ(out.shape(), (Shape{1, T, d}));
  // swap rows 1 and 4
  const std::vector<std::size_t> perm{0, 4, 2, 3, 1, 5};
  std::vector<double> pv(T * d);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k = 0; k < d; ++k) pv[t * d + k] = xv[perm[t] * d + k];
  Tensor pout = tam_encode(f.model, Tensor::from({1, T, d}, pv), lengths);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(pout[t * d + k], out[perm[t] * d + k], 1e-12);
}

TEST(TamEncode, PositionsBreakEquivariance) {
  Fixture f({"a + b = c"});
  const std::size_t T = 6, d = 8;
  std::vector<double> xv(T * d, 0.0);
  for (std::size_t k = 0; k < d; ++k) xv[1 * d + k] = xv[4 * d + k] = 0.3 * static_cast<double>(k);
  std::vector<std::size_t> lengths{T};
  Tensor out = tam_encode(f.model, Tensor::from({1, T, d}, xv), lengths);
  double diff = 0.0;
  for (std::size_t k = 0; k < d; ++k) diff += std::abs(out[1 * d + k] - out[4 * d + k]);
  EXPECT_GT(diff, 1e-6);
}

TEST(TamEncode, DisabledModuleIsAnError) {
  ModelConfig cfg = small_check_config(1);
  cfg.tam_enabled = false;
  Fixture f({"a"}, cfg);
  EXPECT_FALSE(f.model.tam.has_value());
  std::vector<std::size_t> lengths{2};
  EXPECT_THROW(tam_encode(f.model, Tensor::zeros({1, 2, 8}), lengths), Error);
}

// ---------------------------------------------------------------------------
// Relation scores

// Independent scalar implementation of the pairwise scorer:
// S_ij = sum_k v_k relu(sum_a X_ia Wc_ak + sum_a X_ja Wp_ak).
double oracle_score(const std::vector<double>& X, const std::vector<double>& Wc, const std::vector<double>& Wp,
                    const std::vector<double>& v, std::size_t d, std::size_t i, std::size_t j) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    double m = 0.0;
    for (std::size_t a = 0; a < d; ++a) m += X[i * d + a] * Wc[a * d + k];
    for (std::size_t a = 0; a < d; ++a) m += X[j * d + a] * Wp[a * d + k];
    s += v[k] * (m > 0.0 ? m : 0.0);
  }
  return s;
}

std::vector<std::uint8_t> lower_triangle(std::size_t T) {
  std::vector<std::uint8_t> c(T * T, 0);
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < i; ++j) c[i * T + j] = 1;
  return c;
}

TamParams tam_from(std::size_t d, std::vector<double> wc, std::vector<double> wp, std::vector<double> v) {
  TamParams p;
  p.w_child = Tensor::parameter({d, d}, std::move(wc));
  p.w_parent = Tensor::parameter({d, d}, std::move(wp));
  p.v_score = Tensor::parameter({d}, std::move(v));
  return p;
}

TEST(RelationScores, HandChosenThreeByTwoMatchesTripleLoop) {
  const std::size_t T = 3, d = 2;
  const std::vector<double> X{1.0, -2.0, 0.5, 3.0, -1.5, 0.25};
  const std::vector<double> Wc{0.5, -1.0, 2.0, 0.25};
  const std::vector<double> Wp{-0.75, 1.5, 1.0, -0.5};
  const std::vector<double> v{2.0, -3.0};
  TamParams p = tam_from(d, Wc, Wp, v);
  RelationScoreMatrix s = relation_scores(p, Tensor::from({1, T, d}, X), lower_triangle(T));
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < T; ++j) {
      if (j < i)
        EXPECT_EQ(s.at(0, i, j), oracle_score(X, Wc, Wp, v, d, i, j)) << i << "," << j;
      else
        EXPECT_EQ(s.at(0, i, j), nn::kMaskValue);
    }
  // one entry by hand: i=1, j=0: Xc_1 = (0.25+6, -0.5+0.75) = (6.25, 0.25),
  // Xp_0 = (-0.75-2, 1.5+1) = (-2.75, 2.5); relu(M) = (3.5, 2.75);
  // S = 7 - 8.25 = -1.25
  EXPECT_EQ(s.at(0, 1, 0), -1.25);
}

TEST(RelationScores, SeededRandomMatchesTripleLoop) {
  Rng rng(2024);
  for (std::size_t T = 1; T <= 5; ++T)
    for (std::size_t d = 1; d <= 4; ++d)
      for (std::size_t B : {1u, 2u}) {
        std::vector<double> X(B * T * d), Wc(d * d), Wp(d * d), v(d);
        for (auto* vec : {&X, &Wc, &Wp, &v})
          for (auto& x : *vec) x = rng.uniform(-2.0, 2.0);
        TamParams p = tam_from(d, Wc, Wp, v);
        std::vector<std::uint8_t> cand;
        for (std::size_t b = 0; b < B; ++b) {
          auto c = lower_triangle(T);
          cand.insert(cand.end(), c.begin(), c.end());
        }
        RelationScoreMatrix s = relation_scores(p, Tensor::from({B, T, d}, X), cand);
        for (std::size_t b = 0; b < B; ++b) {
          std::vector<double> Xb(X.begin() + static_cast<long>(b * T * d), X.begin() + static_cast<long>((b + 1) * T * d));
          for (std::size_t i = 0; i < T; ++i)
            for (std::size_t j = 0; j < i; ++j)
              EXPECT_NEAR(s.at(b, i, j), oracle_score(Xb, Wc, Wp, v, d, i, j), 1e-12);
        }
      }
}

TEST(RelationScores, ZeroScoreVectorGivesZeros) {
  Fixture f({"a + b = c"});
  f.model.tam->v_score.mutable_data()[0] = 0.0;
  std::fill(f.model.tam->v_score.mutable_data().begin(), f.model.tam->v_score.mutable_data().end(), 0.0);
  ForwardResult fr = toy_forward(f.model, f.batch.source, f.batch.input);
  RelationScoreMatrix s = relation_scores(f.model, tam_encode(f.model, fr.features, f.batch.input.lengths), f.batch.input);
  int unmasked = 0;
  for (std::size_t i = 0; i < s.length; ++i)
    for (std::size_t j = 0; j < s.length; ++j)
      if (s.is_candidate(0, i, j)) {
        EXPECT_EQ(s.at(0, i, j), 0.0);
        ++unmasked;
      } else {
        EXPECT_EQ(s.at(0, i, j), nn::kMaskValue);
      }
  EXPECT_EQ(unmasked, 1 + 2 + 3 + 4);
}

TEST(RelationScores, NegativePreActivationGivesZeros) {
  const std::size_t T = 4, d = 3;
  std::vector<double> X(T * d, 1.0);
  TamParams p = tam_from(d, std::vector<double>(d * d, -1.0), std::vector<double>(d * d, -0.5), {1.0, 2.0, 3.0});
  RelationScoreMatrix s = relation_scores(p, Tensor::from({1, T, d}, X), lower_triangle(T));
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < i; ++j) EXPECT_EQ(s.at(0, i, j), 0.0);
}

TEST(RelationScores, CandidateMaskFollowsSequence) {
  Fixture f({"a ^ { b } + c", "a"});
  auto c = candidate_mask(f.batch.input, *f.vocab);
  const std::size_t T = f.batch.input.length;
  auto cand = [&](std::size_t b, std::size_t i, std::size_t j) { return c[(b * T + i) * T + j] != 0; };
  // framed: 0 SOS, 1 a, 2 ^, 3 {, 4 b, 5 }, 6 +, 7 c
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < T; ++j) {
      const bool node_i = i == 1 || i == 4 || i == 6 || i == 7;
      const bool node_j = j == 1 || j == 4 || j == 6 || j == 7;
      EXPECT_EQ(cand(0, i, j), node_i && node_j && j < i) << i << "," << j;
      if (j >= i) EXPECT_FALSE(cand(0, i, j));
    }
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < T; ++j) EXPECT_FALSE(cand(1, i, j));  // "a": one node, nothing before it
}

// ---------------------------------------------------------------------------
// Losses

double oracle_cross_entropy(const std::vector<double>& logits, std::size_t V, const std::vector<int>& targets,
                            int ignore) {
  double total = 0.0;
  int n = 0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] == ignore) continue;
    double mx = logits[r * V];
    for (std::size_t k = 1; k < V; ++k) mx = std::max(mx, logits[r * V + k]);
    double z = 0.0;
    for (std::size_t k = 0; k < V; ++k) z += std::exp(logits[r * V + k] - mx);
    total += -(logits[r * V + static_cast<std::size_t>(targets[r])] - mx - std::log(z));
    ++n;
  }
  return total / n;
}

TEST(SeqLoss, UniformTenWay) {
  std::vector<int> targets{4, 7, Vocab::kPad};
  Tensor logits = Tensor::zeros({1, 3, 10});
  EXPECT_NEAR(seq_loss(logits, targets).item(), std::log(10.0), 1e-15);
  EXPECT_NEAR(seq_loss(logits, targets).item(), 2.302585, 1e-6);
}

TEST(SeqLoss, AllPadIsEmptyLoss) {
  std::vector<int> targets(3, Vocab::kPad);
  try {
    seq_loss(Tensor::zeros({1, 3, 10}), targets);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyLoss);
  }
}

TEST(SeqLoss, SeededRandomMatchesScalarOracle) {
  Rng rng(77);
  const std::size_t B = 3, T = 5, V = 12;
  std::vector<double> lv(B * T * V);
  for (auto& x : lv) x = rng.uniform(-4.0, 4.0);
  std::vector<int> targets(B * T);
  for (auto& t : targets) t = rng.below(4) == 0 ? Vocab::kPad : static_cast<int>(rng.below(V));
  targets[0] = 5;
  EXPECT_NEAR(seq_loss(Tensor::from({B, T, V}, lv), targets).item(),
              oracle_cross_entropy(lv, V, targets, Vocab::kPad), 1e-12);
}

// Mean over rows with a target of -log softmax over the row's candidates.
double oracle_struct_loss(const RelationScoreMatrix& s, const std::vector<int>& parents) {
  double total = 0.0;
  int n = 0;
  for (std::size_t r = 0; r < parents.size(); ++r) {
    if (parents[r] < 0) continue;
    const std::size_t b = r / s.length, i = r % s.length;
    std::vector<double> row;
    double target = 0.0;
    for (std::size_t j = 0; j < s.length; ++j)
      if (s.is_candidate(b, i, j)) {
        row.push_back(s.at(b, i, j));
        if (static_cast<int>(j) == parents[r]) target = s.at(b, i, j);
      }
    double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    total += -(target - mx - std::log(z));
    ++n;
  }
  return total / n;
}

TEST(StructLoss, FourTokenCaseMatchesScalarOracle) {
  Fixture f({"a + b = c", "a ^ { b }"}, small_check_config(21));
  ForwardResult fr = toy_forward(f.model, f.batch.source, f.batch.input);
  RelationScoreMatrix s = relation_scores(f.model, tam_encode(f.model, fr.features, f.batch.input.lengths), f.batch.input);
  const double got = struct_loss(s, f.batch.parents).item();
  EXPECT_NEAR(got, oracle_struct_loss(s, f.batch.parents), 1e-12);

  // 4 tokens, hand-chosen scores
  RelationScoreMatrix h;
  h.batch = 1;
  h.length = 5;
  h.candidate = lower_triangle(5);
  for (std::size_t i = 0; i < 5; ++i) h.candidate[i * 5 + 0] = 0;  // column 0 is SOS
  std::vector<double> sv(25, nn::kMaskValue);
  sv[2 * 5 + 1] = 0.3;
  sv[3 * 5 + 1] = -1.0, sv[3 * 5 + 2] = 2.0;
  sv[4 * 5 + 1] = 0.5, sv[4 * 5 + 2] = 0.5, sv[4 * 5 + 3] = -0.25;
  h.scores = Tensor::from({1, 5, 5}, sv);
  std::vector<int> parents{kNoParent, kNoParent, 1, 2, 1};
  const double expect = (0.0 + (std::log(std::exp(-1.0) + std::exp(2.0)) - 2.0) +
                         (std::log(2 * std::exp(0.5) + std::exp(-0.25)) - 0.5)) /
                        3.0;
  EXPECT_NEAR(struct_loss(h, parents).item(), expect, 1e-12);
  EXPECT_NEAR(struct_loss(h, parents).item(), oracle_struct_loss(h, parents), 1e-12);
}

TEST(StructLoss, SingleCandidateRowContributesZero) {
  RelationScoreMatrix h;
  h.batch = 1;
  h.length = 3;
  h.candidate = {0, 0, 0, 0, 0, 0, 0, 1, 0};
  h.scores = Tensor::from({1, 3, 3}, {nn::kMaskValue, nn::kMaskValue, nn::kMaskValue, nn::kMaskValue, nn::kMaskValue,
                                      nn::kMaskValue, nn::kMaskValue, 4.2, nn::kMaskValue});
  std::vector<int> parents{kNoParent, kNoParent, 1};
  EXPECT_EQ(struct_loss(h, parents).item(), 0.0);
}

TEST(StructLoss, NoContributingRowIsEmptyLoss) {
  Fixture f({"{ }"});
  ForwardResult fr = toy_forward(f.model, f.batch.source, f.batch.input);
  RelationScoreMatrix s = relation_scores(f.model, tam_encode(f.model, fr.features, f.batch.input.lengths), f.batch.input);
  try {
    struct_loss(s, f.batch.parents);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyLoss);
  }
}

TEST(StructLoss, MaskedTargetAborts) {
  Fixture f({"a + b"});
  ForwardResult fr = toy_forward(f.model, f.batch.source, f.batch.input);
  RelationScoreMatrix s = relation_scores(f.model, tam_encode(f.model, fr.features, f.batch.input.lengths), f.batch.input);
  std::vector<int> parents = f.batch.parents;
  parents[2] = 3;  // "+" pointing forward at "b"
  try {
    struct_loss(s, parents);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TargetOutOfMask);
  }
}

TEST(TotalLoss, SumAndAblation) {
  EXPECT_EQ(total_loss(Tensor::scalar(0.5), Tensor::scalar(0.25)).item(), 0.75);
  EXPECT_EQ(total_loss(Tensor::scalar(0.5), Tensor::scalar(0.25), 0.0).item(), 0.5);
  EXPECT_EQ(total_loss(Tensor::scalar(0.5), Tensor::scalar(0.25), 2.0).item(), 1.0);
}

TEST(TotalLoss, SharedGradientIsSumOfBranches) {
  Fixture f({"a + b = c", "b ^ { c } + a"}, small_check_config(31));
  auto grads_of = [&](int which) {
    for (auto& p : f.model.named_parameters()) {
      Tensor t = p.tensor;
      t.zero_grad();
    }
    Tape tape;
    Tape::Scope scope(tape);
    ForwardResult fr = toy_forward(f.model, f.batch.source, f.batch.input);
    Tensor ls = seq_loss(fr.logits, f.batch.targets);
    RelationScoreMatrix s = relation_scores(f.model, tam_encode(f.model, fr.features, f.batch.input.lengths), f.batch.input);
    Tensor lt = struct_loss(s, f.batch.parents);
    tape.backward(which == 0 ? total_loss(ls, lt) : which == 1 ? nn::scale(ls, 1.0) : nn::scale(lt, 1.0));
    std::vector<double> g;
    for (const auto& p : f.model.named_parameters())
      if (p.name.rfind("decoder.", 0) == 0) g.insert(g.end(), p.tensor.grad().begin(), p.tensor.grad().end());
    return g;
  };
  auto total = grads_of(0), seq = grads_of(1), st = grads_of(2);
  ASSERT_EQ(total.size(), seq.size());
  double worst = 0.0, norm_st = 0.0;
  for (std::size_t i = 0; i < total.size(); ++i) {
    worst = std::max(worst, std::abs(total[i] - (seq[i] + st[i])));
    norm_st += std::abs(st[i]);
  }
  EXPECT_LT(worst, 1e-12);
  EXPECT_GT(norm_st, 0.0);  // the structure branch does reach the decoder
}

// ---------------------------------------------------------------------------
// Predictions

RelationScoreMatrix hand_matrix(std::size_t T, const std::vector<double>& entries) {
  RelationScoreMatrix h;
  h.batch = 1;
  h.length = T;
  h.candidate = lower_triangle(T);
  for (std::size_t i = 0; i < T; ++i) h.candidate[i * T] = 0;
  std::vector<double> sv(T * T, nn::kMaskValue);
  std::size_t k = 0;
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 1; j < i; ++j) sv[i * T + j] = entries.at(k++);
  h.scores = Tensor::from({1, T, T}, sv);
  return h;
}

TEST(PredictParents, UniqueMaximumAndTies) {
  // rows 2..4 over columns 1..i-1
  RelationScoreMatrix h = hand_matrix(5, {0.1, /*row 3*/ -1.0, 3.0, /*row 4*/ 2.0, 2.0, 1.0});
  ParentAnnotation p = predict_parents(h, 0, 4);
  EXPECT_EQ(p.parents, (std::vector<int>{kNoParent, 0, 1, 0}));
}

TEST(PredictParents, MaskSoundnessOnModelOutput) {
  Fixture f({"a ^ { b } + c", "a + b"}, small_check_config(17));
  ForwardResult fr = toy_forward(f.model, f.batch.source, f.batch.input);
  RelationScoreMatrix s = relation_scores(f.model, tam_encode(f.model, fr.features, f.batch.input.lengths), f.batch.input);
  for (std::size_t b = 0; b < 2; ++b) {
    const std::size_t n = f.batch.input.lengths[b] - 1;
    ParentAnnotation p = predict_parents(s, b, n);
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_LT(p.parents[i], static_cast<int>(i));
      if (p.parents[i] >= 0) {
        EXPECT_FALSE(f.vocab->structural(f.batch.input.ids[b * f.batch.input.length + i + 1]));
        EXPECT_FALSE(f.vocab->structural(f.batch.input.ids[b * f.batch.input.length + p.parents[i] + 1]));
      }
    }
    EXPECT_EQ(p.parents[0], kNoParent);
  }
}

TEST(PredictParents, RowStochasticityAndShiftInvariance) {
  Fixture f({"a + b = c ^ { a }"}, small_check_config(13));
  ForwardResult fr = toy_forward(f.model, f.batch.source, f.batch.input);
  RelationScoreMatrix s = relation_scores(f.model, tam_encode(f.model, fr.features, f.batch.input.lengths), f.batch.input);
  const std::size_t T = s.length;
  Tensor probs = nn::softmax(s.scores, -1);
  for (std::size_t i = 0; i < T; ++i) {
    if (!s.row_has_candidates(0, i)) continue;
    double total = 0.0;
    for (std::size_t j = 0; j < T; ++j)
      if (s.is_candidate(0, i, j)) total += probs[i * T + j];
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  RelationScoreMatrix shifted = s;
  std::vector<double> sv(s.scores.data().begin(), s.scores.data().end());
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < T; ++j)
      if (s.is_candidate(0, i, j)) sv[i * T + j] += 3.75 * static_cast<double>(i);
  shifted.scores = Tensor::from(s.scores.shape(), sv);
  EXPECT_EQ(predict_parents(s, 0, T - 1).parents, predict_parents(shifted, 0, T - 1).parents);
  Tensor lp = nn::log_softmax(s.scores, -1), lps = nn::log_softmax(shifted.scores, -1);
  for (std::size_t k = 0; k < T * T; ++k)
    if (s.candidate[k]) EXPECT_NEAR(lp[k], lps[k], 1e-10);
  auto c1 = row_confidences(s, 0), c2 = row_confidences(shifted, 0);
  ASSERT_EQ(c1.size(), c2.size());
  for (std::size_t k = 0; k < c1.size(); ++k) EXPECT_NEAR(c1[k], c2[k], 1e-10);
}

// ---------------------------------------------------------------------------
// Gradients

TEST(ModelGradients, ToyForwardAtLengthFour) {
  ModelConfig cfg = small_check_config(41);
  cfg.tam_enabled = false;
  Fixture f({"a + b"}, cfg);
  ASSERT_EQ(f.batch.input.length, 4u);
  auto report = nn::gradcheck([&] { return seq_loss(toy_forward(f.model, f.batch.source, f.batch.input).logits, f.batch.targets); },
                              f.model.named_parameters(), 1e-5, 1e-4);
  EXPECT_TRUE(report.pass) << describe(report);
}

TEST(ModelGradients, TamEncodeAndScorer) {
  Fixture f({"a + b = c"}, small_check_config(43));
  const std::size_t T = 6, d = 8;
  std::vector<std::size_t> lengths{T};
  // Draw inputs until every W_c column is identifiable (decided from signs).
  Rng rng(8);
  std::vector<double> xv(T * d);
  for (int attempt = 0;; ++attempt) {
    ASSERT_LT(attempt, 100);
    for (auto& v : xv) v = rng.normal();
    Tensor probe = Tensor::from({1, T, d}, xv);
    Tensor enc = tam_encode(f.model, probe, lengths);
    if (unidentifiable_child_units(*f.model.tam, enc, relation_scores(f.model, enc, f.batch.input), f.batch.parents)
            .empty())
      break;
  }
  Tensor x = Tensor::parameter({1, T, d}, xv);
  std::vector<NamedTensor> params{{"x", x}};
  for (const auto& p : f.model.named_parameters())
    if (p.name.rfind("tam.", 0) == 0) params.push_back(p);
  auto report = nn::gradcheck(
      [&] {
        RelationScoreMatrix s = relation_scores(f.model, tam_encode(f.model, x, lengths), f.batch.input);
        return struct_loss(s, f.batch.parents);
      },
      params, 1e-5, 1e-4);
  EXPECT_TRUE(report.pass) << describe(report);
}

TEST(ModelGradients, RowUniformUnitHasZeroChildGradient) {
  // One unit, all pre-activations positive: the child term shifts each row
  // by a constant and the loss cannot see W_c at all.
  const std::size_t T = 5, d = 1;
  TamParams p = tam_from(d, {0.7}, {0.4}, {1.3});
  Tensor x = Tensor::from({1, T, d}, {0.0, 1.0, 2.0, 0.5, 1.5});
  auto cand = lower_triangle(T);
  for (std::size_t i = 0; i < T; ++i) cand[i * T] = 0;
  std::vector<int> parents{kNoParent, kNoParent, 1, 1, 3};
  RelationScoreMatrix probe = relation_scores(p, x, cand);
  EXPECT_EQ(unidentifiable_child_units(p, x, probe, parents), (std::vector<std::size_t>{0}));
  Tape tape;
  {
    Tape::Scope scope(tape);
    tape.backward(struct_loss(relation_scores(p, x, cand), parents));
  }
  EXPECT_LT(std::abs(p.w_child.grad()[0]), 1e-15);
  EXPECT_GT(std::abs(p.w_parent.grad()[0]), 1e-3);
}

TEST(ModelGradients, ScorerWithRandomWeights) {
  Rng rng(12);
  const std::size_t T = 5, d = 4;
  auto rand_vec = [&](std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
  };
  TamParams p = tam_from(d, rand_vec(d * d), rand_vec(d * d), rand_vec(d));
  Tensor x = Tensor::parameter({1, T, d}, rand_vec(T * d));
  std::vector<int> parents{kNoParent, kNoParent, 1, 1, 3};
  auto cand = lower_triangle(T);
  for (std::size_t i = 0; i < T; ++i) cand[i * T] = 0;
  auto report = nn::gradcheck([&] { return struct_loss(relation_scores(p, x, cand), parents); },
                              {{"x", x}, {"w_child", p.w_child}, {"w_parent", p.w_parent}, {"v_score", p.v_score}},
                              1e-5, 1e-4);
  EXPECT_TRUE(report.pass) << describe(report);
}

TEST(ModelGradients, FullModelSmallConfig) {
  std::uint64_t used = 0;
  auto c = full_model_case(7, &used);
  std::size_t count = 0;
  for (const auto& p : c.params) count += p.tensor.numel();
  EXPECT_GT(count, 1000u);
  auto report = nn::gradcheck(c.objective, c.params, kGradcheckEps, kModelTolerance);
  EXPECT_TRUE(report.pass) << describe(report);
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST(ModelCheckpoint, RoundTripReproducesForward) {
  Fixture f({"a + b = c"}, small_check_config(3));
  std::string bytes = nn::serialize_checkpoint(f.model.to_checkpoint({{"epoch", 2}}));
  EXPECT_EQ(bytes, nn::serialize_checkpoint(f.model.to_checkpoint({{"epoch", 2}})));
  ToyModel back = ToyModel::from_checkpoint(nn::deserialize_checkpoint(bytes));
  EXPECT_EQ(*back.vocab, *f.vocab);
  EXPECT_EQ(back.parameter_count(), f.model.parameter_count());
  ForwardResult a = toy_forward(f.model, f.batch.source, f.batch.input);
  ForwardResult b = toy_forward(back, f.batch.source, f.batch.input);
  EXPECT_TRUE(bit_equal(a.logits.data(), b.logits.data()));
}

TEST(ModelInit, SameSeedSameWeightsAndAblationSharesWeights) {
  auto vocab = small_check_vocab();
  ModelConfig with = small_check_config(11), without = with;
  without.tam_enabled = false;
  ToyModel a = ToyModel::create(with, vocab), b = ToyModel::create(without, vocab);
  ASSERT_LT(b.named_parameters().size(), a.named_parameters().size());
  for (std::size_t i = 0; i < b.named_parameters().size(); ++i) {
    EXPECT_EQ(a.named_parameters()[i].name, b.named_parameters()[i].name);
    EXPECT_TRUE(bit_equal(a.named_parameters()[i].tensor.data(), b.named_parameters()[i].tensor.data()));
  }
}

}  // namespace
}  // namespace tamer
