#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tamer/train.hpp"

namespace tamer {
namespace {

TrainConfig small_config(int epochs) {
  TrainConfig c;
  c.model = ModelConfig::toy(0);
  c.model.d_model = 16;
  c.model.heads = 2;
  c.model.d_ff = 32;
  c.epochs = epochs;
  c.batch_size = 16;
  return c;
}

std::vector<CorpusRecord> corpus(std::size_t n, std::uint64_t seed = 7) {
  GrammarConfig g;
  g.seed = seed;
  return generate(g, n);
}

std::vector<double> column(const std::vector<EpochStats>& h, double EpochStats::*field) {
  std::vector<double> out;
  for (const auto& s : h) out.push_back(s.*field);
  return out;
}

TEST(PlanBatches, PartitionsTheCorpusIntoLengthSortedBatches) {
  auto records = corpus(300);
  auto vocab = corpus_vocab(records);
  auto data = detail::encode_corpus(records, vocab);
  Rng rng(1);
  auto batches = detail::plan_batches(data, 16, rng);
  std::multiset<std::size_t> seen;
  for (const auto& b : batches) {
    EXPECT_GE(b.size(), 1u);
    EXPECT_LE(b.size(), 16u);
    for (std::size_t k = 0; k + 1 < b.size(); ++k) EXPECT_LE(data.ids[b[k]].size(), data.ids[b[k + 1]].size());
    seen.insert(b.begin(), b.end());
  }
  ASSERT_EQ(seen.size(), 300u);
  for (std::size_t i = 0; i < 300; ++i) EXPECT_EQ(seen.count(i), 1u);
}

TEST(Train, SmokeRunWritesALoadableCheckpoint) {
  auto records = corpus(64);
  auto vocab = corpus_vocab(records);
  const auto cfg = small_config(1);
  auto r = train(cfg, records, {}, vocab);
  ASSERT_EQ(r.history.size(), 1u);
  EXPECT_TRUE(r.history[0].parent_acc.has_value());
  EXPECT_FALSE(r.history[0].heldout_parent_acc.has_value());

  const auto path = (std::filesystem::temp_directory_path() / "tamer_smoke.ckpt").string();
  nn::save_checkpoint(path, training_checkpoint(r.model, cfg));
  ToyModel loaded = ToyModel::from_checkpoint(nn::load_checkpoint(path));
  ASSERT_EQ(loaded.named_parameters().size(), r.model.named_parameters().size());
  for (std::size_t k = 0; k < loaded.named_parameters().size(); ++k) {
    const auto a = loaded.named_parameters()[k].tensor.data(), b = r.model.named_parameters()[k].tensor.data();
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end())) << loaded.named_parameters()[k].name;
  }
  EXPECT_EQ(loaded.vocab->symbols(), vocab->symbols());
  std::filesystem::remove(path);
}

TEST(Train, DeterministicBytes) {
  auto records = corpus(96);
  auto held = corpus(32, 8);
  auto vocab = corpus_vocab(records, held);
  const auto cfg = small_config(2);
  auto a = train(cfg, records, held, vocab);
  auto b = train(cfg, records, held, vocab);
  EXPECT_EQ(train_log_csv(a.history), train_log_csv(b.history));
  EXPECT_EQ(nn::serialize_checkpoint(training_checkpoint(a.model, cfg)),
            nn::serialize_checkpoint(training_checkpoint(b.model, cfg)));
}

TEST(Train, ZeroStructWeightMatchesTheAblatedModel) {
  auto records = corpus(96);
  auto vocab = corpus_vocab(records);
  auto cfg = small_config(3);
  cfg.lambda_struct = 0.0;
  auto with_head = train(cfg, records, {}, vocab);
  cfg.model.tam_enabled = false;
  auto ablated = train(cfg, records, {}, vocab);

  EXPECT_EQ(column(with_head.history, &EpochStats::l_seq), column(ablated.history, &EpochStats::l_seq));
  EXPECT_EQ(column(with_head.history, &EpochStats::token_acc), column(ablated.history, &EpochStats::token_acc));
  // The head is measured but never trained.
  EXPECT_GT(with_head.history[0].l_struct, 0.0);
  EXPECT_EQ(ablated.history[0].l_struct, 0.0);
  EXPECT_FALSE(ablated.history[0].parent_acc.has_value());
  for (const auto& p : ablated.model.named_parameters()) {
    const Tensor* q = nullptr;
    for (const auto& w : with_head.model.named_parameters())
      if (w.name == p.name) q = &w.tensor;
    ASSERT_NE(q, nullptr) << p.name;
    EXPECT_TRUE(std::equal(p.tensor.data().begin(), p.tensor.data().end(), q->data().begin(), q->data().end()))
        << p.name;
  }
}

TEST(Train, StructWeightChangesTheTrajectory) {
  auto records = corpus(64);
  auto vocab = corpus_vocab(records);
  auto cfg = small_config(1);
  auto joint = train(cfg, records, {}, vocab);
  cfg.lambda_struct = 0.0;
  auto seq_only = train(cfg, records, {}, vocab);
  EXPECT_NE(joint.history[0].l_seq, seq_only.history[0].l_seq);
}

TEST(Train, LossDescendsOnTheStandardCorpus) {
  auto records = corpus(256);
  auto vocab = corpus_vocab(records);
  auto cfg = small_config(10);
  cfg.seed = 7;
  auto r = train(cfg, records, {}, vocab);
  ASSERT_EQ(r.history.size(), 10u);
  const double first = r.history.front().l_seq + r.history.front().l_struct;
  const double last = r.history.back().l_seq + r.history.back().l_struct;
  EXPECT_LT(last, first);
  EXPECT_LT(r.history.back().l_seq, r.history.front().l_seq);
}

TEST(Train, Errors) {
  auto records = corpus(8);
  auto vocab = corpus_vocab(records);
  try {
    train(small_config(1), {}, {}, vocab);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyCorpus);
  }
  auto cfg = small_config(1);
  cfg.batch_size = 0;
  try {
    train(cfg, records, {}, vocab);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidConfig);
  }
  cfg = small_config(1);
  cfg.model.max_len = 2;
  try {
    train(cfg, records, {}, vocab);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidConfig);
  }
}

TEST(TrainLog, Format) {
  EpochStats s;
  s.epoch = 3;
  s.l_seq = 0.5;
  s.l_struct = 0.25;
  s.token_acc = 0.75;
  s.parent_acc = 1.0;
  std::vector<EpochStats> h{s};
  EXPECT_EQ(train_log_csv(h),
            "epoch,l_seq,l_struct,token_acc,parent_acc,heldout_token_acc,heldout_parent_acc\n"
            "3,0.5,0.25,0.75,1,,\n");
}

}  // namespace
}  // namespace tamer
