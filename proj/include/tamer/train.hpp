#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "json.hpp"
#include "tamer/corpus.hpp"
#include "tamer/evalkit.hpp"
#include "tamer/model.hpp"
#include "tamer/nn/checkpoint.hpp"
#include "tamer/nn/optim.hpp"

namespace tamer {

/// Keeps large tensor buffers on the heap instead of fresh mmaps, whose page
/// faults otherwise dominate system time during training. Process-wide.
inline void keep_large_allocations_on_heap() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

struct TrainConfig {
  ModelConfig model = ModelConfig::toy(0);
  int epochs = 30;
  std::size_t batch_size = 32;
  double lr = 2e-3;
  double lambda_struct = 1.0;
  std::uint64_t seed = 7;

  void validate() const {
    if (epochs < 0) fail(ErrorKind::InvalidConfig, "epochs must be >= 0");
    if (batch_size < 1) fail(ErrorKind::InvalidConfig, "batch_size must be >= 1");
    if (!(lr > 0.0)) fail(ErrorKind::InvalidConfig, "lr must be > 0");
    if (lambda_struct < 0.0) fail(ErrorKind::InvalidConfig, "lambda_struct must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"model", c.model},           {"epochs", c.epochs}, {"batch_size", c.batch_size},
                     {"lr", c.lr},                 {"lambda_struct", c.lambda_struct},
                     {"seed", c.seed}};
}

/// Teacher-forced measurements. Parent accuracy is nullopt when the model has
/// no tree-aware module or no position has a gold parent.
struct EpochStats {
  int epoch = 0;
  double l_seq = 0.0;
  double l_struct = 0.0;  // 0 without the tree-aware module
  double token_acc = 0.0;
  std::optional<double> parent_acc;
  std::optional<double> heldout_token_acc;
  std::optional<double> heldout_parent_acc;
  double seconds = 0.0;
};

struct TrainResult {
  ToyModel model;
  std::vector<EpochStats> history;
};

/// Vocabulary over every token of the given corpora.
inline VocabPtr corpus_vocab(std::span<const CorpusRecord> a, std::span<const CorpusRecord> b = {}) {
  std::vector<std::vector<std::string>> seqs;
  for (const auto& r : a) seqs.push_back(r.tokens);
  for (const auto& r : b) seqs.push_back(r.tokens);
  return Vocab::from_corpus(seqs);
}

namespace detail {

struct Encoded {
  std::vector<std::vector<int>> ids;
  std::vector<ParentAnnotation> annotations;
};

inline Encoded encode_corpus(std::span<const CorpusRecord> records, const VocabPtr& vocab) {
  Encoded e;
  for (const auto& r : records) {
    e.ids.push_back(TokenSeq::from_tokens(r.tokens, vocab).ids());
    e.annotations.push_back(treeify(r.tokens));
  }
  return e;
}

struct Counts {
  double seq_loss = 0.0, struct_loss = 0.0;
  std::size_t seq_batches = 0, struct_batches = 0;
  std::size_t tokens = 0, tokens_correct = 0;
  ParentTally parents;

  void add_tokens(const Tensor& logits, std::span<const int> targets) {
    const std::size_t V = logits.dim(logits.rank() - 1);
    for (std::size_t r = 0; r < targets.size(); ++r) {
      if (targets[r] == Vocab::kPad) continue;
      const auto row = logits.data().subspan(r * V, V);
      const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      ++tokens;
      tokens_correct += best == targets[r];
    }
  }

  void add_parents(const RelationScoreMatrix& s, std::span<const std::size_t> rows, const Encoded& data) {
    for (std::size_t b = 0; b < rows.size(); ++b) {
      const auto& gold = data.annotations[rows[b]];
      if (!has_struct_targets(gold.parents)) continue;
      parents.add(predict_parents(s, b, gold.size()).parents, gold.parents);
    }
  }

  std::optional<double> parent_fraction() const {
    if (parents.total == 0) return std::nullopt;
    return parents.fraction();
  }
};

inline Batch gather(const Encoded& data, std::span<const std::size_t> rows, std::size_t V, double sigma, Rng& rng) {
  std::vector<std::vector<int>> seqs;
  std::vector<ParentAnnotation> anns;
  for (auto r : rows) {
    seqs.push_back(data.ids[r]);
    anns.push_back(data.annotations[r]);
  }
  return make_batch(seqs, anns, V, sigma, rng);
}

inline constexpr std::size_t kBucketBatches = 16;

/// One epoch's batches: shuffle, sort each pool of kBucketBatches batches by
/// length so padding stays small, cut, then shuffle the batch order.
inline std::vector<std::vector<std::size_t>> plan_batches(const Encoded& data, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(data.ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  const std::size_t pool = batch_size * kBucketBatches;
  auto at = [&](std::size_t i) { return order.begin() + static_cast<std::ptrdiff_t>(i); };
  for (std::size_t p = 0; p < order.size(); p += pool) {
    const std::size_t end = std::min(order.size(), p + pool);
    std::stable_sort(at(p), at(end), [&](std::size_t x, std::size_t y) { return data.ids[x].size() < data.ids[y].size(); });
    for (std::size_t b = p; b < end; b += batch_size) batches.emplace_back(at(b), at(std::min(end, b + batch_size)));
  }
  rng.shuffle(batches);
  return batches;
}

}  // namespace detail

/// Teacher-forced token and parent accuracy on `data`, in length-sorted
/// batches, with a fixed noise stream so repeated calls agree.
inline std::pair<double, std::optional<double>> evaluate_teacher_forced(const ToyModel& m, const detail::Encoded& data,
                                                                        std::size_t batch_size, std::uint64_t seed) {
  Rng rng(seed, "train.heldout.noise");
  detail::Counts c;
  const std::size_t V = static_cast<std::size_t>(m.config.vocab_size);
  std::vector<std::size_t> order(data.ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return data.ids[x].size() < data.ids[y].size(); });
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::span<const std::size_t> rows(order.data() + start, std::min(batch_size, order.size() - start));
    Batch batch = detail::gather(data, rows, V, m.config.noise_sigma, rng);
    ForwardResult fr = toy_forward(m, batch.source, batch.input);
    c.add_tokens(fr.logits, batch.targets);
    if (m.tam) c.add_parents(relation_scores(m, tam_encode(m, fr.features, batch.input.lengths), batch.input), rows, data);
  }
  return {c.tokens ? static_cast<double>(c.tokens_correct) / static_cast<double>(c.tokens) : 0.0, c.parent_fraction()};
}

using EpochCallback = std::function<void(const EpochStats&)>;

/// Adam on L_seq + lambda_struct * L_struct. Randomness: initial weights from
/// the model seed, length-bucketed batches from the "train.shuffle" stream, source noise
/// from "train.noise.epoch<N>". With lambda_struct == 0 the structure head
/// stays out of the graph, so the decoder follows exactly the trajectory of a
/// model built without it.
inline TrainResult train(const TrainConfig& cfg, std::span<const CorpusRecord> train_set,
                         std::span<const CorpusRecord> heldout, VocabPtr vocab, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty()) fail(ErrorKind::EmptyCorpus, "training corpus is empty");
  ModelConfig mc = cfg.model;
  mc.seed = cfg.seed;
  TrainResult result{ToyModel::create(mc, vocab), {}};
  ToyModel& m = result.model;
  const std::size_t V = vocab->size();
  const detail::Encoded data = detail::encode_corpus(train_set, vocab);
  const detail::Encoded held = detail::encode_corpus(heldout, vocab);
  for (const auto& ids : data.ids)
    if (ids.size() + 1 > static_cast<std::size_t>(m.config.max_len))
      fail(ErrorKind::InvalidConfig, "a training sequence exceeds max_len " + std::to_string(m.config.max_len));

  std::vector<Tensor> params = m.parameters();
  nn::AdamConfig ac;
  ac.lr = cfg.lr;
  nn::Adam adam(ac);
  Rng shuffle_rng(cfg.seed, "train.shuffle");

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto batches = detail::plan_batches(data, cfg.batch_size, shuffle_rng);
    Rng noise(cfg.seed, "train.noise.epoch" + std::to_string(epoch));
    detail::Counts c;
    for (const auto& rows : batches) {
      Batch batch = detail::gather(data, rows, V, m.config.noise_sigma, noise);
      const bool structured = m.tam && has_struct_targets(batch.parents);
      ForwardResult fr;
      std::optional<RelationScoreMatrix> scores;
      {
        nn::Tape tape;
        nn::Tape::Scope scope(tape);
        fr = toy_forward(m, batch.source, batch.input);
        Tensor loss = seq_loss(fr.logits, batch.targets);
        c.seq_loss += loss.item();
        ++c.seq_batches;
        if (structured && cfg.lambda_struct != 0.0) {
          scores = relation_scores(m, tam_encode(m, fr.features, batch.input.lengths), batch.input);
          Tensor sl = struct_loss(*scores, batch.parents);
          c.struct_loss += sl.item();
          ++c.struct_batches;
          loss = total_loss(loss, sl, cfg.lambda_struct);
        }
        tape.backward(loss);
      }
      adam.step(params);
      nn::zero_grad(params);
      if (structured && !scores) {
        // Off the tape: measured, never trained.
        scores = relation_scores(m, tam_encode(m, fr.features, batch.input.lengths), batch.input);
        c.struct_loss += struct_loss(*scores, batch.parents).item();
        ++c.struct_batches;
      }
      c.add_tokens(fr.logits, batch.targets);
      if (scores) c.add_parents(*scores, rows, data);
    }

    EpochStats st;
    st.epoch = epoch;
    st.l_seq = c.seq_loss / static_cast<double>(c.seq_batches);
    st.l_struct = c.struct_batches ? c.struct_loss / static_cast<double>(c.struct_batches) : 0.0;
    st.token_acc = static_cast<double>(c.tokens_correct) / static_cast<double>(c.tokens);
    st.parent_acc = c.parent_fraction();
    if (!held.ids.empty()) {
      auto [tok, par] = evaluate_teacher_forced(m, held, cfg.batch_size, cfg.seed);
      st.heldout_token_acc = tok;
      st.heldout_parent_acc = par;
    }
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  return result;
}

/// Checkpoint of a trained model; the metadata records the training config.
inline nn::Checkpoint training_checkpoint(const ToyModel& m, const TrainConfig& cfg) {
  return m.to_checkpoint({{"train", cfg}});
}

inline constexpr const char* kTrainLogHeader =
    "epoch,l_seq,l_struct,token_acc,parent_acc,heldout_token_acc,heldout_parent_acc";

/// One line per epoch; missing measurements are empty fields. Wall time is
/// left out so logs of identical runs are byte-identical.
inline std::string train_log_line(const EpochStats& s) {
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  auto opt = [&](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
  return std::to_string(s.epoch) + "," + num(s.l_seq) + "," + num(s.l_struct) + "," + num(s.token_acc) + "," +
         opt(s.parent_acc) + "," + opt(s.heldout_token_acc) + "," + opt(s.heldout_parent_acc);
}

inline std::string train_log_csv(std::span<const EpochStats> history) {
  std::string out = std::string(kTrainLogHeader) + "\n";
  for (const auto& s : history) out += train_log_line(s) + "\n";
  return out;
}

}  // namespace tamer
