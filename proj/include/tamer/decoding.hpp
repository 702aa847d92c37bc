#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tamer/error.hpp"
#include "tamer/model.hpp"

namespace tamer {

/// A decoded prefix. `tokens` never holds SOS or EOS; a finished hypothesis
/// has emitted EOS after them and is frozen.
struct Hypothesis {
  std::vector<int> tokens;
  double log_prob = 0.0;
  bool finished = false;

  /// Scored steps: the tokens plus the EOS step when finished.
  std::size_t steps() const { return tokens.size() + (finished ? 1 : 0); }
};

struct BeamConfig {
  std::size_t beam_width = 10;
  std::size_t max_len = 64;     // decoding steps, the EOS step included
  bool length_normalize = true;  // S_seq = log p / steps
  bool allow_unfinished = false;
};

inline double seq_score(const Hypothesis& h, bool length_normalize) {
  if (!length_normalize || h.steps() == 0) return h.log_prob;
  return h.log_prob / static_cast<double>(h.steps());
}

/// Source memory for one expression, computed once per decode.
struct EncodedSource {
  Tensor memory;  // (1, Ts, d)
  std::size_t length = 0;
};

inline EncodedSource encode_single(const ToyModel& m, const SourceInput& src) {
  if (src.features.rank() != 3 || src.features.dim(0) != 1)
    nn::shape_mismatch("encode_single", src.features.shape(), Shape{1, 0, static_cast<std::size_t>(m.config.vocab_size)});
  return {encode_source(m, src), src.lengths.at(0)};
}

namespace detail {

inline Tensor repeat_batch(const Tensor& x, std::size_t n) {
  if (n == 1) return x;
  return nn::concat(std::vector<Tensor>(n, x), 0);
}

/// Next-token log-probabilities (n, V) for n prefixes of equal length.
inline Tensor next_log_probs(const ToyModel& m, const EncodedSource& src, const std::vector<Hypothesis>& alive) {
  const std::size_t n = alive.size(), T = alive.front().tokens.size() + 1;
  const std::size_t d = static_cast<std::size_t>(m.config.d_model);
  DecoderInput in;
  in.batch = n;
  in.length = T;
  in.ids.reserve(n * T);
  for (const auto& h : alive) {
    in.ids.push_back(Vocab::kSos);
    in.ids.insert(in.ids.end(), h.tokens.begin(), h.tokens.end());
    in.lengths.push_back(T);
  }
  std::vector<std::size_t> mem_lengths(n, src.length);
  Tensor x = decode_features(m, repeat_batch(src.memory, n), mem_lengths, in);
  std::vector<double> last(n * d);
  for (std::size_t b = 0; b < n; ++b)
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>((b * T + T - 1) * d), d, last.begin() + static_cast<std::ptrdiff_t>(b * d));
  return nn::log_softmax(m.output(Tensor::from({n, d}, std::move(last))), -1);
}

}  // namespace detail

/// Teacher-forced log p(y_1..y_n, EOS) of a complete sequence.
inline Hypothesis score_sequence(const ToyModel& m, const EncodedSource& src, std::span<const int> tokens) {
  std::vector<std::vector<int>> one{std::vector<int>(tokens.begin(), tokens.end())};
  DecoderInput in = make_decoder_input(one);
  std::vector<std::size_t> mem_lengths{src.length};
  Tensor lp = nn::log_softmax(m.output(decode_features(m, src.memory, mem_lengths, in)), -1);
  const std::size_t V = static_cast<std::size_t>(m.config.vocab_size);
  Hypothesis h{one.front(), 0.0, true};
  for (std::size_t t = 0; t <= tokens.size(); ++t) {
    const int next = t < tokens.size() ? tokens[t] : Vocab::kEos;
    h.log_prob += lp[t * V + static_cast<std::size_t>(next)];
  }
  return h;
}

/// Beam search. Each step pools every expansion of every live hypothesis,
/// keeps the best (beam_width - finished) by cumulative log-probability and
/// retires those ending in EOS. SOS and PAD are never emitted. Returns the
/// finished hypotheses sorted by S_seq, best first (stable on ties).
inline std::vector<Hypothesis> beam_search(const ToyModel& m, const EncodedSource& src, const BeamConfig& cfg) {
  if (cfg.beam_width < 1) fail(ErrorKind::InvalidConfig, "beam_width must be >= 1");
  const int V = m.config.vocab_size;
  std::vector<Hypothesis> alive{Hypothesis{}}, finished;

  struct Expansion {
    std::size_t parent;
    int token;
    double log_prob;
  };

  for (std::size_t step = 0; step < cfg.max_len && !alive.empty() && finished.size() < cfg.beam_width; ++step) {
    const Tensor lp = detail::next_log_probs(m, src, alive);
    std::vector<Expansion> pool;
    for (std::size_t h = 0; h < alive.size(); ++h)
      for (int v = Vocab::kEos; v < V; ++v) {
        if (v == Vocab::kPad) continue;
        pool.push_back({h, v, alive[h].log_prob + lp[h * static_cast<std::size_t>(V) + static_cast<std::size_t>(v)]});
      }
    std::stable_sort(pool.begin(), pool.end(), [](const Expansion& a, const Expansion& b) { return a.log_prob > b.log_prob; });
    const std::size_t keep = std::min(pool.size(), cfg.beam_width - finished.size());
    std::vector<Hypothesis> next;
    for (std::size_t k = 0; k < keep; ++k) {
      const Expansion& e = pool[k];
      Hypothesis h{alive[e.parent].tokens, e.log_prob, false};
      if (e.token == Vocab::kEos) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        h.tokens.push_back(e.token);
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);
  }

  std::vector<Hypothesis> out = std::move(finished);
  if (out.empty()) {
    if (!cfg.allow_unfinished)
      fail(ErrorKind::NoFinishedHypothesis, "no hypothesis emitted EOS within " + std::to_string(cfg.max_len) + " steps");
    out = std::move(alive);
  }
  std::stable_sort(out.begin(), out.end(), [&](const Hypothesis& a, const Hypothesis& b) {
    return seq_score(a, cfg.length_normalize) > seq_score(b, cfg.length_normalize);
  });
  return out;
}

/// Tree-structure confidence of complete token sequences: teacher-forced
/// forward, TAM, then the mean over contributing rows of the row's best
/// parent log-probability. Rows without an admissible parent do not
/// contribute; with none at all the score is 0. Sequences are scored in one
/// padded batch.
inline std::vector<double> struct_scores(const ToyModel& m, const EncodedSource& src,
                                         std::span<const std::vector<int>> seqs) {
  if (!m.tam) fail(ErrorKind::InvalidConfig, "struct scoring needs the tree-aware module");
  std::vector<double> out;
  if (seqs.empty()) return out;
  const std::size_t n = seqs.size();
  DecoderInput in = make_decoder_input(seqs);
  std::vector<std::size_t> mem_lengths(n, src.length);
  Tensor x = decode_features(m, detail::repeat_batch(src.memory, n), mem_lengths, in);
  RelationScoreMatrix s = relation_scores(m, tam_encode(m, x, in.lengths), in);
  for (std::size_t b = 0; b < n; ++b) {
    const auto rows = row_confidences(s, b);
    double total = 0.0;
    for (double r : rows) total += r;
    out.push_back(rows.empty() ? 0.0 : total / static_cast<double>(rows.size()));
  }
  return out;
}

inline double struct_score(const ToyModel& m, const EncodedSource& src, std::span<const int> tokens) {
  std::vector<std::vector<int>> one{std::vector<int>(tokens.begin(), tokens.end())};
  return struct_scores(m, src, one).front();
}

struct RerankEntry {
  double s_seq = 0.0;
  double s_struct = 0.0;
  double composite = 0.0;
};

struct RerankResult {
  std::vector<RerankEntry> entries;
  std::size_t selected = 0;
};

/// composite = S_seq + lambda * S_struct; the highest composite wins, the
/// lower index on ties. With lambda == 0 the structure head is not run.
inline RerankResult rerank(const ToyModel& m, const EncodedSource& src, std::span<const Hypothesis> candidates,
                           double lambda_rerank = 1.0, bool length_normalize = true) {
  if (candidates.empty()) fail(ErrorKind::EmptyCandidates, "rerank needs at least one candidate");
  std::vector<double> structure(candidates.size(), 0.0);
  if (lambda_rerank != 0.0) {
    std::vector<std::vector<int>> seqs;
    for (const auto& c : candidates) seqs.push_back(c.tokens);
    structure = struct_scores(m, src, seqs);
  }
  RerankResult r;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    RerankEntry e;
    e.s_seq = seq_score(candidates[i], length_normalize);
    e.s_struct = structure[i];
    e.composite = e.s_seq + lambda_rerank * e.s_struct;
    r.entries.push_back(e);
    if (e.composite > r.entries[r.selected].composite) r.selected = i;
  }
  return r;
}

struct DecodeResult {
  std::vector<Hypothesis> candidates;
  RerankResult ranking;
  const Hypothesis& best() const { return candidates[ranking.selected]; }
};

inline DecodeResult decode(const ToyModel& m, const SourceInput& src, const BeamConfig& cfg, double lambda_rerank) {
  EncodedSource enc = encode_single(m, src);
  DecodeResult d;
  d.candidates = beam_search(m, enc, cfg);
  d.ranking = rerank(m, enc, d.candidates, lambda_rerank, cfg.length_normalize);
  return d;
}

}  // namespace tamer
