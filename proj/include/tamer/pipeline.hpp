#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tamer/corpus.hpp"
#include "tamer/decoding.hpp"
#include "tamer/evalkit.hpp"
#include "tamer/train.hpp"

namespace tamer {

/// Noisy observation of one expression. The noise stream is keyed by the
/// record id, so a record reads the same wherever it sits in a corpus.
inline SourceInput observe(const ToyModel& m, std::span<const std::string> tokens, const std::string& id,
                           std::uint64_t seed) {
  std::vector<std::vector<int>> one{TokenSeq::from_tokens(tokens, m.vocab).ids()};
  Rng rng(seed, "decode.source." + id);
  return make_source(one, m.vocab->size(), m.config.noise_sigma, rng);
}

/// Beam output for one record, kept so several rerank weights can share it.
struct BeamRun {
  std::string id;
  EncodedSource source;
  std::vector<Hypothesis> candidates;
};

struct Prediction {
  std::string id;
  std::vector<std::string> tokens;
  bool finished = true;
  double s_seq = 0.0;
  double s_struct = 0.0;
  double composite = 0.0;
  std::size_t rank = 0;  // index of the selection in the beam's S_seq order
};

inline std::vector<BeamRun> run_beams(const ToyModel& m, std::span<const CorpusRecord> records, const BeamConfig& cfg,
                                      std::uint64_t seed) {
  std::vector<BeamRun> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    BeamRun run{r.id, encode_single(m, observe(m, r.tokens, r.id, seed)), {}};
    run.candidates = beam_search(m, run.source, cfg);
    out.push_back(std::move(run));
  }
  return out;
}

inline std::vector<Prediction> select(const ToyModel& m, std::span<const BeamRun> runs, double lambda_rerank,
                                      bool length_normalize = true) {
  std::vector<Prediction> out;
  out.reserve(runs.size());
  for (const auto& run : runs) {
    const RerankResult rr = rerank(m, run.source, run.candidates, lambda_rerank, length_normalize);
    const Hypothesis& h = run.candidates[rr.selected];
    const RerankEntry& e = rr.entries[rr.selected];
    Prediction p{run.id, {}, h.finished, e.s_seq, e.s_struct, e.composite, rr.selected};
    for (int id : h.tokens) p.tokens.push_back(m.vocab->token(id));
    out.push_back(std::move(p));
  }
  return out;
}

inline EvalReport evaluate_predictions(std::span<const Prediction> preds, std::span<const CorpusRecord> refs) {
  std::vector<std::vector<std::string>> p, r;
  for (const auto& x : preds) p.push_back(x.tokens);
  for (const auto& x : refs) r.push_back(x.tokens);
  return evaluate(p, r);
}

/// Teacher-forced parent accuracy of the structure head on the references.
inline std::optional<double> reference_parent_accuracy(const ToyModel& m, std::span<const CorpusRecord> refs,
                                                       std::uint64_t seed) {
  if (!m.tam || refs.empty()) return std::nullopt;
  return evaluate_teacher_forced(m, detail::encode_corpus(refs, m.vocab), 32, seed).second;
}

inline nlohmann::json to_json(const Prediction& p) {
  return {{"id", p.id},       {"tokens", p.tokens},     {"finished", p.finished}, {"s_seq", p.s_seq},
          {"s_struct", p.s_struct}, {"composite", p.composite}, {"rank", p.rank}};
}

inline std::string predictions_jsonl(std::span<const Prediction> preds) {
  std::string out;
  for (const auto& p : preds) out += to_json(p).dump() + "\n";
  return out;
}

}  // namespace tamer
