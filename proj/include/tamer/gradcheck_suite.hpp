#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tamer/model.hpp"
#include "tamer/nn/primitive_checks.hpp"

namespace tamer {

/// Twelve-token vocabulary used by the model-level checks: the reserved
/// three, the four structural tokens, and five symbols.
inline VocabPtr small_check_vocab() {
  return std::make_shared<const Vocab>(std::vector<std::string>{"{", "}", "^", "_", "a", "b", "c", "+", "="});
}

inline ModelConfig small_check_config(std::uint64_t seed) {
  ModelConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.d_ff = 16;
  c.decoder_layers = 2;
  c.tam_encoder_layers = 1;
  c.max_len = 8;
  c.seed = seed;
  return c;
}

/// Units k of the scorer whose child-projection column W_c[:, k] has an
/// identically zero gradient while still moving the loss's rounding: the ReLU
/// of unit k is on for every candidate of some contributing row with two or
/// more candidates, and mixed in none. The child term is then a constant shift of those rows, which the row
/// softmax cancels, so a finite-difference probe of the column measures
/// rounding only. Units that are off everywhere are fine: their probes are
/// exactly zero.
inline std::vector<std::size_t> unidentifiable_child_units(const TamParams& tam, const Tensor& encoded,
                                                           const RelationScoreMatrix& s, std::span<const int> parents) {
  const std::size_t T = s.length, d = encoded.dim(2);
  const Tensor xc = nn::matmul(encoded, tam.w_child);
  const Tensor xp = nn::matmul(encoded, tam.w_parent);
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < d; ++k) {
    bool mixed = false, active = false;
    for (std::size_t r = 0; r < parents.size() && !mixed; ++r) {
      if (parents[r] < 0) continue;
      const std::size_t b = r / T, i = r % T;
      bool on = false, off = false;
      int n = 0;
      for (std::size_t j = 0; j < T; ++j) {
        if (!s.is_candidate(b, i, j)) continue;
        (xc[(b * T + i) * d + k] + xp[(b * T + j) * d + k] > 0.0 ? on : off) = true;
        ++n;
      }
      if (n < 2) continue;  // a lone candidate's loss term is exactly zero
      mixed = on && off;
      active = active || on;
    }
    if (active && !mixed) out.push_back(k);
  }
  return out;
}

/// L_seq + L_struct of a fresh model on one framed sequence of length 6
/// ("a + b = c" behind SOS), checked against every model parameter.
///
/// The fixture must leave every W_c column identifiable (see above); when the
/// draw for `seed` does not, the next seed of the "gradcheck.fixture" stream
/// is tried. The decision looks only at activation signs, never at gradients.
inline nn::GradCheckCase full_model_case(std::uint64_t seed, std::uint64_t* used_seed = nullptr) {
  auto vocab = small_check_vocab();
  const std::vector<std::string> text{"a", "+", "b", "=", "c"};
  const TokenSeq seq = TokenSeq::from_tokens(text, vocab);
  std::vector<std::vector<int>> seqs{seq.ids()};
  std::vector<ParentAnnotation> anns{treeify(seq)};

  std::uint64_t s = seed;
  std::shared_ptr<ToyModel> model;
  std::shared_ptr<Batch> batch;
  for (int attempt = 0; attempt < 64; ++attempt) {
    if (attempt > 0) s = derive_seed(seed, "gradcheck.fixture." + std::to_string(attempt));
    model = std::make_shared<ToyModel>(ToyModel::create(small_check_config(s), vocab));
    Rng rng(s, "gradcheck.source");
    batch = std::make_shared<Batch>(make_batch(seqs, anns, vocab->size(), model->config.noise_sigma, rng));
    ForwardResult fr = toy_forward(*model, batch->source, batch->input);
    Tensor encoded = tam_encode(*model, fr.features, batch->input.lengths);
    RelationScoreMatrix scores = relation_scores(*model, encoded, batch->input);
    if (unidentifiable_child_units(*model->tam, encoded, scores, batch->parents).empty()) break;
  }
  if (used_seed) *used_seed = s;

  nn::GradCheckCase c;
  c.name = "full_model";
  c.params = model->named_parameters();
  c.objective = [model, batch] {
    ForwardResult fr = toy_forward(*model, batch->source, batch->input);
    Tensor encoded = tam_encode(*model, fr.features, batch->input.lengths);
    RelationScoreMatrix s = relation_scores(*model, encoded, batch->input);
    return total_loss(seq_loss(fr.logits, batch->targets), struct_loss(s, batch->parents));
  };
  return c;
}

struct SuiteResult {
  std::string name;
  double tolerance = 0.0;
  nn::GradCheckReport report;
};

struct SuiteSummary {
  std::vector<SuiteResult> results;
  std::uint64_t model_seed = 0;  // fixture seed actually used by the full-model case
  double seconds = 0.0;
  bool pass() const {
    for (const auto& r : results)
      if (!r.report.pass) return false;
    return true;
  }
};

inline constexpr double kPrimitiveTolerance = 1e-6;
inline constexpr double kModelTolerance = 1e-4;
inline constexpr double kGradcheckEps = 1e-5;

/// Every primitive at 1e-6 and the full model at 1e-4, central differences
/// with eps 1e-5.
inline SuiteSummary run_gradcheck_suite(std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  SuiteSummary summary;
  for (auto& c : nn::primitive_cases(seed))
    summary.results.push_back(
        {c.name, kPrimitiveTolerance, nn::gradcheck(c.objective, c.params, kGradcheckEps, kPrimitiveTolerance)});
  auto model = full_model_case(seed, &summary.model_seed);
  summary.results.push_back(
      {model.name, kModelTolerance, nn::gradcheck(model.objective, model.params, kGradcheckEps, kModelTolerance)});
  summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return summary;
}

}  // namespace tamer
