#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tamer/error.hpp"
#include "tamer/nn/checkpoint.hpp"
#include "tamer/nn/gradcheck.hpp"
#include "tamer/nn/ops.hpp"
#include "tamer/rng.hpp"
#include "tamer/treebank.hpp"
#include "tamer/vocab.hpp"

namespace tamer {

using nn::NamedTensor;
using nn::Shape;
using nn::Tensor;

/// Architecture hyper-parameters. Defaults are the full-size decoder
/// (256/8/1024, 3 layers); `toy()` gives the desk-scale setting.
struct ModelConfig {
  int d_model = 256;
  int heads = 8;
  int d_ff = 1024;
  int decoder_layers = 3;
  int tam_encoder_layers = 1;
  int vocab_size = 0;
  int max_len = 64;
  double noise_sigma = 0.1;
  std::uint64_t seed = 7;
  bool tam_enabled = true;
  bool tam_positions = true;

  static ModelConfig toy(int vocab_size) {
    ModelConfig c;
    c.d_model = 64;
    c.heads = 4;
    c.d_ff = 128;
    c.decoder_layers = 2;
    c.vocab_size = vocab_size;
    return c;
  }

  void validate() const {
    auto need = [](bool ok, const std::string& what) {
      if (!ok) fail(ErrorKind::InvalidConfig, what);
    };
    need(d_model >= 1 && heads >= 1 && d_ff >= 1, "dimensions must be >= 1");
    need(d_model % heads == 0, "d_model must be divisible by heads");
    need(decoder_layers >= 1 && tam_encoder_layers >= 0, "layer counts out of range");
    need(vocab_size > Vocab::kNumReserved, "vocab_size must exceed the reserved ids");
    need(max_len >= 1, "max_len must be >= 1");
    need(noise_sigma >= 0.0, "noise_sigma must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d_model", c.d_model},
                     {"heads", c.heads},
                     {"d_ff", c.d_ff},
                     {"decoder_layers", c.decoder_layers},
                     {"tam_encoder_layers", c.tam_encoder_layers},
                     {"vocab_size", c.vocab_size},
                     {"max_len", c.max_len},
                     {"noise_sigma", c.noise_sigma},
                     {"seed", c.seed},
                     {"tam_enabled", c.tam_enabled},
                     {"tam_positions", c.tam_positions}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.d_model = j.value("d_model", c.d_model);
  c.heads = j.value("heads", c.heads);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.tam_encoder_layers = j.value("tam_encoder_layers", c.tam_encoder_layers);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_len = j.value("max_len", c.max_len);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.seed = j.value("seed", c.seed);
  c.tam_enabled = j.value("tam_enabled", c.tam_enabled);
  c.tam_positions = j.value("tam_positions", c.tam_positions);
}

struct Linear {
  Tensor w;  // (in, out)
  Tensor b;  // (out), may be undefined
  Tensor operator()(const Tensor& x) const {
    Tensor y = nn::matmul(x, w);
    return b.defined() ? nn::add(y, b) : y;
  }
};

struct Norm {
  Tensor gamma, beta;
  Tensor operator()(const Tensor& x) const { return nn::layer_norm(x, gamma, beta); }
};

struct AttentionParams {
  Linear q, k, v, o;
};

struct FeedForwardParams {
  Linear in, out;
};

struct DecoderLayerParams {
  AttentionParams self_attn;
  Norm norm1;
  AttentionParams cross_attn;
  Norm norm2;
  FeedForwardParams ff;
  Norm norm3;
};

struct EncoderLayerParams {
  AttentionParams self_attn;
  Norm norm1;
  FeedForwardParams ff;
  Norm norm2;
};

/// Tree-aware head: encoder stack, child/parent projections and the score
/// vector.
struct TamParams {
  std::vector<EncoderLayerParams> encoder;
  Tensor w_child;   // (d, d)
  Tensor w_parent;  // (d, d)
  Tensor v_score;   // (d)
};

namespace detail {

class ParamBuilder {
 public:
  ParamBuilder(std::uint64_t seed, std::vector<NamedTensor>& registry) : seed_(seed), registry_(registry) {}

  Tensor xavier(const std::string& name, std::size_t fan_in, std::size_t fan_out, Shape shape) {
    Rng rng(seed_, "init." + name);
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> v(nn::numel(shape));
    for (auto& x : v) x = rng.uniform(-a, a);
    return add(name, std::move(shape), std::move(v));
  }

  Tensor normal(const std::string& name, Shape shape, double stddev) {
    Rng rng(seed_, "init." + name);
    std::vector<double> v(nn::numel(shape));
    for (auto& x : v) x = stddev * rng.normal();
    return add(name, std::move(shape), std::move(v));
  }

  Tensor constant(const std::string& name, Shape shape, double value) {
    std::vector<double> v(nn::numel(shape), value);
    return add(name, std::move(shape), std::move(v));
  }

  Linear linear(const std::string& name, std::size_t in, std::size_t out) {
    return {xavier(name + ".w", in, out, {in, out}), constant(name + ".b", {out}, 0.0)};
  }

  Norm norm(const std::string& name, std::size_t d) {
    return {constant(name + ".gamma", {d}, 1.0), constant(name + ".beta", {d}, 0.0)};
  }

  // No key bias: it shifts every score of a query row by the same amount,
  // which the softmax cancels, so its gradient is identically zero.
  AttentionParams attention(const std::string& name, std::size_t d) {
    return {linear(name + ".q", d, d), {xavier(name + ".k.w", d, d, {d, d}), Tensor()}, linear(name + ".v", d, d),
            linear(name + ".o", d, d)};
  }

  FeedForwardParams feed_forward(const std::string& name, std::size_t d, std::size_t dff) {
    return {linear(name + ".in", d, dff), linear(name + ".out", dff, d)};
  }

 private:
  Tensor add(const std::string& name, Shape shape, std::vector<double> v) {
    Tensor t = Tensor::parameter(std::move(shape), std::move(v));
    registry_.push_back({name, t});
    return t;
  }

  std::uint64_t seed_;
  std::vector<NamedTensor>& registry_;
};

}  // namespace detail

/// Desk-scale recognizer: noisy one-hot source observations stand in for
/// visual features, a causal Transformer decoder reads them through
/// cross-attention, and the tree-aware head scores parent candidates.
class ToyModel {
 public:
  ModelConfig config;
  VocabPtr vocab;

  Tensor embed;        // (V, d)
  Linear source_proj;  // V -> d
  std::vector<DecoderLayerParams> decoder;
  Linear output;  // d -> V
  std::optional<TamParams> tam;

  static ToyModel create(ModelConfig cfg, VocabPtr vocab) {
    cfg.vocab_size = static_cast<int>(vocab->size());
    cfg.validate();
    ToyModel m;
    m.config = cfg;
    m.vocab = std::move(vocab);
    const auto d = static_cast<std::size_t>(cfg.d_model);
    const auto V = static_cast<std::size_t>(cfg.vocab_size);
    const auto dff = static_cast<std::size_t>(cfg.d_ff);
    detail::ParamBuilder pb(cfg.seed, m.params_);
    m.embed = pb.normal("embed", {V, d}, 1.0);
    m.source_proj = pb.linear("source_proj", V, d);
    for (int l = 0; l < cfg.decoder_layers; ++l) {
      const std::string p = "decoder." + std::to_string(l);
      m.decoder.push_back({pb.attention(p + ".self_attn", d), pb.norm(p + ".norm1", d),
                           pb.attention(p + ".cross_attn", d), pb.norm(p + ".norm2", d),
                           pb.feed_forward(p + ".ff", d, dff), pb.norm(p + ".norm3", d)});
    }
    m.output = pb.linear("output", d, V);
    if (cfg.tam_enabled) {
      TamParams t;
      for (int l = 0; l < cfg.tam_encoder_layers; ++l) {
        const std::string p = "tam.encoder." + std::to_string(l);
        t.encoder.push_back({pb.attention(p + ".self_attn", d), pb.norm(p + ".norm1", d),
                             pb.feed_forward(p + ".ff", d, dff), pb.norm(p + ".norm2", d)});
      }
      t.w_child = pb.xavier("tam.w_child", d, d, {d, d});
      t.w_parent = pb.xavier("tam.w_parent", d, d, {d, d});
      t.v_score = pb.xavier("tam.v_score", d, 1, {d});
      m.tam = std::move(t);
    }
    return m;
  }

  /// Parameters in construction order; names are stable checkpoint keys.
  const std::vector<NamedTensor>& named_parameters() const { return params_; }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const auto& p : params_) out.push_back(p.tensor);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  nn::Checkpoint to_checkpoint(nlohmann::json extra = nlohmann::json::object()) const {
    nlohmann::json meta;
    meta["format"] = "tamer-toy-model";
    meta["model"] = config;
    meta["vocab"] = vocab->symbols();
    meta["extra"] = std::move(extra);
    nn::Checkpoint ck;
    ck.metadata = meta.dump();
    for (const auto& p : params_) ck.arrays.push_back({p.name, p.tensor.clone()});
    return ck;
  }

  static ToyModel from_checkpoint(const nn::Checkpoint& ck) {
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(ck.metadata);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::SchemaError, std::string("checkpoint metadata: ") + e.what());
    }
    if (meta.value("format", "") != "tamer-toy-model") fail(ErrorKind::SchemaError, "checkpoint is not a toy model");
    auto vocab = std::make_shared<const Vocab>(meta.at("vocab").get<std::vector<std::string>>());
    ToyModel m = create(meta.at("model").get<ModelConfig>(), vocab);
    for (auto& p : m.params_) {
      const Tensor* src = ck.find(p.name);
      if (!src) fail(ErrorKind::SchemaError, "checkpoint lacks array " + p.name);
      if (src->shape() != p.tensor.shape()) nn::shape_mismatch(p.name.c_str(), p.tensor.shape(), src->shape());
      std::copy(src->data().begin(), src->data().end(), p.tensor.mutable_data().begin());
    }
    return m;
  }

 private:
  std::vector<NamedTensor> params_;
};

// ---------------------------------------------------------------------------
// Inputs

inline constexpr int kPadTarget = -2;

/// Source observations for B expressions: (B, Ts, V) features and the number
/// of valid rows per expression.
struct SourceInput {
  Tensor features;
  std::vector<std::size_t> lengths;
};

/// Teacher-forced decoder input: (B, T) ids framed as [SOS, y1..yn, PAD...].
struct DecoderInput {
  std::size_t batch = 0, length = 0;
  std::vector<int> ids;
  std::vector<std::size_t> lengths;  // n + 1 per row
};

/// One training batch. Parent targets are in framed coordinates (token p sits
/// in row p + 1); kNoParent marks rows without a parent, kPadTarget padding.
struct Batch {
  SourceInput source;
  DecoderInput input;
  std::vector<int> targets;  // (B*T) next-token ids, PAD-filled
  std::vector<int> parents;  // (B*T)
};

/// Noisy one-hot observation of [y1..yn, EOS] for each sequence.
inline SourceInput make_source(std::span<const std::vector<int>> seqs, std::size_t vocab_size, double sigma, Rng& rng) {
  std::size_t T = 0;
  for (const auto& s : seqs) T = std::max(T, s.size() + 1);
  const std::size_t B = seqs.size(), V = vocab_size;
  SourceInput src;
  src.features = Tensor::zeros({B, T, V});
  auto f = src.features.mutable_data();
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t len = seqs[b].size() + 1;
    src.lengths.push_back(len);
    for (std::size_t t = 0; t < len; ++t) {
      const int tok = t < seqs[b].size() ? seqs[b][t] : Vocab::kEos;
      double* row = f.data() + (b * T + t) * V;
      for (std::size_t v = 0; v < V; ++v) row[v] = sigma * rng.normal();
      row[static_cast<std::size_t>(tok)] += 1.0;
    }
  }
  return src;
}

inline DecoderInput make_decoder_input(std::span<const std::vector<int>> seqs) {
  DecoderInput in;
  in.batch = seqs.size();
  for (const auto& s : seqs) in.length = std::max(in.length, s.size() + 1);
  in.ids.assign(in.batch * in.length, Vocab::kPad);
  for (std::size_t b = 0; b < in.batch; ++b) {
    in.lengths.push_back(seqs[b].size() + 1);
    in.ids[b * in.length] = Vocab::kSos;
    for (std::size_t t = 0; t < seqs[b].size(); ++t) in.ids[b * in.length + t + 1] = seqs[b][t];
  }
  return in;
}

/// `annotations` may be empty (no parent targets) or one per sequence.
inline Batch make_batch(std::span<const std::vector<int>> seqs, std::span<const ParentAnnotation> annotations,
                        std::size_t vocab_size, double sigma, Rng& rng) {
  if (!annotations.empty() && annotations.size() != seqs.size())
    fail(ErrorKind::LengthMismatch, "one annotation per sequence required");
  Batch batch;
  batch.source = make_source(seqs, vocab_size, sigma, rng);
  batch.input = make_decoder_input(seqs);
  const std::size_t B = batch.input.batch, T = batch.input.length;
  batch.targets.assign(B * T, Vocab::kPad);
  batch.parents.assign(B * T, kPadTarget);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& s = seqs[b];
    for (std::size_t t = 0; t < s.size(); ++t) batch.targets[b * T + t] = s[t];
    batch.targets[b * T + s.size()] = Vocab::kEos;
    batch.parents[b * T] = kNoParent;
    for (std::size_t p = 0; p < s.size(); ++p) {
      int gold = kNoParent;
      if (!annotations.empty()) {
        if (annotations[b].size() != s.size()) fail(ErrorKind::LengthMismatch, "annotation length differs from sequence");
        gold = annotations[b].parents[p];
      }
      batch.parents[b * T + p + 1] = gold == kNoParent ? kNoParent : gold + 1;
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Building blocks

inline Tensor sinusoidal_positions(std::size_t T, std::size_t d) {
  std::vector<double> pe(T * d);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      pe[t * d + i] = std::sin(static_cast<double>(t) * freq);
      if (i + 1 < d) pe[t * d + i + 1] = std::cos(static_cast<double>(t) * freq);
    }
  return Tensor::from({T, d}, std::move(pe));
}

/// 1 where attention is forbidden, laid out (B, heads, Tq, Tk).
inline std::vector<std::uint8_t> attention_mask(std::size_t B, std::size_t heads, std::size_t Tq, std::size_t Tk,
                                                std::span<const std::size_t> key_lengths, bool causal) {
  std::vector<std::uint8_t> m(B * heads * Tq * Tk, 0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t q = 0; q < Tq; ++q) {
        std::uint8_t* row = m.data() + ((b * heads + h) * Tq + q) * Tk;
        for (std::size_t k = 0; k < Tk; ++k) row[k] = (k >= key_lengths[b] || (causal && k > q)) ? 1 : 0;
      }
  return m;
}

inline Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t B = x.dim(0), T = x.dim(1), d = x.dim(2);
  return nn::transpose(nn::reshape(x, {B, T, heads, d / heads}), 1, 2);
}

inline Tensor merge_heads(const Tensor& x) {
  const std::size_t B = x.dim(0), h = x.dim(1), T = x.dim(2), dk = x.dim(3);
  return nn::reshape(nn::transpose(x, 1, 2), {B, T, h * dk});
}

inline Tensor multi_head_attention(const AttentionParams& p, const Tensor& query, const Tensor& keys,
                                   std::span<const std::uint8_t> mask, std::size_t heads) {
  const std::size_t dk = query.dim(2) / heads;
  Tensor q = split_heads(p.q(query), heads);
  Tensor k = split_heads(p.k(keys), heads);
  Tensor v = split_heads(p.v(keys), heads);
  Tensor scores = nn::scale(nn::matmul(q, nn::transpose(k, -2, -1)), 1.0 / std::sqrt(static_cast<double>(dk)));
  Tensor weights = nn::softmax(nn::masked_fill(scores, mask), -1);
  return p.o(merge_heads(nn::matmul(weights, v)));
}

inline Tensor feed_forward(const FeedForwardParams& p, const Tensor& x) { return p.out(nn::relu(p.in(x))); }

inline Tensor encode_source(const ToyModel& m, const SourceInput& src) {
  const std::size_t Ts = src.features.dim(1);
  return nn::add(m.source_proj(src.features), sinusoidal_positions(Ts, static_cast<std::size_t>(m.config.d_model)));
}

/// Decoder features (B, T, d) for teacher-forced `input` against `memory`.
inline Tensor decode_features(const ToyModel& m, const Tensor& memory, std::span<const std::size_t> memory_lengths,
                              const DecoderInput& input) {
  const std::size_t B = input.batch, T = input.length, d = static_cast<std::size_t>(m.config.d_model);
  const std::size_t H = static_cast<std::size_t>(m.config.heads);
  if (memory.rank() != 3 || memory.dim(0) != B || memory.dim(2) != d)
    nn::shape_mismatch("decoder memory", memory.shape(), Shape{B, 0, d});
  const std::size_t Ts = memory.dim(1);
  Tensor x = nn::add(nn::embedding(m.embed, input.ids, {B, T}), sinusoidal_positions(T, d));
  const auto self_mask = attention_mask(B, H, T, T, input.lengths, true);
  const auto cross_mask = attention_mask(B, H, T, Ts, memory_lengths, false);
  for (const auto& layer : m.decoder) {
    x = layer.norm1(nn::add(x, multi_head_attention(layer.self_attn, x, x, self_mask, H)));
    x = layer.norm2(nn::add(x, multi_head_attention(layer.cross_attn, x, memory, cross_mask, H)));
    x = layer.norm3(nn::add(x, feed_forward(layer.ff, x)));
  }
  return x;
}

struct ForwardResult {
  Tensor features;  // X, (B, T, d)
  Tensor logits;    // (B, T, V)
};

inline ForwardResult toy_forward(const ToyModel& m, const SourceInput& src, const DecoderInput& input) {
  if (src.features.rank() != 3 || src.features.dim(0) != input.batch ||
      src.features.dim(2) != static_cast<std::size_t>(m.config.vocab_size))
    nn::shape_mismatch("toy_forward source", src.features.shape(),
                       Shape{input.batch, 0, static_cast<std::size_t>(m.config.vocab_size)});
  if (input.ids.size() != input.batch * input.length || input.lengths.size() != input.batch)
    nn::shape_mismatch("toy_forward input", Shape{input.ids.size()}, Shape{input.batch, input.length});
  Tensor memory = encode_source(m, src);
  Tensor x = decode_features(m, memory, src.lengths, input);
  return {x, m.output(x)};
}

/// Bidirectional encoder over decoder features; rows past `lengths` are
/// masked out as keys.
inline Tensor tam_encode(const ToyModel& m, const Tensor& x, std::span<const std::size_t> lengths) {
  if (!m.tam) fail(ErrorKind::InvalidConfig, "model was built without the tree-aware module");
  if (x.rank() != 3 || x.dim(2) != static_cast<std::size_t>(m.config.d_model) || lengths.size() != x.dim(0))
    nn::shape_mismatch("tam_encode", x.shape(), Shape{lengths.size(), 0, static_cast<std::size_t>(m.config.d_model)});
  const std::size_t B = x.dim(0), T = x.dim(1), H = static_cast<std::size_t>(m.config.heads);
  Tensor h = m.config.tam_positions ? nn::add(x, sinusoidal_positions(T, x.dim(2))) : x;
  const auto mask = attention_mask(B, H, T, T, lengths, false);
  for (const auto& layer : m.tam->encoder) {
    h = layer.norm1(nn::add(h, multi_head_attention(layer.self_attn, h, h, mask, H)));
    h = layer.norm2(nn::add(h, feed_forward(layer.ff, h)));
  }
  return h;
}

/// Relationship scores S (B, T, T): row i scores each column j as the parent
/// of position i. `candidate` marks the admissible (i, j) pairs; every other
/// entry holds the mask sentinel.
struct RelationScoreMatrix {
  Tensor scores;
  std::vector<std::uint8_t> candidate;
  std::size_t batch = 0, length = 0;

  bool is_candidate(std::size_t b, std::size_t i, std::size_t j) const {
    return candidate[(b * length + i) * length + j] != 0;
  }

  bool row_has_candidates(std::size_t b, std::size_t i) const {
    for (std::size_t j = 0; j < length; ++j)
      if (is_candidate(b, i, j)) return true;
    return false;
  }

  double at(std::size_t b, std::size_t i, std::size_t j) const { return scores[(b * length + i) * length + j]; }
};

/// Admissible parent pairs over framed decoder positions: j < i, both inside
/// the sequence, neither SOS/PAD nor a structural token.
inline std::vector<std::uint8_t> candidate_mask(const DecoderInput& input, const Vocab& vocab) {
  const std::size_t B = input.batch, T = input.length;
  std::vector<std::uint8_t> c(B * T * T, 0);
  for (std::size_t b = 0; b < B; ++b) {
    auto node = [&](std::size_t t) {
      const int id = input.ids[b * T + t];
      return t < input.lengths[b] && !vocab.reserved(id) && !vocab.structural(id);
    };
    for (std::size_t i = 0; i < T; ++i) {
      if (!node(i)) continue;
      for (std::size_t j = 1; j < i; ++j)
        if (node(j)) c[(b * T + i) * T + j] = 1;
    }
  }
  return c;
}

inline RelationScoreMatrix relation_scores(const TamParams& tam, const Tensor& encoded,
                                           std::vector<std::uint8_t> candidate) {
  if (encoded.rank() != 3) nn::shape_mismatch("relation_scores", encoded.shape(), tam.w_child.shape());
  const std::size_t B = encoded.dim(0), T = encoded.dim(1), d = encoded.dim(2);
  if (tam.w_child.dim(0) != d) nn::shape_mismatch("relation_scores", encoded.shape(), tam.w_child.shape());
  if (candidate.size() != B * T * T) nn::shape_mismatch("relation_scores mask", Shape{candidate.size()}, Shape{B, T, T});
  Tensor child = nn::reshape(nn::matmul(encoded, tam.w_child), {B, T, 1, d});
  Tensor parent = nn::reshape(nn::matmul(encoded, tam.w_parent), {B, 1, T, d});
  Tensor pair = nn::relu(nn::add(child, parent));  // (B, T, T, d)
  Tensor raw = nn::reshape(nn::matmul(pair, nn::reshape(tam.v_score, {d, 1})), {B, T, T});
  std::vector<std::uint8_t> blocked(candidate.size());
  for (std::size_t i = 0; i < candidate.size(); ++i) blocked[i] = candidate[i] ? 0 : 1;
  RelationScoreMatrix s;
  s.scores = nn::masked_fill(raw, blocked);
  s.candidate = std::move(candidate);
  s.batch = B;
  s.length = T;
  return s;
}

inline RelationScoreMatrix relation_scores(const ToyModel& m, const Tensor& encoded, const DecoderInput& input) {
  if (!m.tam) fail(ErrorKind::InvalidConfig, "model was built without the tree-aware module");
  return relation_scores(*m.tam, encoded, candidate_mask(input, *m.vocab));
}

// ---------------------------------------------------------------------------
// Losses

/// Mean next-token cross-entropy over non-PAD targets.
inline Tensor seq_loss(const Tensor& logits, std::span<const int> targets) {
  return nn::cross_entropy(logits, targets, Vocab::kPad);
}

inline bool has_struct_targets(std::span<const int> parents) {
  return std::any_of(parents.begin(), parents.end(), [](int p) { return p >= 0; });
}

/// Mean cross-entropy of each contributing row's softmax (over its
/// candidates) against the gold parent column.
inline Tensor struct_loss(const RelationScoreMatrix& s, std::span<const int> parents) {
  const std::size_t T = s.length;
  if (parents.size() != s.batch * T) nn::shape_mismatch("struct_loss", s.scores.shape(), Shape{parents.size()});
  std::vector<int> targets(parents.size(), -1);
  for (std::size_t r = 0; r < parents.size(); ++r) {
    const int p = parents[r];
    if (p < 0) continue;
    const std::size_t b = r / T, i = r % T;
    if (static_cast<std::size_t>(p) >= T || !s.is_candidate(b, i, static_cast<std::size_t>(p)))
      fail(ErrorKind::TargetOutOfMask, "row " + std::to_string(i) + " of batch item " + std::to_string(b) +
                                           " targets masked column " + std::to_string(p));
    targets[r] = p;
  }
  if (!has_struct_targets(targets)) fail(ErrorKind::EmptyLoss, "no row contributes to the structure loss");
  return nn::cross_entropy(nn::reshape(s.scores, {s.batch * T, T}), targets, -1);
}

inline Tensor total_loss(const Tensor& seq, const Tensor& structure, double lambda_struct = 1.0) {
  return nn::add(seq, nn::scale(structure, lambda_struct));
}

// ---------------------------------------------------------------------------
// Predictions

/// Row-wise argmax over candidates (ties to the smallest column), mapped back
/// to token positions. Rows without candidates get kNoParent.
inline ParentAnnotation predict_parents(const RelationScoreMatrix& s, std::size_t b, std::size_t n_tokens) {
  ParentAnnotation ann;
  ann.parents.assign(n_tokens, kNoParent);
  ann.node.assign(n_tokens, false);
  for (std::size_t p = 0; p < n_tokens && p + 1 < s.length; ++p) {
    const std::size_t i = p + 1;
    int best = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < s.length; ++j) {
      if (!s.is_candidate(b, i, j)) continue;
      const double v = s.at(b, i, j);
      if (best < 0 || v > best_score) {
        best = static_cast<int>(j);
        best_score = v;
      }
    }
    if (best >= 0) {
      ann.parents[p] = best - 1;
      ann.node[p] = true;
      ann.node[static_cast<std::size_t>(best - 1)] = true;
    }
  }
  return ann;
}

/// Per contributing row: max_j log softmax(S_i)_j over the row's candidates.
inline std::vector<double> row_confidences(const RelationScoreMatrix& s, std::size_t b) {
  std::vector<double> out;
  for (std::size_t i = 0; i < s.length; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < s.length; ++j)
      if (s.is_candidate(b, i, j)) {
        mx = std::max(mx, s.at(b, i, j));
        any = true;
      }
    if (!any) continue;
    double sum = 0.0;
    for (std::size_t j = 0; j < s.length; ++j)
      if (s.is_candidate(b, i, j)) sum += std::exp(s.at(b, i, j) - mx);
    out.push_back(-std::log(sum));
  }
  return out;
}

}  // namespace tamer
