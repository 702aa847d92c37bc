#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "json.hpp"
#include "tamer/error.hpp"
#include "tamer/rng.hpp"
#include "tamer/treebank.hpp"
#include "tamer/vocab.hpp"

namespace tamer {

struct GrammarConfig {
  int max_depth = 2;
  int max_baseline = 4;       // elements per baseline chain
  int max_tokens = 40;        // longer draws are rejected and redrawn
  double construct_rate = 0.3;  // chance a baseline element is a construct (depth permitting)
  double w_script = 1.0;
  double w_frac = 1.0;
  double w_sqrt = 1.0;
  double w_sum = 1.0;
  double w_group = 0.5;  // bare "{ ... }" groups; only used when bare_groups is set
  bool bare_groups = false;
  std::vector<std::string> alphabet{"0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "a", "b",
                                    "c", "x", "y", "z", "n", "i", "k", "+", "-", "="};
  std::uint64_t seed = 7;

  void validate() const {
    auto need = [](bool ok, const std::string& what) {
      if (!ok) fail(ErrorKind::InvalidConfig, what);
    };
    need(max_depth >= 0, "max_depth must be >= 0");
    need(max_baseline >= 1, "max_baseline must be >= 1");
    need(max_tokens >= 1, "max_tokens must be >= 1");
    need(construct_rate >= 0.0 && construct_rate <= 1.0, "construct_rate must lie in [0, 1]");
    need(w_script >= 0 && w_frac >= 0 && w_sqrt >= 0 && w_sum >= 0 && w_group >= 0, "weights must be non-negative");
    need(w_script + w_frac + w_sqrt + w_sum + (bare_groups ? w_group : 0.0) > 0, "weights must not all be zero");
    need(!alphabet.empty(), "alphabet must not be empty");
    for (const auto& s : alphabet)
      need(classify(s) == TokenClass::Symbol, "alphabet entry '" + s + "' is not a plain symbol");
  }
};

/// A point is the coordinate tuple of one trace sample, kept as written.
using Trace = std::vector<std::vector<double>>;

struct CorpusRecord {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<int> parents;
  int complexity = 0;
  std::vector<Trace> traces;
  std::optional<std::string> raw;  // ingested truth text before tokenizing

  bool operator==(const CorpusRecord&) const = default;
};

/// Record from tokens, annotation and complexity derived by the treebank.
inline CorpusRecord make_record(std::string id, std::vector<std::string> tokens) {
  CorpusRecord r;
  r.id = std::move(id);
  const ParentAnnotation ann = treeify(tokens);
  r.parents = ann.parents;
  r.complexity = structural_complexity(build_tree(ann));
  r.tokens = std::move(tokens);
  return r;
}

/// The distinct tokens a default grammar can emit, sorted.
inline std::vector<std::string> grammar_symbols(const GrammarConfig& cfg) {
  std::vector<std::string> out = cfg.alphabet;
  for (const char* t : {"{", "}", "^", "_"}) out.emplace_back(t);
  if (cfg.w_frac > 0) out.emplace_back("\\frac");
  if (cfg.w_sqrt > 0) out.emplace_back("\\sqrt");
  if (cfg.w_sum > 0) out.emplace_back("\\sum");
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

namespace detail {

class Grammar {
 public:
  Grammar(const GrammarConfig& cfg, Rng& rng) : cfg_(cfg), rng_(rng) {
    for (const auto& s : cfg.alphabet)
      (s.size() == 1 && !std::isalnum(static_cast<unsigned char>(s[0])) ? operators_ : operands_).push_back(s);
    if (operands_.empty()) operands_ = cfg.alphabet;
  }

  std::vector<std::string> expression() {
    std::vector<std::string> out;
    chain(cfg_.max_depth, out);
    return out;
  }

 private:
  enum Construct { kScript, kFrac, kSqrt, kSum, kGroup };

  const std::string& pick(const std::vector<std::string>& from) { return from[rng_.below(from.size())]; }
  const std::string& symbol() { return pick(cfg_.alphabet); }
  const std::string& operand() { return pick(operands_); }

  void group(int depth, std::vector<std::string>& out) {
    out.emplace_back("{");
    chain(depth, out);
    out.emplace_back("}");
  }

  Construct construct() {
    const std::array<double, 5> w{cfg_.w_script, cfg_.w_frac, cfg_.w_sqrt, cfg_.w_sum,
                                  cfg_.bare_groups ? cfg_.w_group : 0.0};
    double total = 0.0;
    for (double x : w) total += x;
    double u = rng_.uniform() * total;
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (u < w[k]) return static_cast<Construct>(k);
      u -= w[k];
    }
    for (std::size_t k = w.size(); k-- > 0;)
      if (w[k] > 0) return static_cast<Construct>(k);
    return kScript;
  }

  void chain(int depth, std::vector<std::string>& out) {
    const auto n = 1 + rng_.below(static_cast<std::uint64_t>(cfg_.max_baseline));
    for (std::uint64_t k = 0; k < n; ++k) {
      if (depth == 0 || rng_.uniform() >= cfg_.construct_rate) {
        out.push_back(symbol());
        continue;
      }
      switch (construct()) {
        case kScript: {
          out.push_back(operand());
          const double u = rng_.uniform();
          out.emplace_back(u < 0.5 ? "^" : "_");
          group(depth - 1, out);
          if (u >= 0.8) {  // sub then super
            out.emplace_back("^");
            group(depth - 1, out);
          }
          break;
        }
        case kFrac:
          out.emplace_back("\\frac");
          group(depth - 1, out);
          group(depth - 1, out);
          break;
        case kSqrt:
          out.emplace_back("\\sqrt");
          group(depth - 1, out);
          break;
        case kSum:
          out.emplace_back("\\sum");
          out.emplace_back("_");
          group(depth - 1, out);
          out.emplace_back("^");
          group(depth - 1, out);
          break;
        case kGroup:
          group(depth - 1, out);
          break;
      }
    }
  }

  const GrammarConfig& cfg_;
  Rng& rng_;
  std::vector<std::string> operators_, operands_;
};

}  // namespace detail

/// n records from the stochastic grammar; (config, n) fixes the output.
inline std::vector<CorpusRecord> generate(const GrammarConfig& cfg, std::size_t n) {
  cfg.validate();
  Rng rng(cfg.seed, "corpus.generate");
  detail::Grammar grammar(cfg, rng);
  std::vector<CorpusRecord> out;
  out.reserve(n);
  char id[32];
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::string> tokens;
    do tokens = grammar.expression();
    while (tokens.size() > static_cast<std::size_t>(cfg.max_tokens));
    std::snprintf(id, sizeof id, "syn-%06zu", i);
    out.push_back(make_record(id, std::move(tokens)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSONL

inline nlohmann::json to_json(const CorpusRecord& r) {
  nlohmann::json j{{"id", r.id}, {"tokens", r.tokens}, {"parents", r.parents}, {"complexity", r.complexity}};
  if (!r.traces.empty()) j["traces"] = r.traces;
  if (r.raw) j["raw"] = *r.raw;
  return j;
}

inline std::string to_jsonl(std::span<const CorpusRecord> records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + "\n";
  return out;
}

inline void write_jsonl(const std::string& path, std::span<const CorpusRecord> records) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::IoError, "cannot open " + path + " for writing");
  f << to_jsonl(records);
  if (!f) fail(ErrorKind::IoError, "write to " + path + " failed");
}

namespace detail {

inline CorpusRecord record_from_json(const nlohmann::json& j) {
  auto need = [&](const char* key, bool ok) {
    if (!j.contains(key)) throw std::invalid_argument(std::string("missing field \"") + key + "\"");
    if (!ok) throw std::invalid_argument(std::string("field \"") + key + "\" has the wrong type");
  };
  if (!j.is_object()) throw std::invalid_argument("not a JSON object");
  need("id", j.contains("id") && j["id"].is_string());
  need("tokens", j.contains("tokens") && j["tokens"].is_array());
  need("parents", j.contains("parents") && j["parents"].is_array());
  need("complexity", j.contains("complexity") && j["complexity"].is_number_integer());
  CorpusRecord r;
  r.id = j["id"].get<std::string>();
  r.tokens = j["tokens"].get<std::vector<std::string>>();
  r.parents = j["parents"].get<std::vector<int>>();
  r.complexity = j["complexity"].get<int>();
  if (j.contains("traces")) r.traces = j["traces"].get<std::vector<Trace>>();
  if (j.contains("raw")) r.raw = j["raw"].get<std::string>();

  const ParentAnnotation ann = treeify(r.tokens);
  if (ann.parents != r.parents) throw std::invalid_argument("parents disagree with the tokens' annotation");
  if (structural_complexity(build_tree(ann)) != r.complexity)
    throw std::invalid_argument("complexity disagrees with the tokens' tree");
  return r;
}

}  // namespace detail

inline std::vector<CorpusRecord> parse_jsonl(std::istream& in, const std::string& source = "<stream>") {
  std::vector<CorpusRecord> out;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(detail::record_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      fail(ErrorKind::SchemaError, source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<CorpusRecord> read_jsonl(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::IoError, "cannot open " + path);
  return parse_jsonl(f, path);
}

// ---------------------------------------------------------------------------
// InkML

namespace detail {

namespace pt = boost::property_tree;

inline std::string local_name(const std::string& tag) {
  auto colon = tag.rfind(':');
  return colon == std::string::npos ? tag : tag.substr(colon + 1);
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

inline Trace parse_trace(const std::string& text, const std::string& where) {
  Trace trace;
  std::stringstream points(text);
  for (std::string point; std::getline(points, point, ',');) {
    if (trim(point).empty()) continue;
    std::istringstream coords(point);
    std::vector<double> p;
    for (std::string c; coords >> c;) {
      try {
        std::size_t used = 0;
        p.push_back(std::stod(c, &used));
        if (used != c.size()) throw std::invalid_argument(c);
      } catch (const std::exception&) {
        fail(ErrorKind::MalformedXml, where + ": bad trace coordinate '" + c + "'");
      }
    }
    trace.push_back(std::move(p));
  }
  return trace;
}

struct InkScan {
  std::optional<std::string> truth;
  std::vector<Trace> traces;
};

/// Document-order walk: the first annotation typed "truth" at any depth
/// outside trace groups, and every trace.
inline void scan_ink(const pt::ptree& node, InkScan& out, const std::string& where) {
  for (const auto& [tag, child] : node) {
    if (tag == "<xmlattr>" || tag == "<xmlcomment>") continue;
    const std::string name = local_name(tag);
    if (name == "annotation") {
      if (!out.truth && child.get<std::string>("<xmlattr>.type", "") == "truth") out.truth = child.get_value<std::string>();
    } else if (name == "trace") {
      out.traces.push_back(parse_trace(child.get_value<std::string>(), where));
    } else if (name == "traceGroup") {
      // Symbol-level groups carry their own truth annotations; only traces matter here.
      InkScan inner;
      scan_ink(child, inner, where);
      for (auto& t : inner.traces) out.traces.push_back(std::move(t));
    } else {
      scan_ink(child, out, where);
    }
  }
}

/// CROHME truth strings are often wrapped in $...$.
inline std::string strip_math_delimiters(std::string s) {
  s = trim(s);
  while (s.size() >= 2 && s.front() == '$' && s.back() == '$') s = trim(s.substr(1, s.size() - 2));
  return s;
}

}  // namespace detail

/// Record from an InkML document: tokenized truth, traces, derived annotation.
inline CorpusRecord parse_inkml(std::istream& in, const std::string& id, VocabPtr vocab = Vocab::crohme()) {
  detail::pt::ptree doc;
  try {
    detail::pt::read_xml(in, doc);
  } catch (const detail::pt::xml_parser_error& e) {
    fail(ErrorKind::MalformedXml, id + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  detail::InkScan scan;
  detail::scan_ink(doc, scan, id);
  if (!scan.truth) fail(ErrorKind::MissingTruthAnnotation, id + ": no annotation of type \"truth\"");
  const std::string raw = detail::strip_math_delimiters(*scan.truth);
  CorpusRecord r = make_record(id, tokenize_raw(raw, std::move(vocab)).strings());
  r.traces = std::move(scan.traces);
  r.raw = *scan.truth;
  return r;
}

inline CorpusRecord ingest_inkml(const std::string& path, VocabPtr vocab = Vocab::crohme()) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::IoError, "cannot open " + path);
  return parse_inkml(f, std::filesystem::path(path).stem().string(), std::move(vocab));
}

/// Every *.inkml file directly under `dir`, in path order.
inline std::vector<CorpusRecord> ingest_directory(const std::string& dir, VocabPtr vocab = Vocab::crohme()) {
  std::error_code ec;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec))
    if (entry.is_regular_file() && entry.path().extension() == ".inkml") files.push_back(entry.path());
  if (ec) fail(ErrorKind::IoError, "cannot list " + dir + ": " + ec.message());
  std::sort(files.begin(), files.end());
  std::vector<CorpusRecord> out;
  for (const auto& f : files) out.push_back(ingest_inkml(f.string(), vocab));
  return out;
}

}  // namespace tamer
