#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tamer/error.hpp"
#include "tamer/treebank.hpp"
#include "tamer/vocab.hpp"

namespace tamer {

/// Levenshtein distance with unit costs over token sequences.
template <class T>
std::size_t token_edit_distance(std::span<const T> a, std::span<const T> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::size_t token_edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  return token_edit_distance<std::string>(a, b);
}

inline std::size_t token_edit_distance(const TokenSeq& a, const TokenSeq& b) {
  return token_edit_distance<TokenId>(a.ids(), b.ids());
}

inline constexpr int kComplexityBuckets = 6;  // 0..4 and "5+"

inline int complexity_bucket(int complexity) { return std::min(complexity, kComplexityBuckets - 1); }

inline std::string bucket_label(int bucket) {
  return bucket == kComplexityBuckets - 1 ? std::to_string(bucket) + "+" : std::to_string(bucket);
}

/// Rates are percentages.
struct MetricRow {
  std::string label;
  std::size_t n = 0;
  double exprate = 0.0;
  double le1 = 0.0;
  double le2 = 0.0;
  double bracket_accuracy = 0.0;
};

struct EvalReport {
  MetricRow total;
  std::vector<MetricRow> buckets;  // occupied buckets only, ascending
  std::optional<double> parent_accuracy;
};

namespace detail {

struct Tally {
  std::size_t n = 0, exact = 0, le1 = 0, le2 = 0, balanced = 0;

  void add(std::size_t distance, bool balanced_pred) {
    ++n;
    exact += distance == 0;
    le1 += distance <= 1;
    le2 += distance <= 2;
    balanced += balanced_pred;
  }

  MetricRow row(std::string label) const {
    auto pct = [&](std::size_t k) { return 100.0 * static_cast<double>(k) / static_cast<double>(n); };
    return {std::move(label), n, pct(exact), pct(le1), pct(le2), pct(balanced)};
  }
};

}  // namespace detail

/// ExpRate, <=1 and <=2 error rates and bracket accuracy, overall and by the
/// structural complexity of the reference. A prediction counts toward
/// bracket accuracy iff its braces balance.
inline EvalReport evaluate(std::span<const std::vector<std::string>> preds,
                           std::span<const std::vector<std::string>> refs) {
  if (preds.size() != refs.size())
    fail(ErrorKind::LengthMismatch, std::to_string(preds.size()) + " predictions for " + std::to_string(refs.size()) +
                                        " references");
  if (refs.empty()) fail(ErrorKind::EmptyCorpus, "nothing to evaluate");
  detail::Tally total;
  std::array<detail::Tally, kComplexityBuckets> buckets;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const std::size_t dist = token_edit_distance(preds[i], refs[i]);
    const bool balanced = brackets_balanced(preds[i]);
    total.add(dist, balanced);
    buckets[static_cast<std::size_t>(complexity_bucket(complexity_of(refs[i])))].add(dist, balanced);
  }
  EvalReport r;
  r.total = total.row("TOTAL");
  for (int b = 0; b < kComplexityBuckets; ++b)
    if (buckets[static_cast<std::size_t>(b)].n) r.buckets.push_back(buckets[static_cast<std::size_t>(b)].row(bucket_label(b)));
  return r;
}

inline EvalReport evaluate(std::span<const TokenSeq> preds, std::span<const TokenSeq> refs) {
  std::vector<std::vector<std::string>> p, r;
  for (const auto& s : preds) p.push_back(s.strings());
  for (const auto& s : refs) r.push_back(s.strings());
  return evaluate(p, r);
}

/// Correct parents over positions whose gold parent exists.
struct ParentTally {
  std::size_t correct = 0;
  std::size_t total = 0;

  void add(std::span<const int> pred, std::span<const int> gold) {
    if (pred.size() != gold.size())
      fail(ErrorKind::LengthMismatch, "parent annotations of length " + std::to_string(pred.size()) + " and " +
                                          std::to_string(gold.size()));
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (gold[i] == kNoParent) continue;
      ++total;
      correct += pred[i] == gold[i];
    }
  }

  double fraction() const {
    if (total == 0) fail(ErrorKind::Undefined, "no position has a gold parent");
    return static_cast<double>(correct) / static_cast<double>(total);
  }
};

inline double parent_accuracy(const ParentAnnotation& pred, const ParentAnnotation& gold) {
  ParentTally t;
  t.add(pred.parents, gold.parents);
  return t.fraction();
}

// ---------------------------------------------------------------------------
// Output

inline nlohmann::json to_json(const MetricRow& r) {
  return {{"complexity", r.label}, {"n", r.n},     {"exprate", r.exprate},
          {"le1", r.le1},          {"le2", r.le2}, {"bracket_acc", r.bracket_accuracy}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["total"] = to_json(r.total);
  j["buckets"] = nlohmann::json::array();
  for (const auto& b : r.buckets) j["buckets"].push_back(to_json(b));
  if (r.parent_accuracy) j["parent_accuracy"] = *r.parent_accuracy;
  return j;
}

inline std::string format_rate(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

inline constexpr const char* kReportCsvHeader = "complexity,n,exprate,le1,le2,bracket_acc";

/// One row per occupied bucket, then TOTAL.
inline std::string report_csv(const EvalReport& r) {
  std::string out = std::string(kReportCsvHeader) + "\n";
  auto line = [&](const MetricRow& m) {
    out += m.label + "," + std::to_string(m.n) + "," + format_rate(m.exprate) + "," + format_rate(m.le1) + "," +
           format_rate(m.le2) + "," + format_rate(m.bracket_accuracy) + "\n";
  };
  for (const auto& b : r.buckets) line(b);
  line(r.total);
  return out;
}

/// Side-by-side comparison of two reports over the same references: for each
/// metric the "off" value, the "on" value and on - off.
inline std::string delta_csv(const EvalReport& off, const EvalReport& on) {
  std::string out = "complexity,n";
  for (const char* m : {"exprate", "le1", "le2", "bracket_acc"})
    out += std::string(",") + m + "_off," + m + "_on," + m + "_delta";
  out += "\n";
  auto line = [&](const MetricRow& a, const MetricRow& b) {
    if (a.label != b.label || a.n != b.n) fail(ErrorKind::LengthMismatch, "reports cover different references");
    out += a.label + "," + std::to_string(a.n);
    for (auto [x, y] : {std::pair{a.exprate, b.exprate}, std::pair{a.le1, b.le1}, std::pair{a.le2, b.le2},
                        std::pair{a.bracket_accuracy, b.bracket_accuracy}})
      out += "," + format_rate(x) + "," + format_rate(y) + "," + format_rate(y - x);
    out += "\n";
  };
  if (off.buckets.size() != on.buckets.size()) fail(ErrorKind::LengthMismatch, "reports cover different references");
  for (std::size_t i = 0; i < off.buckets.size(); ++i) line(off.buckets[i], on.buckets[i]);
  line(off.total, on.total);
  return out;
}

}  // namespace tamer
