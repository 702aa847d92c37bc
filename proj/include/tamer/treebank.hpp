#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tamer/error.hpp"
#include "tamer/vocab.hpp"

namespace tamer {

inline constexpr int kNoParent = -1;

/// Positional form of the (child, parent) tuple list. `node[i]` is false for
/// tokens that never take part in the tree (structural tokens and the square
/// brackets of a root index).
struct ParentAnnotation {
  std::vector<int> parents;
  std::vector<bool> node;

  std::size_t size() const noexcept { return parents.size(); }

  /// Annotation from bare parent indices. Positions that are neither a child
  /// nor a parent count as nodes only if `lone_nodes` marks them so.
  static ParentAnnotation from_parents(std::vector<int> parents, std::vector<bool> lone_nodes = {}) {
    ParentAnnotation ann;
    ann.node.assign(parents.size(), false);
    for (std::size_t i = 0; i < parents.size(); ++i) {
      if (parents[i] != kNoParent) {
        ann.node[i] = true;
        if (parents[i] >= 0 && static_cast<std::size_t>(parents[i]) < parents.size())
          ann.node[static_cast<std::size_t>(parents[i])] = true;
      }
      if (i < lone_nodes.size() && lone_nodes[i]) ann.node[i] = true;
    }
    ann.parents = std::move(parents);
    return ann;
  }

  bool operator==(const ParentAnnotation&) const = default;
};

namespace detail {

inline bool is_alpha_command(std::string_view tok) {
  return tok.size() > 1 && tok.front() == '\\' &&
         std::all_of(tok.begin() + 1, tok.end(), [](char c) { return std::isalpha(static_cast<unsigned char>(c)); });
}

// Recursive-descent annotator. `attach` is the current attachment point of
// the baseline chain; nested arguments start from their owner.
class Annotator {
 public:
  explicit Annotator(std::span<const std::string> toks) : toks_(toks) {
    ann_.parents.assign(toks.size(), kNoParent);
    ann_.node.assign(toks.size(), false);
  }

  ParentAnnotation run() {
    parse_sequence(std::nullopt, Stop::End, 0);
    return std::move(ann_);
  }

 private:
  enum class Stop { End, Brace, Bracket };

  bool at(std::string_view tok) const { return pos_ < toks_.size() && toks_[pos_] == tok; }

  std::optional<int> parse_sequence(std::optional<int> attach, Stop stop, std::size_t opened_at) {
    while (pos_ < toks_.size()) {
      const std::string& tok = toks_[pos_];
      if (tok == "}") {
        if (stop == Stop::Brace) return attach;
        fail(ErrorKind::UnbalancedBraces, "unmatched '}' at position " + std::to_string(pos_));
      }
      if (stop == Stop::Bracket && tok == "]") return attach;
      if (tok == "{") {
        // Bare group: transparent to the chain.
        attach = parse_group(attach);
      } else if (tok == "^" || tok == "_") {
        std::size_t script_pos = pos_++;
        std::optional<int> inner = parse_script_argument(attach, script_pos);
        if (!attach) attach = inner;
      } else {
        attach = parse_node(attach);
      }
    }
    if (stop == Stop::Brace)
      fail(ErrorKind::UnbalancedBraces, "unclosed '{' at position " + std::to_string(opened_at));
    if (stop == Stop::Bracket)
      fail(ErrorKind::UnbalancedBraces, "unclosed '[' at position " + std::to_string(opened_at));
    return attach;
  }

  std::optional<int> parse_group(std::optional<int> attach) {
    std::size_t open = pos_++;
    std::optional<int> result = parse_sequence(attach, Stop::Brace, open);
    ++pos_;  // '}'
    return result;
  }

  std::optional<int> parse_script_argument(std::optional<int> base, std::size_t script_pos) {
    if (pos_ >= toks_.size() || at("}") || at("^") || at("_"))
      fail(ErrorKind::DanglingScript, "script at position " + std::to_string(script_pos) + " has no argument");
    if (at("{")) return parse_group(base);
    return parse_node(base);
  }

  // One tree node, plus the arguments it owns when it is a command.
  std::optional<int> parse_node(std::optional<int> attach) {
    const int self = static_cast<int>(pos_);
    ann_.node[pos_] = true;
    ann_.parents[pos_] = attach.value_or(kNoParent);
    const std::string& tok = toks_[pos_++];
    if (!is_alpha_command(tok)) return self;

    std::size_t max_groups = SIZE_MAX;
    if (tok == "\\frac") max_groups = 2;
    if (tok == "\\sqrt") {
      max_groups = 1;
      if (at("[")) {
        std::size_t open = pos_++;
        parse_sequence(self, Stop::Bracket, open);
        ++pos_;  // ']'
      }
    }
    for (std::size_t g = 0; g < max_groups && at("{"); ++g) parse_group(self);
    return self;
  }

  std::span<const std::string> toks_;
  ParentAnnotation ann_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Parent annotation of a LaTeX token sequence. Non-structural tokens chain
/// along their baseline; script and command arguments hang off their owner;
/// structural tokens get no parent.
inline ParentAnnotation treeify(std::span<const std::string> tokens) {
  return detail::Annotator(tokens).run();
}

inline ParentAnnotation treeify(const TokenSeq& seq) {
  auto strings = seq.strings();
  return treeify(strings);
}

/// "(0, -1), (1, -1), ...": the tuple text form.
inline std::string format_tuples(const ParentAnnotation& ann) {
  std::string out;
  for (std::size_t i = 0; i < ann.parents.size(); ++i) {
    if (i) out += ", ";
    out += "(" + std::to_string(i) + ", " + std::to_string(ann.parents[i]) + ")";
  }
  return out;
}

/// Checks the annotation invariants against its tokens; returns a description
/// of the first violation, or nullopt.
inline std::optional<std::string> check_annotation(const ParentAnnotation& ann,
                                                   std::span<const std::string> tokens) {
  if (ann.parents.size() != tokens.size() || ann.node.size() != tokens.size())
    return "length mismatch";
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    int p = ann.parents[i];
    if (p != kNoParent && (p < 0 || static_cast<std::size_t>(p) >= i))
      return "parent of " + std::to_string(i) + " does not precede it";
    if (is_structural(tokens[i]) && (p != kNoParent || ann.node[i]))
      return "structural token at " + std::to_string(i) + " is attached";
    if (p != kNoParent && (!ann.node[i] || !ann.node[static_cast<std::size_t>(p)]))
      return "edge at " + std::to_string(i) + " touches a non-node";
  }
  return std::nullopt;
}

struct ExprTree {
  std::vector<int> nodes;                  // ascending positions
  std::vector<int> roots;                  // ascending positions
  std::vector<std::vector<int>> children;  // indexed by position, ascending

  std::size_t edge_count() const {
    std::size_t n = 0;
    for (const auto& c : children) n += c.size();
    return n;
  }
};

inline ExprTree build_tree(const ParentAnnotation& ann) {
  const std::size_t n = ann.parents.size();
  if (ann.node.size() != n) fail(ErrorKind::LengthMismatch, "annotation node flags do not match parents");
  ExprTree tree;
  tree.children.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    if (!ann.node[i]) continue;
    tree.nodes.push_back(static_cast<int>(i));
    int p = ann.parents[i];
    if (p == kNoParent) {
      tree.roots.push_back(static_cast<int>(i));
    } else {
      if (p < 0 || static_cast<std::size_t>(p) >= n || !ann.node[static_cast<std::size_t>(p)])
        fail(ErrorKind::CycleDetected, "parent of " + std::to_string(i) + " is not a tree node");
      tree.children[static_cast<std::size_t>(p)].push_back(static_cast<int>(i));
    }
  }
  // Every node must reach a root; walking parents more than n steps means a cycle.
  for (int v : tree.nodes) {
    int cur = v;
    std::size_t steps = 0;
    while (ann.parents[static_cast<std::size_t>(cur)] != kNoParent) {
      cur = ann.parents[static_cast<std::size_t>(cur)];
      if (++steps > n) fail(ErrorKind::CycleDetected, "cycle through position " + std::to_string(v));
    }
  }
  return tree;
}

/// Maximum, over root-to-leaf paths, of the number of nodes on the path with
/// more than one child.
inline int structural_complexity(const ExprTree& tree) {
  std::vector<int> best(tree.children.size(), 0);
  int result = 0;
  for (int root : tree.roots) {
    // Iterative post-order.
    std::vector<std::pair<int, bool>> stack{{root, false}};
    while (!stack.empty()) {
      auto [v, expanded] = stack.back();
      stack.pop_back();
      const auto& kids = tree.children[static_cast<std::size_t>(v)];
      if (!expanded) {
        stack.emplace_back(v, true);
        for (int c : kids) stack.emplace_back(c, false);
        continue;
      }
      int below = 0;
      for (int c : kids) below = std::max(below, best[static_cast<std::size_t>(c)]);
      best[static_cast<std::size_t>(v)] = below + (kids.size() >= 2 ? 1 : 0);
    }
    result = std::max(result, best[static_cast<std::size_t>(root)]);
  }
  return result;
}

inline bool brackets_balanced(std::span<const std::string> tokens) {
  long depth = 0;
  for (const auto& t : tokens) {
    if (t == "{") ++depth;
    if (t == "}" && --depth < 0) return false;
  }
  return depth == 0;
}

inline bool brackets_balanced(const TokenSeq& seq) {
  long depth = 0;
  const Vocab& v = *seq.vocab();
  for (auto id : seq.ids()) {
    const std::string& t = v.token(id);
    if (t == "{") ++depth;
    if (t == "}" && --depth < 0) return false;
  }
  return depth == 0;
}

inline int complexity_of(std::span<const std::string> tokens) {
  return structural_complexity(build_tree(treeify(tokens)));
}

}  // namespace tamer
