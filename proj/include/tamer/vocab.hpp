#pragma once

#include <cctype>
#include <cstddef>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tamer/crohme_symbols.hpp"
#include "tamer/error.hpp"

namespace tamer {

using TokenId = int;

enum class TokenClass { Structural, Command, Symbol };

inline bool is_structural(std::string_view token) {
  return token == "{" || token == "}" || token == "^" || token == "_";
}

inline TokenClass classify(std::string_view token) {
  if (is_structural(token)) return TokenClass::Structural;
  if (token.size() > 1 && token.front() == '\\') return TokenClass::Command;
  return TokenClass::Symbol;
}

/// Token vocabulary. Ids 0..2 are reserved for SOS, EOS and PAD; the file
/// format lists the remaining tokens one per line, so line k holds id k + 3.
class Vocab {
 public:
  static constexpr TokenId kSos = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kPad = 2;
  static constexpr TokenId kNumReserved = 3;

  explicit Vocab(std::span<const std::string> symbols) {
    tokens_ = {"<sos>", "<eos>", "<pad>"};
    for (const auto& s : symbols) tokens_.push_back(s);
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (tokens_[i].empty()) fail(ErrorKind::InvalidConfig, "empty token in vocabulary");
      auto [_, inserted] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
      if (!inserted) fail(ErrorKind::InvalidConfig, "duplicate token '" + tokens_[i] + "'");
      classes_.push_back(i < kNumReserved ? TokenClass::Symbol : classify(tokens_[i]));
    }
  }

  explicit Vocab(const std::vector<std::string>& symbols)
      : Vocab(std::span<const std::string>(symbols)) {}

  static std::shared_ptr<const Vocab> crohme() {
    static const auto instance = [] {
      std::vector<std::string> symbols(kCrohmeSymbols.begin(), kCrohmeSymbols.end());
      return std::make_shared<const Vocab>(symbols);
    }();
    return instance;
  }

  /// Sorted set of the distinct tokens appearing in `sequences`.
  static std::shared_ptr<const Vocab> from_corpus(
      std::span<const std::vector<std::string>> sequences) {
    std::set<std::string> seen;
    for (const auto& seq : sequences) seen.insert(seq.begin(), seq.end());
    return std::make_shared<const Vocab>(std::vector<std::string>(seen.begin(), seen.end()));
  }

  static std::shared_ptr<const Vocab> load(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::IoError, "cannot open vocabulary file " + path);
    std::vector<std::string> symbols;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      symbols.push_back(line);
    }
    return std::make_shared<const Vocab>(symbols);
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::IoError, "cannot write vocabulary file " + path);
    for (std::size_t i = kNumReserved; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
  }

  std::size_t size() const noexcept { return tokens_.size(); }

  std::optional<TokenId> find(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  TokenClass token_class(TokenId id) const { return classes_.at(static_cast<std::size_t>(id)); }
  bool structural(TokenId id) const { return token_class(id) == TokenClass::Structural; }
  bool reserved(TokenId id) const { return id >= 0 && id < kNumReserved; }

  /// Non-reserved tokens in id order.
  std::vector<std::string> symbols() const {
    return {tokens_.begin() + kNumReserved, tokens_.end()};
  }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::vector<TokenClass> classes_;
  std::unordered_map<std::string, TokenId> index_;
};

using VocabPtr = std::shared_ptr<const Vocab>;

/// A validated token-id sequence bound to its vocabulary. Position i is the
/// node identifier used by the parent annotation.
class TokenSeq {
 public:
  TokenSeq() = default;

  TokenSeq(std::vector<TokenId> ids, VocabPtr vocab) : ids_(std::move(ids)), vocab_(std::move(vocab)) {
    if (!vocab_) fail(ErrorKind::InvalidConfig, "TokenSeq requires a vocabulary");
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (ids_[i] < 0 || static_cast<std::size_t>(ids_[i]) >= vocab_->size())
        fail(ErrorKind::UnknownToken, "id " + std::to_string(ids_[i]) + " out of range at position " +
                                          std::to_string(i));
    }
  }

  static TokenSeq from_tokens(std::span<const std::string> tokens, VocabPtr vocab) {
    std::vector<TokenId> ids;
    ids.reserve(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      auto id = vocab->find(tokens[i]);
      if (!id) throw UnknownTokenError(tokens[i], i);
      ids.push_back(*id);
    }
    return TokenSeq(std::move(ids), std::move(vocab));
  }

  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }
  TokenId operator[](std::size_t i) const { return ids_[i]; }
  const std::vector<TokenId>& ids() const noexcept { return ids_; }
  const VocabPtr& vocab() const noexcept { return vocab_; }

  std::vector<std::string> strings() const {
    std::vector<std::string> out;
    out.reserve(ids_.size());
    for (auto id : ids_) out.push_back(vocab_->token(id));
    return out;
  }

  bool operator==(const TokenSeq& other) const {
    if (ids_ != other.ids_) return false;
    if (vocab_ == other.vocab_) return true;
    return vocab_ && other.vocab_ && *vocab_ == *other.vocab_;
  }

 private:
  std::vector<TokenId> ids_;
  VocabPtr vocab_;
};

inline std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> chunks;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) chunks.emplace_back(text.substr(start, i - start));
  }
  return chunks;
}

/// Scan unspaced LaTeX: a backslash plus its maximal alphabetic run is one
/// token (a backslash before a non-letter takes exactly that one character,
/// as in "\{"); any other non-space character is a token of its own.
inline std::vector<std::string> scan_raw(std::string_view text) {
  std::vector<std::string> chunks;
  std::size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (c == '\\' && i + 1 < text.size()) {
      std::size_t j = i + 1;
      while (j < text.size() && std::isalpha(static_cast<unsigned char>(text[j]))) ++j;
      if (j == i + 1) j = i + 2;
      chunks.emplace_back(text.substr(i, j - i));
      i = j;
      continue;
    }
    chunks.emplace_back(1, c);
    ++i;
  }
  return chunks;
}

inline TokenSeq tokenize_spaced(std::string_view text, VocabPtr vocab) {
  return TokenSeq::from_tokens(split_whitespace(text), std::move(vocab));
}

inline TokenSeq tokenize_raw(std::string_view text, VocabPtr vocab) {
  return TokenSeq::from_tokens(scan_raw(text), std::move(vocab));
}

inline std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

inline std::string detokenize(const TokenSeq& seq) {
  auto strings = seq.strings();
  return join_tokens(strings);
}

}  // namespace tamer
