#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace unisp {

using TokenId = std::uint32_t;

/// Bidirectional token <-> id map. Ids are dense and assigned in insertion order.
class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(const std::vector<std::string>& tokens);

  /// Returns the existing id when the token is already present.
  TokenId add(const std::string& token);
  std::optional<TokenId> find(std::string_view token) const;
  /// Throws ContractViolation for unknown tokens.
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  bool contains(std::string_view token) const { return find(token).has_value(); }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  /// FNV-1a 64 over the ordered token list, as 16 hex digits.
  std::string hash() const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

inline constexpr std::string_view kBosToken = "<s>";
inline constexpr std::string_view kEosToken = "</s>";
inline constexpr std::string_view kUnkToken = "<unk>";

/// Target vocabularies start with <s> (id 0) and </s> (id 1).
inline constexpr TokenId kBos = 0;
inline constexpr TokenId kEos = 1;
/// Source vocabularies start with <unk> (id 0).
inline constexpr TokenId kUnk = 0;

Vocab make_target_vocab(const std::vector<std::string>& tokens);
Vocab make_source_vocab(const std::vector<std::string>& words);

/// Maps words to ids, unknown words to <unk>.
std::vector<TokenId> encode_source(const Vocab& vocab, std::span<const std::string> words);

}  // namespace unisp
