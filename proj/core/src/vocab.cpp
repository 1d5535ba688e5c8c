#include "unisp/vocab.hpp"

#include <cstdio>

#include "unisp/error.hpp"

namespace unisp {

Vocab::Vocab(const std::vector<std::string>& tokens) {
  for (const auto& t : tokens) add(t);
}

TokenId Vocab::add(const std::string& token) {
  if (auto it = ids_.find(token); it != ids_.end()) return it->second;
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::id(std::string_view token) const {
  if (auto id = find(token)) return *id;
  throw ContractViolation("token '" + std::string(token) + "' is not in the vocabulary");
}

const std::string& Vocab::token(TokenId id) const {
  if (id >= tokens_.size()) throw ContractViolation("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::string Vocab::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 1099511628211ULL;
  };
  for (const auto& t : tokens_) {
    for (char c : t) mix(static_cast<unsigned char>(c));
    mix(0);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Vocab make_target_vocab(const std::vector<std::string>& tokens) {
  Vocab v;
  v.add(std::string(kBosToken));
  v.add(std::string(kEosToken));
  for (const auto& t : tokens) v.add(t);
  return v;
}

Vocab make_source_vocab(const std::vector<std::string>& words) {
  Vocab v;
  v.add(std::string(kUnkToken));
  for (const auto& w : words) v.add(w);
  return v;
}

std::vector<TokenId> encode_source(const Vocab& vocab, std::span<const std::string> words) {
  std::vector<TokenId> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(vocab.find(w).value_or(kUnk));
  return ids;
}

}  // namespace unisp
