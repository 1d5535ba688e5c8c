#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "unisp/knowledge_base.hpp"

namespace unisp {

/// Placeholder (e0, e1, ...) -> entity id.
using EntityMap = std::map<std::string, std::string>;

enum class Comparator { kEq, kNe, kLt, kLe, kGt, kGe };
enum class SuperlativeKind { kArgmax, kArgmin };
enum class ExprKind { kTypeSet, kFilter, kSuperlative, kGetProperty, kCount };

std::string_view to_string(Comparator c);
std::optional<Comparator> comparator_from_token(std::string_view token);
bool is_ordered(Comparator c);
bool is_placeholder_token(std::string_view token);

/// Right-hand side of a filter.
struct ValueExpr {
  enum class Kind { kNumber, kString, kPlaceholder, kEntity, kGetProperty };
  Kind kind = Kind::kNumber;
  double number = 0.0;
  std::string text;      // string literal, placeholder, entity id, or getProperty source
  std::string property;  // kGetProperty only
};

/// Immutable program tree; subtrees are shared.
struct Expr {
  ExprKind kind = ExprKind::kTypeSet;
  std::string name;  // entity type for kTypeSet, property otherwise
  Comparator comparator = Comparator::kEq;
  SuperlativeKind superlative = SuperlativeKind::kArgmax;
  std::shared_ptr<const Expr> source;
  ValueExpr rhs;

  static Expr type_set(std::string entity_type);
  static Expr filter(Expr source, std::string property, Comparator cmp, ValueExpr rhs);
  static Expr superlative_of(Expr source, SuperlativeKind kind, std::string property);
  static Expr get_property(Expr source, std::string property);
  static Expr count(Expr source);
};

struct ParseOutcome {
  std::optional<Expr> expr;
  std::size_t error_position = 0;
  std::string message;
};

std::vector<std::string> split_tokens(std::string_view text);
std::string join_tokens(std::span<const std::string> tokens);

/// Non-throwing parse of a prefix-form program (no end symbol).
ParseOutcome try_parse_program(std::span<const std::string> tokens);
/// Throws ParseError carrying the first offending token position.
Expr parse_program(std::span<const std::string> tokens);
/// Prefix form; only ValueExpr getProperty sub-programs are parenthesised.
std::vector<std::string> serialize(const Expr& expr);

/// Result of executing a program.
struct Denotation {
  enum class Kind { kEntities, kValues, kCount };
  Kind kind = Kind::kEntities;
  std::vector<Value> items;  // sorted, unique; entity ids are kEntity values
  std::int64_t count = 0;

  static Denotation entities(std::vector<std::string> ids);
  static Denotation values(std::vector<Value> values);
  static Denotation of_count(std::int64_t n);

  std::size_t size() const { return kind == Kind::kCount ? 1 : items.size(); }
  bool empty() const { return kind != Kind::kCount && items.empty(); }
  bool operator==(const Denotation&) const = default;
};

std::string_view to_string(Denotation::Kind kind);
nlohmann::json to_json(const Denotation& d);
Denotation denotation_from_json(const nlohmann::json& j);

/// Pure and deterministic. Throws ExecutionError for unbound placeholders,
/// unknown types or properties, and kind mismatches.
Denotation execute(const Expr& expr, const KnowledgeBase& kb, const EntityMap& entity_map);
std::optional<Denotation> try_execute(const Expr& expr, const KnowledgeBase& kb,
                                      const EntityMap& entity_map);

/// Strips a trailing end symbol, parses, and executes. nullopt on any failure.
std::optional<Denotation> run_program(std::span<const std::string> tokens, const KnowledgeBase& kb,
                                      const EntityMap& entity_map);

/// 1 iff both answers are equal as sets; a failed prediction scores 0.
int hard_match(const std::optional<Denotation>& predicted, const Denotation& gold);
/// F1 between answer sets (a count n is the singleton {n}). Empty vs empty is 1.
double soft_f1(const std::optional<Denotation>& predicted, const Denotation& gold);
/// 1 iff token sequences are identical once trailing end symbols are removed.
int string_match_reward(std::span<const std::string> predicted, std::span<const std::string> gold);

}  // namespace unisp
