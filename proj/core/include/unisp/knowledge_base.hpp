#pragma once

#include <compare>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace unisp {

enum class ValueKind { kNumber, kString, kEntity };

std::string to_string(ValueKind kind);
ValueKind value_kind_from_string(const std::string& text);

/// A property value or an answer element. Entity references carry their id in `text`.
struct Value {
  ValueKind kind = ValueKind::kNumber;
  double number = 0.0;
  std::string text;

  static Value of_number(double v) { return {ValueKind::kNumber, v, {}}; }
  static Value of_string(std::string s) { return {ValueKind::kString, 0.0, std::move(s)}; }
  static Value of_entity(std::string id) { return {ValueKind::kEntity, 0.0, std::move(id)}; }

  bool operator==(const Value& o) const {
    return kind == o.kind && (kind == ValueKind::kNumber ? number == o.number : text == o.text);
  }
  std::strong_ordering operator<=>(const Value& o) const;
};

/// Canonical text: integers without a fraction, entity ids and strings verbatim.
std::string to_string(const Value& value);
nlohmann::json value_to_json(const Value& value);
/// JSON numbers become numbers; strings shaped like `en.type.name` become entity refs.
Value value_from_json(const nlohmann::json& j);

/// `en.<type>` (two dot-separated parts).
bool is_entity_type_token(const std::string& token);
/// `en.<type>.<name>` (three dot-separated parts).
bool is_entity_id_token(const std::string& token);
/// Human surface form of an entity id: last component with '_' replaced by spaces.
std::string entity_surface_name(const std::string& entity_id);

/// Single-type relational knowledge base: one schema, one entity table.
/// Immutable once validated; safe to read from many threads.
struct KnowledgeBase {
  std::string domain_id;
  std::string entity_type;
  std::map<std::string, ValueKind> properties;
  std::map<std::string, std::map<std::string, Value>> entities;

  /// Throws InputError when an entity misses a property, defines an unknown one,
  /// or stores a value of the wrong kind.
  void validate() const;
  bool has_entity(const std::string& id) const { return entities.count(id) != 0; }
  const Value& property_of(const std::string& entity, const std::string& property) const;
  bool operator==(const KnowledgeBase&) const = default;
};

nlohmann::json to_json(const KnowledgeBase& kb);
KnowledgeBase kb_from_json(const nlohmann::json& j);

}  // namespace unisp
