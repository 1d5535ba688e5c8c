#include "unisp/knowledge_base.hpp"

#include <cmath>
#include <cstdio>

#include "unisp/error.hpp"

namespace unisp {

std::string to_string(ValueKind kind) {
  switch (kind) {
    case ValueKind::kNumber: return "number";
    case ValueKind::kString: return "string";
    case ValueKind::kEntity: return "entity";
  }
  return "unknown";
}

ValueKind value_kind_from_string(const std::string& text) {
  if (text == "number") return ValueKind::kNumber;
  if (text == "string") return ValueKind::kString;
  if (text == "entity" || text == "entity-ref") return ValueKind::kEntity;
  throw InputError("unknown property kind '" + text + "'");
}

std::strong_ordering Value::operator<=>(const Value& o) const {
  if (kind != o.kind) return kind <=> o.kind;
  if (kind == ValueKind::kNumber) {
    if (number < o.number) return std::strong_ordering::less;
    if (number > o.number) return std::strong_ordering::greater;
    return std::strong_ordering::equal;
  }
  return text <=> o.text;
}

std::string to_string(const Value& value) {
  if (value.kind != ValueKind::kNumber) return value.text;
  if (std::floor(value.number) == value.number && std::abs(value.number) < 1e15) {
    return std::to_string(static_cast<long long>(value.number));
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value.number);
  return buf;
}

nlohmann::json value_to_json(const Value& value) {
  if (value.kind == ValueKind::kNumber) {
    if (std::floor(value.number) == value.number && std::abs(value.number) < 1e15) {
      return static_cast<long long>(value.number);
    }
    return value.number;
  }
  return value.text;
}

Value value_from_json(const nlohmann::json& j) {
  if (j.is_number()) return Value::of_number(j.get<double>());
  if (j.is_string()) {
    auto s = j.get<std::string>();
    if (is_entity_id_token(s)) return Value::of_entity(std::move(s));
    return Value::of_string(std::move(s));
  }
  throw InputError("value must be a JSON number or string, got " + j.dump());
}

namespace {
std::size_t count_parts(const std::string& token) {
  if (token.empty() || token.front() == '.' || token.back() == '.') return 0;
  std::size_t parts = 1;
  for (std::size_t i = 0; i < token.size(); ++i) {
    if (token[i] == '.') {
      if (i + 1 < token.size() && token[i + 1] == '.') return 0;
      ++parts;
    }
  }
  return parts;
}
}  // namespace

bool is_entity_type_token(const std::string& token) {
  return token.rfind("en.", 0) == 0 && count_parts(token) == 2;
}

bool is_entity_id_token(const std::string& token) {
  return token.rfind("en.", 0) == 0 && count_parts(token) == 3;
}

std::string entity_surface_name(const std::string& entity_id) {
  std::string name = entity_id.substr(entity_id.rfind('.') + 1);
  for (char& c : name) {
    if (c == '_') c = ' ';
  }
  return name;
}

void KnowledgeBase::validate() const {
  if (!is_entity_type_token(entity_type)) {
    throw InputError("knowledge base '" + domain_id + "': entity type '" + entity_type +
                     "' is not of the form en.<type>");
  }
  for (const auto& [id, props] : entities) {
    if (props.size() != properties.size()) {
      throw InputError("entity '" + id + "' defines " + std::to_string(props.size()) +
                       " properties, schema has " + std::to_string(properties.size()));
    }
    for (const auto& [name, value] : props) {
      auto it = properties.find(name);
      if (it == properties.end()) throw InputError("entity '" + id + "' has unknown property '" + name + "'");
      if (it->second != value.kind) {
        throw InputError("entity '" + id + "' property '" + name + "' should be " +
                         to_string(it->second) + ", got " + to_string(value.kind));
      }
    }
  }
}

const Value& KnowledgeBase::property_of(const std::string& entity, const std::string& property) const {
  auto it = entities.find(entity);
  if (it == entities.end()) throw ExecutionError("unknown entity '" + entity + "'");
  auto pit = it->second.find(property);
  if (pit == it->second.end()) throw ExecutionError("unknown property '" + property + "'");
  return pit->second;
}

nlohmann::json to_json(const KnowledgeBase& kb) {
  nlohmann::json props = nlohmann::json::object();
  for (const auto& [name, kind] : kb.properties) props[name] = to_string(kind);
  nlohmann::json ents = nlohmann::json::object();
  for (const auto& [id, values] : kb.entities) {
    nlohmann::json row = nlohmann::json::object();
    for (const auto& [name, value] : values) row[name] = value_to_json(value);
    ents[id] = std::move(row);
  }
  return {{"domain_id", kb.domain_id},
          {"entity_type", kb.entity_type},
          {"properties", std::move(props)},
          {"entities", std::move(ents)}};
}

KnowledgeBase kb_from_json(const nlohmann::json& j) {
  try {
    KnowledgeBase kb;
    kb.domain_id = j.at("domain_id").get<std::string>();
    kb.entity_type = j.at("entity_type").get<std::string>();
    for (const auto& [name, kind] : j.at("properties").items()) {
      kb.properties[name] = value_kind_from_string(kind.get<std::string>());
    }
    for (const auto& [id, row] : j.at("entities").items()) {
      auto& dst = kb.entities[id];
      for (const auto& [name, value] : row.items()) {
        Value v = value_from_json(value);
        auto it = kb.properties.find(name);
        // Strings in a string-kind column stay strings even when shaped like ids.
        if (it != kb.properties.end() && it->second == ValueKind::kString && v.kind == ValueKind::kEntity) {
          v.kind = ValueKind::kString;
        }
        dst[name] = std::move(v);
      }
    }
    kb.validate();
    return kb;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed knowledge base JSON: ") + e.what());
  }
}

}  // namespace unisp
