#include "unisp/program.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <set>

#include "unisp/error.hpp"
#include "unisp/vocab.hpp"

namespace unisp {

std::string_view to_string(Comparator c) {
  switch (c) {
    case Comparator::kEq: return "=";
    case Comparator::kNe: return "!=";
    case Comparator::kLt: return "<";
    case Comparator::kLe: return "<=";
    case Comparator::kGt: return ">";
    case Comparator::kGe: return ">=";
  }
  return "?";
}

std::optional<Comparator> comparator_from_token(std::string_view token) {
  if (token == "=") return Comparator::kEq;
  if (token == "!=") return Comparator::kNe;
  if (token == "<") return Comparator::kLt;
  if (token == "<=") return Comparator::kLe;
  if (token == ">") return Comparator::kGt;
  if (token == ">=") return Comparator::kGe;
  return std::nullopt;
}

bool is_ordered(Comparator c) { return c != Comparator::kEq && c != Comparator::kNe; }

bool is_placeholder_token(std::string_view token) {
  if (token.size() < 2 || token[0] != 'e') return false;
  return std::all_of(token.begin() + 1, token.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

Expr Expr::type_set(std::string entity_type) {
  Expr e;
  e.kind = ExprKind::kTypeSet;
  e.name = std::move(entity_type);
  return e;
}

Expr Expr::filter(Expr source, std::string property, Comparator cmp, ValueExpr rhs) {
  Expr e;
  e.kind = ExprKind::kFilter;
  e.source = std::make_shared<const Expr>(std::move(source));
  e.name = std::move(property);
  e.comparator = cmp;
  e.rhs = std::move(rhs);
  return e;
}

Expr Expr::superlative_of(Expr source, SuperlativeKind kind, std::string property) {
  Expr e;
  e.kind = ExprKind::kSuperlative;
  e.source = std::make_shared<const Expr>(std::move(source));
  e.superlative = kind;
  e.name = std::move(property);
  return e;
}

Expr Expr::get_property(Expr source, std::string property) {
  Expr e;
  e.kind = ExprKind::kGetProperty;
  e.source = std::make_shared<const Expr>(std::move(source));
  e.name = std::move(property);
  return e;
}

Expr Expr::count(Expr source) {
  Expr e;
  e.kind = ExprKind::kCount;
  e.source = std::make_shared<const Expr>(std::move(source));
  return e;
}

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

namespace {

constexpr int kMaxDepth = 64;

bool parse_number(const std::string& token, double& out) {
  if (token.empty()) return false;
  const char c = token[0];
  if (!(std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+' || c == '.')) return false;
  char* end = nullptr;
  out = std::strtod(token.c_str(), &end);
  return end == token.c_str() + token.size();
}

bool is_keyword(const std::string& t) {
  return t == "filter" || t == "argmax" || t == "argmin" || t == "getProperty" || t == "count" ||
         t == "(" || t == ")" || comparator_from_token(t).has_value();
}

bool is_identifier(const std::string& t) {
  if (t.empty() || is_keyword(t) || is_placeholder_token(t) || t.rfind("en.", 0) == 0) return false;
  if (t == kBosToken || t == kEosToken || t == kUnkToken) return false;
  if (!(std::isalpha(static_cast<unsigned char>(t[0])) || t[0] == '_')) return false;
  return std::all_of(t.begin(), t.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '!';
  });
}

struct Failure {
  std::size_t position;
  std::string message;
};

class Parser {
 public:
  explicit Parser(std::span<const std::string> tokens) : tokens_(tokens) {}

  ParseOutcome run() {
    ParseOutcome out;
    try {
      Expr e = expr(0);
      if (pos_ != tokens_.size()) fail("unexpected trailing token '" + tokens_[pos_] + "'");
      out.expr = std::move(e);
    } catch (const Failure& f) {
      out.error_position = f.position;
      out.message = f.message;
    }
    return out;
  }

 private:
  [[noreturn]] void fail(const std::string& message) const { throw Failure{pos_, message}; }

  const std::string& next(const char* expected) {
    if (pos_ >= tokens_.size()) fail(std::string("unexpected end of program, expected ") + expected);
    return tokens_[pos_++];
  }

  std::string property() {
    if (pos_ < tokens_.size() && !is_identifier(tokens_[pos_])) {
      fail("expected a property name, got '" + tokens_[pos_] + "'");
    }
    return next("a property name");
  }

  Expr expr(int depth) {
    if (depth > kMaxDepth) fail("program nested too deeply");
    const std::size_t at = pos_;
    const std::string& t = next("an expression");
    if (is_entity_type_token(t)) return Expr::type_set(t);
    if (t == "filter") {
      Expr src = expr(depth + 1);
      std::string prop = property();
      if (pos_ < tokens_.size() && !comparator_from_token(tokens_[pos_])) {
        fail("expected a comparator, got '" + tokens_[pos_] + "'");
      }
      const Comparator cmp = *comparator_from_token(next("a comparator"));
      ValueExpr rhs = value();
      return Expr::filter(std::move(src), std::move(prop), cmp, std::move(rhs));
    }
    if (t == "argmax" || t == "argmin") {
      Expr src = expr(depth + 1);
      std::string prop = property();
      return Expr::superlative_of(std::move(src),
                                  t == "argmax" ? SuperlativeKind::kArgmax : SuperlativeKind::kArgmin,
                                  std::move(prop));
    }
    if (t == "getProperty") {
      Expr src = expr(depth + 1);
      std::string prop = property();
      return Expr::get_property(std::move(src), std::move(prop));
    }
    if (t == "count") return Expr::count(expr(depth + 1));
    pos_ = at;
    fail("expected an expression, got '" + t + "'");
  }

  ValueExpr value() {
    const std::size_t at = pos_;
    const std::string& t = next("a value");
    ValueExpr v;
    if (t == "(") {
      if (pos_ >= tokens_.size() || tokens_[pos_] != "getProperty") {
        fail("expected getProperty after '('");
      }
      ++pos_;
      const std::string& src = next("an entity placeholder");
      if (!is_placeholder_token(src) && !is_entity_id_token(src)) {
        --pos_;
        fail("getProperty value source must be a placeholder or entity id, got '" + src + "'");
      }
      v.kind = ValueExpr::Kind::kGetProperty;
      v.text = src;
      v.property = property();
      if (pos_ >= tokens_.size() || tokens_[pos_] != ")") fail("expected ')'");
      ++pos_;
      return v;
    }
    if (is_placeholder_token(t)) {
      v.kind = ValueExpr::Kind::kPlaceholder;
      v.text = t;
      return v;
    }
    if (is_entity_id_token(t)) {
      v.kind = ValueExpr::Kind::kEntity;
      v.text = t;
      return v;
    }
    double number = 0.0;
    if (parse_number(t, number)) {
      v.kind = ValueExpr::Kind::kNumber;
      v.number = number;
      return v;
    }
    if (is_identifier(t)) {
      v.kind = ValueExpr::Kind::kString;
      v.text = t;
      return v;
    }
    pos_ = at;
    fail("expected a value, got '" + t + "'");
  }

  std::span<const std::string> tokens_;
  std::size_t pos_ = 0;
};

void serialize_into(const Expr& e, std::vector<std::string>& out) {
  switch (e.kind) {
    case ExprKind::kTypeSet:
      out.push_back(e.name);
      return;
    case ExprKind::kFilter:
      out.emplace_back("filter");
      serialize_into(*e.source, out);
      out.push_back(e.name);
      out.emplace_back(to_string(e.comparator));
      switch (e.rhs.kind) {
        case ValueExpr::Kind::kNumber: out.push_back(to_string(Value::of_number(e.rhs.number))); break;
        case ValueExpr::Kind::kString:
        case ValueExpr::Kind::kPlaceholder:
        case ValueExpr::Kind::kEntity: out.push_back(e.rhs.text); break;
        case ValueExpr::Kind::kGetProperty:
          out.insert(out.end(), {"(", "getProperty", e.rhs.text, e.rhs.property, ")"});
          break;
      }
      return;
    case ExprKind::kSuperlative:
      out.emplace_back(e.superlative == SuperlativeKind::kArgmax ? "argmax" : "argmin");
      serialize_into(*e.source, out);
      out.push_back(e.name);
      return;
    case ExprKind::kGetProperty:
      out.emplace_back("getProperty");
      serialize_into(*e.source, out);
      out.push_back(e.name);
      return;
    case ExprKind::kCount:
      out.emplace_back("count");
      serialize_into(*e.source, out);
      return;
  }
}

}  // namespace

ParseOutcome try_parse_program(std::span<const std::string> tokens) { return Parser(tokens).run(); }

Expr parse_program(std::span<const std::string> tokens) {
  ParseOutcome out = try_parse_program(tokens);
  if (!out.expr) throw ParseError(out.error_position, out.message);
  return std::move(*out.expr);
}

std::vector<std::string> serialize(const Expr& expr) {
  std::vector<std::string> out;
  serialize_into(expr, out);
  return out;
}

// ---------------------------------------------------------------------------
// Denotations

namespace {
template <typename T>
void sort_unique(std::vector<T>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}
}  // namespace

Denotation Denotation::entities(std::vector<std::string> ids) {
  Denotation d;
  d.kind = Kind::kEntities;
  d.items.reserve(ids.size());
  for (auto& id : ids) d.items.push_back(Value::of_entity(std::move(id)));
  sort_unique(d.items);
  return d;
}

Denotation Denotation::values(std::vector<Value> values) {
  Denotation d;
  d.kind = Kind::kValues;
  d.items = std::move(values);
  sort_unique(d.items);
  return d;
}

Denotation Denotation::of_count(std::int64_t n) {
  Denotation d;
  d.kind = Kind::kCount;
  d.count = n;
  return d;
}

std::string_view to_string(Denotation::Kind kind) {
  switch (kind) {
    case Denotation::Kind::kEntities: return "entities";
    case Denotation::Kind::kValues: return "values";
    case Denotation::Kind::kCount: return "count";
  }
  return "?";
}

nlohmann::json to_json(const Denotation& d) {
  nlohmann::json values = nlohmann::json::array();
  if (d.kind == Denotation::Kind::kCount) {
    values.push_back(d.count);
  } else {
    for (const auto& v : d.items) values.push_back(value_to_json(v));
  }
  return {{"kind", std::string(to_string(d.kind))}, {"values", std::move(values)}};
}

Denotation denotation_from_json(const nlohmann::json& j) {
  try {
    const auto kind = j.at("kind").get<std::string>();
    const auto& values = j.at("values");
    if (kind == "count") {
      if (values.size() != 1 || !values[0].is_number_integer()) {
        throw InputError("count denotation must hold exactly one integer");
      }
      return Denotation::of_count(values[0].get<std::int64_t>());
    }
    if (kind == "entities") {
      std::vector<std::string> ids;
      for (const auto& v : values) ids.push_back(v.get<std::string>());
      return Denotation::entities(std::move(ids));
    }
    if (kind == "values") {
      std::vector<Value> vals;
      for (const auto& v : values) vals.push_back(value_from_json(v));
      return Denotation::values(std::move(vals));
    }
    throw InputError("unknown denotation kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed denotation: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Execution

namespace {

class Executor {
 public:
  Executor(const KnowledgeBase& kb, const EntityMap& map) : kb_(kb), map_(map) {}

  Denotation run(const Expr& e) {
    switch (e.kind) {
      case ExprKind::kTypeSet: {
        if (e.name != kb_.entity_type) {
          throw ExecutionError("entity type '" + e.name + "' is not in knowledge base '" + kb_.domain_id + "'");
        }
        std::vector<std::string> ids;
        ids.reserve(kb_.entities.size());
        for (const auto& [id, _] : kb_.entities) ids.push_back(id);
        return Denotation::entities(std::move(ids));
      }
      case ExprKind::kFilter: {
        const Denotation src = entities_of(*e.source, "filter");
        const ValueKind kind = property_kind(e.name);
        if (is_ordered(e.comparator) && kind != ValueKind::kNumber) {
          throw ExecutionError("ordered comparison on non-numeric property '" + e.name + "'");
        }
        const Value rhs = resolve(e.rhs);
        if (rhs.kind != kind) {
          throw ExecutionError("cannot compare " + to_string(kind) + " property '" + e.name +
                               "' with a " + to_string(rhs.kind));
        }
        std::vector<std::string> kept;
        for (const Value& ent : src.items) {
          if (compare(kb_.property_of(ent.text, e.name), e.comparator, rhs)) kept.push_back(ent.text);
        }
        return Denotation::entities(std::move(kept));
      }
      case ExprKind::kSuperlative: {
        const Denotation src = entities_of(*e.source, "superlative");
        if (property_kind(e.name) != ValueKind::kNumber) {
          throw ExecutionError("superlative over non-numeric property '" + e.name + "'");
        }
        std::vector<std::string> best;
        double extreme = 0.0;
        for (const Value& ent : src.items) {
          const double v = kb_.property_of(ent.text, e.name).number;
          const bool improves = best.empty() ||
                                (e.superlative == SuperlativeKind::kArgmax ? v > extreme : v < extreme);
          if (improves) {
            best.clear();
            extreme = v;
          }
          if (best.empty() || v == extreme) best.push_back(ent.text);
        }
        return Denotation::entities(std::move(best));
      }
      case ExprKind::kGetProperty: {
        const Denotation src = entities_of(*e.source, "getProperty");
        property_kind(e.name);
        std::vector<Value> vals;
        for (const Value& ent : src.items) vals.push_back(kb_.property_of(ent.text, e.name));
        return Denotation::values(std::move(vals));
      }
      case ExprKind::kCount: {
        const Denotation src = run(*e.source);
        if (src.kind == Denotation::Kind::kCount) throw ExecutionError("count of a count");
        return Denotation::of_count(static_cast<std::int64_t>(src.items.size()));
      }
    }
    throw ExecutionError("unknown expression kind");
  }

 private:
  Denotation entities_of(const Expr& e, const char* op) {
    Denotation d = run(e);
    if (d.kind != Denotation::Kind::kEntities) {
      throw ExecutionError(std::string(op) + " requires a set of entities");
    }
    return d;
  }

  ValueKind property_kind(const std::string& name) const {
    auto it = kb_.properties.find(name);
    if (it == kb_.properties.end()) {
      throw ExecutionError("unknown property '" + name + "' in knowledge base '" + kb_.domain_id + "'");
    }
    return it->second;
  }

  const std::string& bound(const std::string& placeholder) const {
    auto it = map_.find(placeholder);
    if (it == map_.end()) throw ExecutionError("unbound placeholder '" + placeholder + "'");
    return it->second;
  }

  Value resolve(const ValueExpr& v) const {
    switch (v.kind) {
      case ValueExpr::Kind::kNumber: return Value::of_number(v.number);
      case ValueExpr::Kind::kString: return Value::of_string(v.text);
      case ValueExpr::Kind::kPlaceholder: return Value::of_entity(bound(v.text));
      case ValueExpr::Kind::kEntity: return Value::of_entity(v.text);
      case ValueExpr::Kind::kGetProperty: {
        const std::string& id = is_placeholder_token(v.text) ? bound(v.text) : v.text;
        property_kind(v.property);
        return kb_.property_of(id, v.property);
      }
    }
    throw ExecutionError("unknown value kind");
  }

  static bool compare(const Value& lhs, Comparator cmp, const Value& rhs) {
    switch (cmp) {
      case Comparator::kEq: return lhs == rhs;
      case Comparator::kNe: return !(lhs == rhs);
      case Comparator::kLt: return lhs.number < rhs.number;
      case Comparator::kLe: return lhs.number <= rhs.number;
      case Comparator::kGt: return lhs.number > rhs.number;
      case Comparator::kGe: return lhs.number >= rhs.number;
    }
    return false;
  }

  const KnowledgeBase& kb_;
  const EntityMap& map_;
};

std::vector<Value> as_set(const Denotation& d) {
  if (d.kind == Denotation::Kind::kCount) return {Value::of_number(static_cast<double>(d.count))};
  return d.items;
}

}  // namespace

Denotation execute(const Expr& expr, const KnowledgeBase& kb, const EntityMap& entity_map) {
  return Executor(kb, entity_map).run(expr);
}

std::optional<Denotation> try_execute(const Expr& expr, const KnowledgeBase& kb,
                                      const EntityMap& entity_map) {
  try {
    return execute(expr, kb, entity_map);
  } catch (const ExecutionError&) {
    return std::nullopt;
  }
}

std::optional<Denotation> run_program(std::span<const std::string> tokens, const KnowledgeBase& kb,
                                      const EntityMap& entity_map) {
  while (!tokens.empty() && tokens.back() == kEosToken) tokens = tokens.first(tokens.size() - 1);
  ParseOutcome parsed = try_parse_program(tokens);
  if (!parsed.expr) return std::nullopt;
  return try_execute(*parsed.expr, kb, entity_map);
}

int hard_match(const std::optional<Denotation>& predicted, const Denotation& gold) {
  if (!predicted) return 0;
  return as_set(*predicted) == as_set(gold) ? 1 : 0;
}

double soft_f1(const std::optional<Denotation>& predicted, const Denotation& gold) {
  if (!predicted) return 0.0;
  const std::vector<Value> p = as_set(*predicted);
  const std::vector<Value> g = as_set(gold);
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::vector<Value> common;
  std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(common));
  if (common.empty()) return 0.0;
  const double precision = static_cast<double>(common.size()) / static_cast<double>(p.size());
  const double recall = static_cast<double>(common.size()) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

int string_match_reward(std::span<const std::string> predicted, std::span<const std::string> gold) {
  auto strip = [](std::span<const std::string> s) {
    while (!s.empty() && s.back() == kEosToken) s = s.first(s.size() - 1);
    return s;
  };
  const auto p = strip(predicted);
  const auto g = strip(gold);
  return std::equal(p.begin(), p.end(), g.begin(), g.end()) ? 1 : 0;
}

}  // namespace unisp
