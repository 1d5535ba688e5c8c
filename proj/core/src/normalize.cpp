#include "unisp/normalize.hpp"

#include <cctype>
#include <map>

#include "unisp/error.hpp"
#include "unisp/knowledge_base.hpp"
#include "unisp/log.hpp"

namespace unisp {

namespace {

// Functions whose calls are flattened to prefix form, by arity.
const std::map<std::string, std::size_t, std::less<>> kArity = {
    {"SW.filter", 4},       {"SW.getProperty", 2}, {"SW.singleton", 1},      {"SW.ensureNumericProperty", 1},
    {"SW.ensureNumericEntity", 1}, {"SW.superlative", 3}, {"SW.countSuperlative", 3}, {"SW.aggregate", 2},
    {"SW.reverse", 1},      {"SW.domain", 1},      {"SW.concat", 2},
};
// Flattened but kept in parentheses so nested sub-programs stay delimited.
constexpr std::string_view kBracketed = "SW.ensureNumericEntity";

struct SExpr {
  std::string atom;
  std::vector<SExpr> items;
  bool is_list = false;
};

SExpr parse_sexpr(const std::vector<std::string>& tokens, std::size_t& pos, int depth) {
  if (pos >= tokens.size()) throw ParseError(pos, "unexpected end of s-expression");
  if (depth > 256) throw ParseError(pos, "s-expression nested too deeply");
  if (tokens[pos] == ")") throw ParseError(pos, "unexpected ')'");
  SExpr e;
  if (tokens[pos] != "(") {
    e.atom = tokens[pos++];
    return e;
  }
  e.is_list = true;
  ++pos;
  while (pos < tokens.size() && tokens[pos] != ")") e.items.push_back(parse_sexpr(tokens, pos, depth + 1));
  if (pos >= tokens.size()) throw ParseError(pos, "missing ')'");
  ++pos;
  return e;
}

void emit_verbatim(const SExpr& e, std::vector<std::string>& out) {
  if (!e.is_list) {
    out.push_back(e.atom);
    return;
  }
  out.push_back("(");
  for (const auto& i : e.items) emit_verbatim(i, out);
  out.push_back(")");
}

bool is_atom(const SExpr& e, std::string_view text) { return !e.is_list && e.atom == text; }

// A bare token that denormalize will read back as (string X).
bool plain_string(const std::string& s) {
  if (s.empty() || s == "(" || s == ")" || s == "call" || s == "string") return false;
  if (s.starts_with("SW.") || s.starts_with("en.") || is_placeholder_token(s)) return false;
  return true;
}

class Normalizer {
 public:
  NormalizedProgram result;

  void term(const SExpr& e) {
    if (!e.is_list) {
      atom(e.atom);
      return;
    }
    // (call SW.getProperty (call SW.singleton T) (string ! type)) -> T
    if (e.items.size() == 4 && is_atom(e.items[0], "call") && is_atom(e.items[1], "SW.getProperty")) {
      const SExpr& s = e.items[2];
      const SExpr& t = e.items[3];
      if (s.is_list && s.items.size() == 3 && is_atom(s.items[0], "call") && is_atom(s.items[1], "SW.singleton") &&
          !s.items[2].is_list && is_entity_type_token(s.items[2].atom) && t.is_list && t.items.size() == 3 &&
          is_atom(t.items[0], "string") && is_atom(t.items[1], "!") && is_atom(t.items[2], "type")) {
        result.tokens.push_back(s.items[2].atom);
        return;
      }
    }
    if (e.items.size() == 2 && is_atom(e.items[0], "string") && !e.items[1].is_list &&
        plain_string(e.items[1].atom)) {
      result.tokens.push_back(e.items[1].atom);
      return;
    }
    if (e.items.size() >= 2 && is_atom(e.items[0], "call") && !e.items[1].is_list) {
      auto it = kArity.find(e.items[1].atom);
      if (it != kArity.end() && it->second == e.items.size() - 2) {
        const bool bracketed = it->first == kBracketed;
        if (bracketed) result.tokens.push_back("(");
        result.tokens.push_back(it->first);
        for (std::size_t i = 2; i < e.items.size(); ++i) term(e.items[i]);
        if (bracketed) result.tokens.push_back(")");
        return;
      }
    }
    passthrough(e);
  }

  void passthrough(const SExpr& e) {
    std::vector<std::string> raw;
    emit_verbatim(e, raw);
    log_warning("normalize: passing through unrecognized construct ", join_sexpr(raw));
    result.partial = true;
    result.tokens.insert(result.tokens.end(), raw.begin(), raw.end());
  }

 private:
  std::map<std::string, std::string> placeholder_of_;

  void atom(const std::string& a) {
    if (is_entity_id_token(a)) {
      auto it = placeholder_of_.find(a);
      if (it == placeholder_of_.end()) {
        const std::string p = "e" + std::to_string(placeholder_of_.size());
        it = placeholder_of_.emplace(a, p).first;
        result.entity_map[p] = a;
      }
      result.tokens.push_back(it->second);
      return;
    }
    result.tokens.push_back(a);
  }
};

class Denormalizer {
 public:
  Denormalizer(std::span<const std::string> tokens, const EntityMap& map) : tokens_(tokens), map_(map) {}

  std::vector<std::string> run() {
    if (tokens_.empty()) throw ParseError(0, "empty normalized program");
    // A leading "(" that is not a bracketed function is a verbatim top-level form.
    if (tokens_[0] == "(" && !(tokens_.size() > 1 && tokens_[1] == kBracketed)) {
      std::vector<std::string> out;
      copy_balanced(out);
      if (pos_ != tokens_.size()) throw ParseError(pos_, "trailing tokens after program");
      return out;
    }
    std::vector<std::string> out = {"(", "call", "SW.listValue"};
    term(out, false);
    out.push_back(")");
    if (pos_ != tokens_.size()) throw ParseError(pos_, "trailing tokens after program");
    return out;
  }

 private:
  std::span<const std::string> tokens_;
  const EntityMap& map_;
  std::size_t pos_ = 0;

  const std::string& next() {
    if (pos_ >= tokens_.size()) throw ParseError(pos_, "unexpected end of normalized program");
    return tokens_[pos_++];
  }

  void copy_balanced(std::vector<std::string>& out) {
    int depth = 0;
    do {
      const std::string& t = next();
      if (t == "(") ++depth;
      if (t == ")") --depth;
      out.push_back(t);
    } while (depth > 0);
  }

  void term(std::vector<std::string>& out, bool under_singleton) {
    const std::string& t = next();
    if (t == "(") {
      if (pos_ < tokens_.size() && tokens_[pos_] == kBracketed) {
        ++pos_;
        out.insert(out.end(), {"(", "call", std::string(kBracketed)});
        term(out, false);
        if (next() != ")") throw ParseError(pos_ - 1, "expected ')'");
        out.push_back(")");
        return;
      }
      --pos_;
      copy_balanced(out);
      return;
    }
    if (auto it = kArity.find(t); it != kArity.end()) {
      out.insert(out.end(), {"(", "call", t});
      for (std::size_t i = 0; i < it->second; ++i) term(out, t == "SW.singleton");
      out.push_back(")");
      return;
    }
    if (auto it = map_.find(t); it != map_.end()) {
      out.push_back(it->second);
      return;
    }
    if (is_entity_type_token(t)) {
      if (under_singleton) {
        out.push_back(t);
      } else {
        out.insert(out.end(), {"(", "call", "SW.getProperty", "(", "call", "SW.singleton", t, ")", "(", "string",
                               "!", "type", ")", ")"});
      }
      return;
    }
    if (is_entity_id_token(t) || is_placeholder_token(t)) {
      out.push_back(t);
      return;
    }
    out.insert(out.end(), {"(", "string", t, ")"});
  }
};

}  // namespace

std::vector<std::string> tokenize_sexpr(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : text) {
    if (c == '(' || c == ')') {
      flush();
      out.emplace_back(1, c);
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return out;
}

std::string join_sexpr(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const bool glue = i == 0 || tokens[i] == ")" || tokens[i - 1] == "(";
    if (!glue) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

NormalizedProgram normalize_external(std::string_view original) {
  const auto tokens = tokenize_sexpr(original);
  std::size_t pos = 0;
  const SExpr root = parse_sexpr(tokens, pos, 0);
  if (pos != tokens.size()) throw ParseError(pos, "trailing tokens after s-expression");

  Normalizer n;
  if (root.is_list && root.items.size() == 3 && is_atom(root.items[0], "call") &&
      is_atom(root.items[1], "SW.listValue")) {
    n.term(root.items[2]);
  } else {
    n.passthrough(root);
  }
  // Anything that would not read back exactly is kept whole.
  bool exact = false;
  try {
    exact = tokenize_sexpr(denormalize(n.result.tokens, n.result.entity_map)) == tokens;
  } catch (const ParseError&) {
    exact = false;
  }
  if (!exact) {
    log_warning("normalize: construct is not reversibly reducible, keeping it verbatim");
    NormalizedProgram whole;
    whole.tokens = tokens;
    whole.partial = true;
    return whole;
  }
  return n.result;
}

std::string denormalize(std::span<const std::string> tokens, const EntityMap& entity_map) {
  const auto out = Denormalizer(tokens, entity_map).run();
  return join_sexpr(out);
}

}  // namespace unisp
