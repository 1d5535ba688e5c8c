#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "unisp/program.hpp"

namespace unisp {

/// Splits s-expression text into tokens with each parenthesis standing alone.
std::vector<std::string> tokenize_sexpr(std::string_view text);
/// Joins tokens back into canonical s-expression text: "(call SW.f (string x))".
std::string join_sexpr(std::span<const std::string> tokens);

struct NormalizedProgram {
  std::vector<std::string> tokens;
  EntityMap entity_map;
  bool partial = false;  // some construct was passed through verbatim
};

/// Reduces an original-form lambda-DCS parse (call/SW/string wrappers) to the
/// compact prefix form, masking entity ids as e0, e1, ... in order of
/// appearance. Unknown constructs pass through verbatim with a warning.
/// Throws ParseError on unbalanced input.
NormalizedProgram normalize_external(std::string_view original);

/// Exact inverse of normalize_external, as canonical s-expression text.
std::string denormalize(std::span<const std::string> tokens, const EntityMap& entity_map);

}  // namespace unisp
