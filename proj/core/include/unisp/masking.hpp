#pragma once

#include <span>
#include <string>
#include <vector>

#include "unisp/knowledge_base.hpp"
#include "unisp/program.hpp"

namespace unisp {

struct MaskedExample {
  std::vector<std::string> utterance;
  std::vector<std::string> program;
  EntityMap entity_map;
};

/// Replaces each entity id in the program, and its surface name in the
/// utterance, by e0, e1, ... numbered by first appearance in the utterance.
/// Throws InputError when a program entity is unknown to the KB or has no
/// surface mention.
MaskedExample mask_entities(std::span<const std::string> utterance, std::span<const std::string> program,
                            const KnowledgeBase& kb);

/// Inverse of mask_entities.
MaskedExample unmask(std::span<const std::string> utterance, std::span<const std::string> program,
                     const EntityMap& entity_map);

}  // namespace unisp
