#include "unisp/masking.hpp"

#include <algorithm>
#include <map>

#include "unisp/error.hpp"

namespace unisp {

namespace {

bool kb_knows(const KnowledgeBase& kb, const std::string& id) {
  if (kb.has_entity(id)) return true;
  for (const auto& [_, props] : kb.entities) {
    for (const auto& [__, v] : props) {
      if (v.kind == ValueKind::kEntity && v.text == id) return true;
    }
  }
  return false;
}

bool matches_at(std::span<const std::string> words, std::size_t pos, const std::vector<std::string>& name) {
  if (pos + name.size() > words.size()) return false;
  return std::equal(name.begin(), name.end(), words.begin() + static_cast<std::ptrdiff_t>(pos));
}

}  // namespace

MaskedExample mask_entities(std::span<const std::string> utterance, std::span<const std::string> program,
                            const KnowledgeBase& kb) {
  std::vector<std::string> ids;
  for (const auto& t : program) {
    if (is_entity_id_token(t) && std::find(ids.begin(), ids.end(), t) == ids.end()) ids.push_back(t);
  }
  if (ids.empty()) {
    return {{utterance.begin(), utterance.end()}, {program.begin(), program.end()}, {}};
  }
  std::vector<std::vector<std::string>> names;
  for (const auto& id : ids) {
    if (!kb_knows(kb, id)) throw InputError("masking: entity '" + id + "' is not in knowledge base " + kb.domain_id);
    names.push_back(split_tokens(entity_surface_name(id)));
  }
  // Longest names first so that a name never shadows a longer one containing it.
  std::vector<std::size_t> by_length(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) by_length[i] = i;
  std::stable_sort(by_length.begin(), by_length.end(),
                   [&](std::size_t a, std::size_t b) { return names[a].size() > names[b].size(); });

  struct Mention {
    std::size_t pos;
    std::size_t entity;
  };
  std::vector<Mention> mentions;
  for (std::size_t pos = 0; pos < utterance.size();) {
    bool hit = false;
    for (std::size_t e : by_length) {
      if (matches_at(utterance, pos, names[e])) {
        mentions.push_back({pos, e});
        pos += names[e].size();
        hit = true;
        break;
      }
    }
    if (!hit) ++pos;
  }
  std::vector<int> placeholder(ids.size(), -1);
  int next = 0;
  for (const auto& m : mentions) {
    if (placeholder[m.entity] < 0) placeholder[m.entity] = next++;
  }
  for (std::size_t e = 0; e < ids.size(); ++e) {
    if (placeholder[e] < 0) throw InputError("masking: entity '" + ids[e] + "' has no mention in the utterance");
  }
  MaskedExample out;
  std::size_t m = 0;
  for (std::size_t pos = 0; pos < utterance.size();) {
    if (m < mentions.size() && mentions[m].pos == pos) {
      out.utterance.push_back("e" + std::to_string(placeholder[mentions[m].entity]));
      pos += names[mentions[m].entity].size();
      ++m;
    } else {
      out.utterance.push_back(utterance[pos++]);
    }
  }
  for (const auto& t : program) {
    auto it = std::find(ids.begin(), ids.end(), t);
    if (it == ids.end()) {
      out.program.push_back(t);
    } else {
      out.program.push_back("e" + std::to_string(placeholder[static_cast<std::size_t>(it - ids.begin())]));
    }
  }
  for (std::size_t e = 0; e < ids.size(); ++e) out.entity_map["e" + std::to_string(placeholder[e])] = ids[e];
  return out;
}

MaskedExample unmask(std::span<const std::string> utterance, std::span<const std::string> program,
                     const EntityMap& entity_map) {
  MaskedExample out;
  for (const auto& w : utterance) {
    auto it = entity_map.find(w);
    if (it == entity_map.end()) {
      out.utterance.push_back(w);
    } else {
      for (auto& part : split_tokens(entity_surface_name(it->second))) out.utterance.push_back(std::move(part));
    }
  }
  for (const auto& t : program) {
    auto it = entity_map.find(t);
    out.program.push_back(it == entity_map.end() ? t : it->second);
  }
  return out;
}

}  // namespace unisp
