#include "unisp/generator.hpp"

#include <algorithm>

#include "unisp/error.hpp"
#include "unisp/masking.hpp"
#include "unisp/random.hpp"

namespace unisp {

namespace {

constexpr int kMaxAttempts = 1000;

struct Binding {
  const PropertySpec* num = nullptr;
  const PropertySpec* ref = nullptr;
  std::string val;
  std::string ent;
};

std::string render_surface(const TemplateSpec& t, const DomainSpec& spec, const Binding& b, std::mt19937_64& rng) {
  const std::string num_phrase = b.num ? pick_from(rng, b.num->phrases) : std::string();
  const std::string ref_phrase = b.ref ? pick_from(rng, b.ref->phrases) : std::string();
  std::string out;
  std::size_t pos = 0;
  while (pos < t.surface.size()) {
    const auto open = t.surface.find('{', pos);
    if (open == std::string::npos) {
      out += t.surface.substr(pos);
      break;
    }
    out += t.surface.substr(pos, open - pos);
    const auto close = t.surface.find('}', open);
    const std::string slot = t.surface.substr(open + 1, close - open - 1);
    if (slot.starts_with("@")) {
      out += pick_from(rng, spec.lexicon.at(slot.substr(1)));
    } else if (slot == "plural") {
      out += pick_from(rng, spec.plural);
    } else if (slot == "singular") {
      out += pick_from(rng, spec.singular);
    } else if (slot == "num") {
      out += num_phrase;
    } else if (slot == "ref") {
      out += ref_phrase;
    } else if (slot == "val") {
      out += entity_surface_name(b.val);
    } else if (slot == "ent") {
      out += entity_surface_name(b.ent);
    }
    pos = close + 1;
  }
  return out;
}

std::string render_program(const TemplateSpec& t, const DomainSpec& spec, const Binding& b) {
  std::string out;
  std::size_t pos = 0;
  while (pos < t.program.size()) {
    const auto open = t.program.find('{', pos);
    if (open == std::string::npos) {
      out += t.program.substr(pos);
      break;
    }
    out += t.program.substr(pos, open - pos);
    const auto close = t.program.find('}', open);
    const std::string slot = t.program.substr(open + 1, close - open - 1);
    if (slot == "type") out += spec.entity_type;
    if (slot == "num") out += b.num->name;
    if (slot == "ref") out += b.ref->name;
    if (slot == "val") out += b.val;
    if (slot == "ent") out += b.ent;
    pos = close + 1;
  }
  return out;
}

Instance draw_instance(const DomainSpec& spec, const KnowledgeBase& kb, const std::vector<std::string>& entity_ids,
                       std::mt19937_64& rng) {
  const auto nums = spec.properties_of(ValueKind::kNumber);
  const auto refs = spec.properties_of(ValueKind::kEntity);
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const TemplateSpec& t = pick_from(rng, spec.templates);
    Binding b;
    if (!nums.empty()) b.num = pick_from(rng, nums);
    if (!refs.empty()) {
      b.ref = pick_from(rng, refs);
      b.val = pick_from(rng, b.ref->values);
    }
    b.ent = pick_from(rng, entity_ids);
    const auto utterance = split_tokens(render_surface(t, spec, b, rng));
    const auto program = split_tokens(render_program(t, spec, b));
    const auto raw = run_program(program, kb, {});
    if (!raw) throw ContractViolation("template '" + t.name + "' of " + spec.domain_id + " failed to execute");
    if (raw->empty()) continue;
    auto masked = mask_entities(utterance, program, kb);
    Instance in;
    in.domain = spec.domain_id;
    in.utterance = std::move(masked.utterance);
    in.program = std::move(masked.program);
    in.entity_map = std::move(masked.entity_map);
    in.denotation = *raw;
    return in;
  }
  throw InputError("domain " + spec.domain_id + ": could not draw an instance with a non-empty answer");
}

}  // namespace

KnowledgeBase sample_kb(const DomainSpec& spec, std::mt19937_64& rng) {
  KnowledgeBase kb;
  kb.domain_id = spec.domain_id;
  kb.entity_type = spec.entity_type;
  for (const auto& p : spec.properties) kb.properties[p.name] = p.kind;

  const int hi = std::min<int>(spec.max_entities, static_cast<int>(spec.entity_names.size()));
  const int n = spec.min_entities + static_cast<int>(pick(rng, static_cast<std::size_t>(hi - spec.min_entities + 1)));
  std::vector<std::string> names = spec.entity_names;
  shuffle(names, rng);
  names.resize(static_cast<std::size_t>(n));
  std::vector<std::string> ids;
  for (const auto& name : names) ids.push_back(spec.entity_id(name));

  for (const auto& id : ids) {
    auto& row = kb.entities[id];
    for (const auto& p : spec.properties) {
      if (p.kind == ValueKind::kNumber) {
        const auto span = static_cast<std::size_t>(p.max_value - p.min_value + 1);
        row[p.name] = Value::of_number(p.min_value + static_cast<double>(pick(rng, span)));
      } else if (p.kind == ValueKind::kEntity) {
        row[p.name] = Value::of_entity(pick_from(rng, p.values));
      } else {
        row[p.name] = Value::of_string(pick_from(rng, p.values));
      }
    }
  }
  if (ids.size() >= 2) {
    for (const auto& p : spec.properties) {
      if (p.kind != ValueKind::kNumber) continue;
      const std::size_t top = pick(rng, ids.size());
      std::size_t bottom = pick(rng, ids.size() - 1);
      if (bottom >= top) ++bottom;
      double max_other = -1e300, min_other = 1e300;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i == top || i == bottom) continue;
        const double v = kb.entities[ids[i]][p.name].number;
        max_other = std::max(max_other, v);
        min_other = std::min(min_other, v);
      }
      if (ids.size() == 2) {
        max_other = min_other = kb.entities[ids[top]][p.name].number;
      }
      auto& tv = kb.entities[ids[top]][p.name].number;
      auto& bv = kb.entities[ids[bottom]][p.name].number;
      tv = std::max(tv, max_other + 1);
      bv = std::min(bv, min_other - 1);
    }
  }
  kb.validate();
  return kb;
}

Corpus generate_corpus(const std::vector<DomainSpec>& specs, int per_domain_count, std::uint64_t seed) {
  if (per_domain_count < 10) throw ConfigError("per-domain count must be at least 10");
  if (specs.empty()) throw ConfigError("no domains to generate");
  for (const auto& s : specs) s.validate();
  Corpus corpus;
  for (std::size_t d = 0; d < specs.size(); ++d) {
    const DomainSpec& spec = specs[d];
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(d)};
    std::mt19937_64 rng(seq);
    KnowledgeBase kb = sample_kb(spec, rng);
    std::vector<std::string> entity_ids;
    for (const auto& [id, _] : kb.entities) entity_ids.push_back(id);

    std::vector<Instance> drawn;
    for (int i = 0; i < per_domain_count; ++i) drawn.push_back(draw_instance(spec, kb, entity_ids, rng));
    shuffle(drawn, rng);
    for (std::size_t i = 0; i < drawn.size(); ++i) drawn[i].id = spec.domain_id + "-" + std::to_string(i);

    const auto n = drawn.size();
    const auto n_test = (n + 5) / 10;
    const auto n_dev = (n + 5) / 10;
    const auto n_pool = n - n_test - n_dev;
    const auto n_valid = (n_pool + 2) / 5;
    auto at = [&](std::size_t i) { return drawn.begin() + static_cast<std::ptrdiff_t>(i); };
    corpus.train.insert(corpus.train.end(), at(0), at(n_pool - n_valid));
    corpus.valid.insert(corpus.valid.end(), at(n_pool - n_valid), at(n_pool));
    corpus.dev.insert(corpus.dev.end(), at(n_pool), at(n_pool + n_dev));
    corpus.test.insert(corpus.test.end(), at(n_pool + n_dev), at(n));

    corpus.domains.push_back(spec.domain_id);
    corpus.kbs.emplace(spec.domain_id, std::move(kb));
  }
  return corpus;
}

}  // namespace unisp
