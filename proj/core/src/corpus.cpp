#include "unisp/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "unisp/error.hpp"

namespace unisp {

namespace fs = std::filesystem;

nlohmann::json to_json(const Instance& instance) {
  nlohmann::json map = nlohmann::json::object();
  for (const auto& [k, v] : instance.entity_map) map[k] = v;
  return {{"id", instance.id},
          {"domain", instance.domain},
          {"utterance", instance.utterance},
          {"program", instance.program},
          {"entity_map", std::move(map)},
          {"denotation", to_json(instance.denotation)}};
}

Instance instance_from_json(const nlohmann::json& j) {
  try {
    Instance in;
    in.id = j.value("id", std::string());
    in.domain = j.at("domain").get<std::string>();
    in.utterance = j.at("utterance").get<std::vector<std::string>>();
    if (j.contains("program")) in.program = j.at("program").get<std::vector<std::string>>();
    if (j.contains("entity_map")) {
      for (const auto& [k, v] : j.at("entity_map").items()) in.entity_map[k] = v.get<std::string>();
    }
    in.denotation = denotation_from_json(j.at("denotation"));
    return in;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed corpus instance: ") + e.what());
  }
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "valid") return Split::kValid;
  if (name == "dev") return Split::kDev;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + name + "'");
}

const std::vector<Instance>& Corpus::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kValid: return valid;
    case Split::kDev: return dev;
    case Split::kTest: return test;
  }
  return train;
}

std::vector<Instance>& Corpus::split(Split s) {
  return const_cast<std::vector<Instance>&>(std::as_const(*this).split(s));
}

const KnowledgeBase& Corpus::kb(const std::string& domain) const {
  auto it = kbs.find(domain);
  if (it == kbs.end()) throw InputError("no knowledge base for domain '" + domain + "'");
  return it->second;
}

std::vector<Instance> Corpus::of_domain(Split s, const std::string& domain) const {
  std::vector<Instance> out;
  for (const auto& in : split(s)) {
    if (in.domain == domain) out.push_back(in);
  }
  return out;
}

std::vector<Instance> read_jsonl(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open " + path.string());
  std::vector<Instance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(instance_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_jsonl(const std::vector<Instance>& instances, const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path.string());
  for (const auto& in : instances) os << to_json(in).dump() << '\n';
}

void save_corpus(const Corpus& corpus, const fs::path& dir, const nlohmann::json& manifest_extra) {
  fs::create_directories(dir / "kb");
  for (const auto& domain : corpus.domains) {
    std::ofstream os(dir / "kb" / (domain + ".json"));
    if (!os) throw InputError("cannot write knowledge base for " + domain);
    os << to_json(corpus.kb(domain)).dump(1) << '\n';
  }
  for (Split s : {Split::kTrain, Split::kValid, Split::kDev, Split::kTest}) {
    write_jsonl(corpus.split(s), dir / (std::string(to_string(s)) + ".jsonl"));
  }
  nlohmann::json manifest = manifest_extra;
  manifest["domains"] = corpus.domains;
  manifest["target_vocab_hash"] = combined_target_vocab(corpus).hash();
  manifest["sizes"] = {{"train", corpus.train.size()},
                       {"valid", corpus.valid.size()},
                       {"dev", corpus.dev.size()},
                       {"test", corpus.test.size()}};
  std::ofstream os(dir / "manifest.json");
  os << manifest.dump(2) << '\n';
}

Corpus load_corpus(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InputError("corpus directory " + dir.string() + " does not exist");
  Corpus corpus;
  const fs::path manifest = dir / "manifest.json";
  if (fs::exists(manifest)) {
    std::ifstream is(manifest);
    try {
      corpus.domains = nlohmann::json::parse(is).at("domains").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw InputError("malformed manifest " + manifest.string() + ": " + e.what());
    }
  } else {
    if (!fs::is_directory(dir / "kb")) throw InputError("corpus " + dir.string() + " has no kb/ directory");
    for (const auto& entry : fs::directory_iterator(dir / "kb")) {
      if (entry.path().extension() == ".json") corpus.domains.push_back(entry.path().stem().string());
    }
    std::sort(corpus.domains.begin(), corpus.domains.end());
  }
  for (const auto& domain : corpus.domains) {
    const fs::path p = dir / "kb" / (domain + ".json");
    std::ifstream is(p);
    if (!is) throw InputError("missing knowledge base " + p.string());
    try {
      corpus.kbs.emplace(domain, kb_from_json(nlohmann::json::parse(is)));
    } catch (const nlohmann::json::exception& e) {
      throw InputError("malformed knowledge base " + p.string() + ": " + e.what());
    }
  }
  for (Split s : {Split::kTrain, Split::kValid, Split::kDev, Split::kTest}) {
    const fs::path p = dir / (std::string(to_string(s)) + ".jsonl");
    if (fs::exists(p)) {
      corpus.split(s) = read_jsonl(p);
    } else if (s == Split::kTrain || s == Split::kTest) {
      throw InputError("missing split file " + p.string());
    }
    for (const auto& in : corpus.split(s)) {
      if (!corpus.kbs.count(in.domain)) {
        throw InputError("instance " + in.id + " refers to unknown domain '" + in.domain + "'");
      }
    }
  }
  return corpus;
}

std::vector<std::string> program_tokens_for(const KnowledgeBase& kb, int max_placeholders) {
  std::vector<std::string> tokens = {"filter", "argmax", "argmin", "getProperty", "count", "(", ")",
                                     "=",      "!=",     "<",      "<=",          ">",     ">="};
  for (int i = 0; i < max_placeholders; ++i) tokens.push_back("e" + std::to_string(i));
  tokens.push_back(kb.entity_type);
  for (const auto& [name, _] : kb.properties) tokens.push_back(name);
  return tokens;
}

Vocab combined_target_vocab(const Corpus& corpus) {
  std::vector<std::string> tokens;
  for (const auto& domain : corpus.domains) {
    for (auto& t : program_tokens_for(corpus.kb(domain))) tokens.push_back(std::move(t));
  }
  // Literal tokens seen in training programs (numbers, strings) that no schema names.
  std::set<std::string> extra;
  for (const auto& in : corpus.train) {
    for (const auto& t : in.program) extra.insert(t);
  }
  Vocab v = make_target_vocab(tokens);
  for (const auto& t : extra) v.add(t);
  return v;
}

Vocab domain_target_vocab(const Corpus& corpus, const std::string& domain) {
  Vocab v = make_target_vocab(program_tokens_for(corpus.kb(domain)));
  std::set<std::string> extra;
  for (const auto& in : corpus.train) {
    if (in.domain != domain) continue;
    for (const auto& t : in.program) extra.insert(t);
  }
  for (const auto& t : extra) v.add(t);
  return v;
}

Vocab source_vocab(const Corpus& corpus, const std::vector<std::string>& domains) {
  std::set<std::string> wanted(domains.begin(), domains.end());
  std::set<std::string> words;
  for (const auto& in : corpus.train) {
    if (!wanted.count(in.domain)) continue;
    words.insert(in.utterance.begin(), in.utterance.end());
  }
  return make_source_vocab(std::vector<std::string>(words.begin(), words.end()));
}

std::map<std::string, DomainStats> corpus_stats(const std::vector<Instance>& training) {
  std::map<std::string, std::set<std::string>> words, tokens;
  std::map<std::string, std::size_t> total_length;
  std::map<std::string, DomainStats> out;
  for (const auto& in : training) {
    words[in.domain].insert(in.utterance.begin(), in.utterance.end());
    tokens[in.domain].insert(in.program.begin(), in.program.end());
    total_length[in.domain] += in.program.size();
    out[in.domain].instances += 1;
  }
  for (auto& [domain, s] : out) {
    s.utterance_vocab = words[domain].size();
    s.program_vocab = tokens[domain].size();
    s.avg_program_length = static_cast<double>(total_length[domain]) / static_cast<double>(s.instances);
  }
  return out;
}

nlohmann::json stats_to_json(const std::map<std::string, DomainStats>& stats) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [domain, s] : stats) {
    j[domain] = {{"utterance_vocab", s.utterance_vocab},
                 {"program_vocab", s.program_vocab},
                 {"avg_program_length", s.avg_program_length},
                 {"instances", s.instances}};
  }
  return j;
}

}  // namespace unisp
