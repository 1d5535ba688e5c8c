#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unisp/knowledge_base.hpp"
#include "unisp/program.hpp"
#include "unisp/vocab.hpp"

namespace unisp {

/// One (utterance, denotation) training example. Programs are kept for the
/// supervised skyline and for evaluation bookkeeping; weak trainers ignore them.
struct Instance {
  std::string id;
  std::string domain;
  std::vector<std::string> utterance;  // entities masked as e0, e1, ...
  std::vector<std::string> program;    // masked program tokens, no end symbol
  EntityMap entity_map;
  Denotation denotation;

  bool operator==(const Instance&) const = default;
};

nlohmann::json to_json(const Instance& instance);
Instance instance_from_json(const nlohmann::json& j);

enum class Split { kTrain, kValid, kDev, kTest };
std::string_view to_string(Split split);
Split split_from_string(const std::string& name);

struct Corpus {
  std::vector<std::string> domains;  // bundle order
  std::map<std::string, KnowledgeBase> kbs;
  std::vector<Instance> train, valid, dev, test;

  const std::vector<Instance>& split(Split s) const;
  std::vector<Instance>& split(Split s);
  const KnowledgeBase& kb(const std::string& domain) const;
  /// Instances of one split restricted to one domain, in corpus order.
  std::vector<Instance> of_domain(Split s, const std::string& domain) const;

  bool operator==(const Corpus&) const = default;
};

/// Writes kb/<domain>.json, <split>.jsonl and manifest.json under dir.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir,
                 const nlohmann::json& manifest_extra = nlohmann::json::object());
/// Throws InputError when the directory or a required file is missing.
Corpus load_corpus(const std::filesystem::path& dir);

std::vector<Instance> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::vector<Instance>& instances, const std::filesystem::path& path);

/// Program-side vocabulary of one domain: structural keywords, placeholders,
/// the entity type, and every property name of its schema.
std::vector<std::string> program_tokens_for(const KnowledgeBase& kb, int max_placeholders = 4);
/// Combined target vocabulary across all domains of a corpus (<s>, </s> first).
Vocab combined_target_vocab(const Corpus& corpus);
Vocab domain_target_vocab(const Corpus& corpus, const std::string& domain);
/// Source vocabulary from the training utterances of the given domains.
Vocab source_vocab(const Corpus& corpus, const std::vector<std::string>& domains);

/// Per-domain training statistics (vocabulary sizes and average program length).
struct DomainStats {
  std::size_t utterance_vocab = 0;
  std::size_t program_vocab = 0;
  double avg_program_length = 0.0;
  std::size_t instances = 0;
};

std::map<std::string, DomainStats> corpus_stats(const std::vector<Instance>& training);
nlohmann::json stats_to_json(const std::map<std::string, DomainStats>& stats);

}  // namespace unisp
