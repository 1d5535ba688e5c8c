#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unisp/corpus.hpp"
#include "unisp/seq2seq.hpp"
#include "unisp/vocab.hpp"

namespace unisp {

/// A model together with the vocabularies that give its ids meaning.
struct Parser {
  Seq2Seq model;
  Vocab source;
  Vocab target;

  std::vector<TokenId> encode_utterance(const std::vector<std::string>& words) const;
  /// Gold program ids with a trailing end symbol; nullopt if a token is out of vocabulary.
  std::optional<std::vector<TokenId>> encode_program(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<TokenId>& ids) const;
  /// Tokens of the best beam hypothesis (end symbol removed).
  std::vector<std::string> predict(const std::vector<std::string>& words, int beam_width) const;
};

/// Builds a freshly initialised parser sized to the given vocabularies.
Parser make_parser(ModelConfig config, Vocab source, Vocab target, std::uint64_t seed);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig defaults = {});

inline constexpr int kCheckpointFormat = 1;

/// Versioned JSON: {format_version, model_config, vocab_hashes, vocabs, parameters, metadata}.
/// corpus_hash identifies the corpus vocabulary the model was trained against.
void save_checkpoint(const Parser& parser, const std::filesystem::path& file, const std::string& corpus_hash,
                     const nlohmann::json& metadata = nlohmann::json::object());

struct LoadedParser {
  Parser parser;
  std::string corpus_hash;
  nlohmann::json metadata;
};

/// Throws InputError for missing files, unknown format versions, or
/// vocabularies that do not match their recorded hashes.
LoadedParser load_checkpoint(const std::filesystem::path& file);

}  // namespace unisp
