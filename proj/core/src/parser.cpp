#include "unisp/parser.hpp"

#include <fstream>

#include "unisp/error.hpp"

namespace unisp {

std::vector<TokenId> Parser::encode_utterance(const std::vector<std::string>& words) const {
  return encode_source(source, words);
}

std::optional<std::vector<TokenId>> Parser::encode_program(const std::vector<std::string>& tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size() + 1);
  for (const auto& t : tokens) {
    auto id = target.find(t);
    if (!id) return std::nullopt;
    ids.push_back(*id);
  }
  ids.push_back(kEos);
  return ids;
}

std::vector<std::string> Parser::decode(const std::vector<TokenId>& ids) const {
  std::vector<std::string> out;
  for (TokenId id : ids) {
    if (id == kEos) break;
    out.push_back(target.token(id));
  }
  return out;
}

std::vector<std::string> Parser::predict(const std::vector<std::string>& words, int beam_width) const {
  const auto src = encode_utterance(words);
  const Beam beam = model.beam_search(src, beam_width);
  return decode(beam.items.front().tokens);
}

Parser make_parser(ModelConfig config, Vocab source, Vocab target, std::uint64_t seed) {
  config.src_vocab_size = static_cast<int>(source.size());
  config.tgt_vocab_size = static_cast<int>(target.size());
  return Parser{Seq2Seq(config, seed), std::move(source), std::move(target)};
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers},     {"hidden_size", c.hidden_size}, {"embed_size", c.embed_size},
          {"src_vocab_size", c.src_vocab_size}, {"tgt_vocab_size", c.tgt_vocab_size},
          {"max_src_len", c.max_src_len},   {"max_tgt_len", c.max_tgt_len}, {"init_scale", c.init_scale}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c) {
  if (!j.is_object()) throw ConfigError("model config must be an object");
  static const std::vector<std::string> known = {"num_layers",     "hidden_size", "embed_size",
                                                 "src_vocab_size", "tgt_vocab_size", "max_src_len",
                                                 "max_tgt_len",    "init_scale"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown model config key '" + key + "'");
    }
  }
  try {
    c.num_layers = j.value("num_layers", c.num_layers);
    c.hidden_size = j.value("hidden_size", c.hidden_size);
    c.embed_size = j.value("embed_size", c.embed_size);
    c.src_vocab_size = j.value("src_vocab_size", c.src_vocab_size);
    c.tgt_vocab_size = j.value("tgt_vocab_size", c.tgt_vocab_size);
    c.max_src_len = j.value("max_src_len", c.max_src_len);
    c.max_tgt_len = j.value("max_tgt_len", c.max_tgt_len);
    c.init_scale = j.value("init_scale", c.init_scale);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
  return c;
}

void save_checkpoint(const Parser& parser, const std::filesystem::path& file, const std::string& corpus_hash,
                     const nlohmann::json& metadata) {
  nlohmann::json params = nlohmann::json::object();
  for (const Parameter* p : parser.model.params().all()) {
    const auto v = p->value.values();
    params[p->name] = {{"shape", {p->value.shape().rows, p->value.shape().cols}},
                       {"values", std::vector<double>(v.begin(), v.end())}};
  }
  const nlohmann::json doc = {
      {"format_version", kCheckpointFormat},
      {"model_config", to_json(parser.model.config())},
      {"vocab_hashes", {{"source", parser.source.hash()}, {"target", parser.target.hash()}, {"corpus", corpus_hash}}},
      {"vocabs", {{"source", parser.source.tokens()}, {"target", parser.target.tokens()}}},
      {"parameters", std::move(params)},
      {"metadata", metadata}};
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream os(file);
  if (!os) throw InputError("cannot write checkpoint " + file.string());
  os << doc.dump() << '\n';
}

LoadedParser load_checkpoint(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw InputError("cannot open checkpoint " + file.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("checkpoint " + file.string() + " is not valid JSON: " + e.what());
  }
  try {
    if (doc.at("format_version").get<int>() != kCheckpointFormat) {
      throw InputError("checkpoint " + file.string() + " has unsupported format version " +
                       doc.at("format_version").dump());
    }
    const ModelConfig config = model_config_from_json(doc.at("model_config"));
    Vocab source(doc.at("vocabs").at("source").get<std::vector<std::string>>());
    Vocab target(doc.at("vocabs").at("target").get<std::vector<std::string>>());
    const auto& hashes = doc.at("vocab_hashes");
    if (source.hash() != hashes.at("source").get<std::string>() ||
        target.hash() != hashes.at("target").get<std::string>()) {
      throw InputError("checkpoint " + file.string() + " vocabularies do not match their recorded hashes");
    }
    ParamStore params;
    for (const auto& [name, jp] : doc.at("parameters").items()) {
      const Shape shape{jp.at("shape").at(0).get<std::size_t>(), jp.at("shape").at(1).get<std::size_t>()};
      Parameter& p = params.add(name, shape);
      const auto values = jp.at("values").get<std::vector<double>>();
      if (values.size() != shape.size()) {
        throw InputError("checkpoint parameter '" + name + "' has " + std::to_string(values.size()) +
                         " values for shape " + to_string(shape));
      }
      std::copy(values.begin(), values.end(), p.value.values().begin());
    }
    LoadedParser out{Parser{Seq2Seq(config, std::move(params)), std::move(source), std::move(target)},
                     hashes.at("corpus").get<std::string>(), doc.value("metadata", nlohmann::json::object())};
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed checkpoint " + file.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw InputError("checkpoint " + file.string() + ": " + e.what());
  }
}

}  // namespace unisp
