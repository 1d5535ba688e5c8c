#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "unisp/corpus.hpp"
#include "unisp/domain_spec.hpp"
#include "unisp/error.hpp"
#include "unisp/evaluation.hpp"
#include "unisp/generator.hpp"
#include "unisp/harness.hpp"
#include "unisp/log.hpp"
#include "unisp/normalize.hpp"
#include "unisp/parallel.hpp"
#include "unisp/parser.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace unisp;

namespace {

struct Flags {
  std::string config = "desk";
  std::string spec = "default";
  int per_domain = 300;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string corpus;
  std::string domain;
  std::string teachers;
  std::string model;
  std::optional<int> beam_width;
  std::optional<std::string> reward_mode;
  std::optional<double> parallel_fraction;
  std::optional<int> workers;
  std::vector<std::string> inputs;
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

/// Applies `--a.b.c=value` / `--a.b.c value` overrides to keys that already exist.
void apply_overrides(json& doc, const std::vector<std::string>& extras) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    std::string arg = extras[i];
    if (arg.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + arg + "'");
    arg = arg.substr(2);
    std::string value;
    if (auto eq = arg.find('='); eq != std::string::npos) {
      value = arg.substr(eq + 1);
      arg = arg.substr(0, eq);
    } else if (i + 1 < extras.size()) {
      value = extras[++i];
    } else {
      throw ConfigError("flag --" + arg + " needs a value");
    }
    json* node = &doc;
    std::stringstream path(arg);
    for (std::string key; std::getline(path, key, '.');) {
      if (!node->is_object() || !node->contains(key)) throw ConfigError("unknown flag --" + arg);
      node = &(*node)[key];
    }
    json parsed = json::parse(value, nullptr, false);
    *node = parsed.is_discarded() || (node->is_string() && !parsed.is_string()) ? json(value) : parsed;
  }
}

ExperimentConfig base_config(const std::string& name, System system) {
  if (name == "desk") return desk_config(system);
  ExperimentConfig c;
  c.system = system;
  if (name == "full") return c;
  return experiment_config_from_json(read_json_file(name), c);
}

/// Resolves the experiment config of a training or evaluation command:
/// preset or file, then dotted overrides, then the named flags.
ExperimentConfig resolve(const Flags& f, System system, const std::vector<std::string>& extras) {
  json doc = to_json(base_config(f.config, system));
  apply_overrides(doc, extras);
  if (!f.corpus.empty()) doc["corpus"] = f.corpus;
  if (!f.out.empty()) doc["out"] = f.out;
  if (!f.teachers.empty()) doc["teachers"] = f.teachers;
  if (!f.domain.empty()) doc["domain"] = f.domain;
  if (f.seed) doc["seeds"] = {*f.seed};
  if (f.beam_width) doc["train"]["beam_width"] = *f.beam_width;
  if (f.reward_mode) doc["train"]["reward_mode"] = *f.reward_mode;
  if (f.parallel_fraction) doc["parallel_fraction"] = *f.parallel_fraction;
  doc["train"]["workers"] = resolve_workers(f.workers.value_or(0));
  return experiment_config_from_json(doc, base_config(f.config, system));
}

void snapshot(const fs::path& dir, json resolved) { write_json(dir / "resolved_config.json", resolved); }

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw ConfigError(flag + " is required");
}

Corpus open_corpus(const std::string& dir) {
  require(dir, "--corpus");
  return load_corpus(dir);
}

fs::path checkpoint_file(const std::string& path) {
  fs::path p(path);
  if (fs::is_directory(p)) p /= "model.json";
  if (!fs::exists(p)) throw InputError("no checkpoint at " + path);
  return p;
}

void save_model(const TrainedModel& m, const ExperimentConfig& c, const Corpus& corpus, const std::string& domain) {
  const fs::path out(c.out);
  json meta = {{"system", std::string(to_string(c.system))},
               {"seed", c.seeds.front()},
               {"domain", domain},
               {"parallel_fraction", c.system == System::kSupervised ? 0.0 : c.parallel_fraction},
               {"beam_width", evaluation_width(c)}};
  save_checkpoint(m.parser, out / "model.json", combined_target_vocab(corpus).hash(), meta);
  m.result.log.write_csv(out / "log.csv");
}

int cmd_gen_data(const Flags& f, const std::vector<std::string>& extras) {
  json cfg = {{"spec", f.spec}, {"per_domain", f.per_domain}, {"seed", f.seed.value_or(17)}, {"out", f.out}};
  apply_overrides(cfg, extras);
  require(cfg["out"].get<std::string>(), "--out");
  const auto specs = load_bundle(cfg["spec"].get<std::string>());
  const Corpus corpus = generate_corpus(specs, cfg["per_domain"].get<int>(), cfg["seed"].get<std::uint64_t>());
  const fs::path out = cfg["out"].get<std::string>();
  save_corpus(corpus, out, {{"seed", cfg["seed"]}, {"per_domain", cfg["per_domain"]}});
  const json stats = stats_to_json(corpus_stats(corpus.train));
  write_json(out / "stats.json", stats);
  snapshot(out, cfg);
  for (const auto& d : corpus.domains) {
    log_info(d, ": ", corpus.of_domain(Split::kTrain, d).size(), " train / ", corpus.of_domain(Split::kValid, d).size(),
             " valid / ", corpus.of_domain(Split::kDev, d).size(), " dev / ", corpus.of_domain(Split::kTest, d).size(),
             " test");
  }
  log_info("combined target vocabulary ", combined_target_vocab(corpus).size(), " tokens");
  return 0;
}

int cmd_train_teacher(const Flags& f, const std::vector<std::string>& extras) {
  const ExperimentConfig c = resolve(f, System::kWeakIndependent, extras);
  require(c.domain, "--domain");
  require(c.out, "--out");
  const Corpus corpus = open_corpus(c.corpus);
  snapshot(c.out, to_json(c));
  const TrainedModel m = train_system_model(c, corpus, c.seeds.front(), c.domain);
  save_model(m, c, corpus, c.domain);
  return 0;
}

int cmd_train_combined(const Flags& f, const std::vector<std::string>& extras) {
  ExperimentConfig c = resolve(f, System::kWeakCombined, extras);
  if (c.system != System::kWeakCombined && c.system != System::kSupervised) {
    throw ConfigError("train-combined trains weak-combined or supervised, not " + std::string(to_string(c.system)));
  }
  require(c.out, "--out");
  const Corpus corpus = open_corpus(c.corpus);
  snapshot(c.out, to_json(c));
  save_model(train_system_model(c, corpus, c.seeds.front(), ""), c, corpus, "");
  return 0;
}

int cmd_distill(const Flags& f, const std::vector<std::string>& extras) {
  ExperimentConfig c = resolve(f, System::kDistillCombined, extras);
  c.system = c.domain.empty() ? System::kDistillCombined : System::kDistillIndependent;
  require(c.teachers, "--teachers");
  require(c.out, "--out");
  const Corpus corpus = open_corpus(c.corpus);
  std::vector<LoadedParser> loaded;
  std::stringstream list(c.teachers);
  for (std::string item; std::getline(list, item, ',');) {
    if (!item.empty()) loaded.push_back(load_checkpoint(checkpoint_file(item)));
  }
  TeacherSet teachers;
  for (const auto& l : loaded) {
    const std::string d = l.metadata.value("domain", std::string());
    if (d.empty()) throw InputError("teacher checkpoint carries no domain");
    teachers[d] = &l.parser;
  }
  snapshot(c.out, to_json(c));
  const TrainedModel m = train_system_model(c, corpus, c.seeds.front(), c.domain, &teachers);
  save_model(m, c, corpus, c.domain);
  return 0;
}

int cmd_eval(const Flags& f, const std::vector<std::string>&) {
  require(f.model, "--model");
  const Corpus corpus = open_corpus(f.corpus);
  const fs::path file = checkpoint_file(f.model);
  const LoadedParser l = load_checkpoint(file);
  const std::string expected = combined_target_vocab(corpus).hash();
  if (l.corpus_hash != expected) {
    throw InputError("checkpoint vocabulary " + l.corpus_hash + " does not match corpus vocabulary " + expected);
  }
  const std::string domain = l.metadata.value("domain", std::string());
  const int width = f.beam_width.value_or(l.metadata.value("beam_width", 5));
  const auto test = domain.empty() ? corpus.test : corpus.of_domain(Split::kTest, domain);
  const EvalResult r = evaluate(l.parser, test, corpus, width, resolve_workers(f.workers.value_or(0)));
  json result = {{"system", l.metadata.value("system", std::string("unknown"))},
                 {"seed", l.metadata.value("seed", std::uint64_t{0})},
                 {"parallel_fraction", l.metadata.value("parallel_fraction", 0.0)},
                 {"per_domain", r.accuracy},
                 {"average", r.average},
                 {"soft_per_domain", r.soft_accuracy},
                 {"soft_average", r.soft_average},
                 {"parameters", l.parser.model.num_parameters()},
                 {"beam_width", width}};
  const fs::path out = f.out.empty() ? file.parent_path() : fs::path(f.out);
  write_json(out / "result.json", result);
  std::string lines;
  for (const auto& rec : r.records) {
    lines += json({{"id", rec.id}, {"domain", rec.domain}, {"predicted", rec.predicted}, {"hard", rec.hard},
                   {"soft", rec.soft}})
                 .dump() +
             "\n";
  }
  write_text(out / "predictions.jsonl", lines);
  snapshot(out, {{"model", f.model}, {"corpus", f.corpus}, {"beam_width", width}, {"out", out.string()}});
  log_info("average accuracy ", r.average);
  return 0;
}

int cmd_normalize(const Flags& f, const std::vector<std::string>&) {
  if (f.inputs.size() != 1) throw ConfigError("normalize takes one input file of programs, one per line");
  require(f.out, "--out");
  std::ifstream in(f.inputs.front());
  if (!in) throw InputError("cannot open " + f.inputs.front());
  std::string text;
  int partial = 0;
  for (std::string line; std::getline(in, line);) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const NormalizedProgram n = normalize_external(line);
    partial += n.partial;
    text += json({{"original", line}, {"tokens", n.tokens}, {"entity_map", n.entity_map}, {"partial", n.partial}})
                .dump() +
            "\n";
  }
  write_text(f.out, text);
  snapshot(fs::path(f.out).parent_path(), {{"input", f.inputs.front()}, {"out", f.out}});
  if (partial) log_warning(partial, " programs were only partially normalized");
  return 0;
}

int cmd_stats(const Flags& f, const std::vector<std::string>&) {
  const Corpus corpus = open_corpus(f.corpus);
  const fs::path out = f.out.empty() ? fs::path(f.corpus) : fs::path(f.out);
  json stats = stats_to_json(corpus_stats(corpus.train));
  stats["_combined"] = {{"target_vocab", combined_target_vocab(corpus).size()},
                        {"source_vocab", source_vocab(corpus, corpus.domains).size()}};
  write_json(out / "stats.json", stats);
  for (const auto& [d, s] : stats.items()) log_info(d, ": ", s.dump());
  return 0;
}

int cmd_report(const Flags& f, const std::vector<std::string>&) {
  if (f.inputs.empty()) throw ConfigError("report needs at least one result file");
  require(f.out, "--out");
  std::vector<ResultTable> tables;
  std::map<std::pair<std::string, double>, std::vector<SeedResult>> loose;
  std::map<std::pair<std::string, double>, std::set<std::string>> loose_domains;
  for (const auto& path : f.inputs) {
    const json j = read_json_file(path);
    if (j.contains("median")) {
      tables.push_back(result_table_from_json(j));
      continue;
    }
    try {
      const auto key = std::make_pair(j.at("system").get<std::string>(), j.value("parallel_fraction", 0.0));
      SeedResult r;
      r.seed = j.value("seed", std::uint64_t{0});
      r.per_domain = j.at("per_domain").get<std::map<std::string, double>>();
      r.average = j.at("average").get<double>();
      r.parameters = j.value("parameters", std::size_t{0});
      for (const auto& [d, _] : r.per_domain) loose_domains[key].insert(d);
      loose[key].push_back(std::move(r));
    } catch (const json::exception& e) {
      throw InputError(path + ": not a result file (" + e.what() + ")");
    }
  }
  for (auto& [key, seeds] : loose) {
    // Per-domain results of an independent system are merged seed by seed.
    std::map<std::uint64_t, SeedResult> merged;
    for (auto& s : seeds) {
      SeedResult& m = merged[s.seed];
      m.seed = s.seed;
      m.per_domain.insert(s.per_domain.begin(), s.per_domain.end());
      m.parameters += s.parameters;
    }
    ResultTable t;
    t.system = key.first;
    t.parallel_fraction = key.second;
    t.domains.assign(loose_domains[key].begin(), loose_domains[key].end());
    for (auto& [_, m] : merged) {
      double sum = 0.0;
      for (const auto& [d, v] : m.per_domain) sum += v;
      m.average = sum / static_cast<double>(m.per_domain.size());
      t.seeds.push_back(std::move(m));
    }
    t.aggregate();
    tables.push_back(std::move(t));
  }
  const Report rep = report(tables);
  write_text(fs::path(f.out) / "report.txt", rep.text);
  write_json(fs::path(f.out) / "report.json", rep.json);
  snapshot(f.out, {{"inputs", f.inputs}, {"out", f.out}});
  std::cerr << rep.text;
  return 0;
}

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kConfig: return 2;
    case ErrorCategory::kInput: return 3;
    default: return 4;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-domain semantic parsing with policy distillation"};
  app.require_subcommand(1);
  Flags f;
  std::string level = "info";

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "desk, full, or a JSON config file");
    sub->add_option("--seed", f.seed);
    sub->add_option("--out", f.out);
    sub->add_option("--workers", f.workers, "worker threads (default: all processors)");
    sub->add_option("--log-level", level, "debug, info, warning, error or off");
    sub->allow_extras();
    return sub;
  };
  auto training = [&](CLI::App* sub) {
    common(sub);
    sub->add_option("--corpus", f.corpus);
    sub->add_option("--beam-width", f.beam_width);
    sub->add_option("--reward-mode", f.reward_mode)->check(CLI::IsMember({"denotation", "string-match"}));
    sub->add_option("--parallel-fraction", f.parallel_fraction)->check(CLI::Range(0.0, 1.0));
    return sub;
  };

  auto* gen = common(app.add_subcommand("gen-data", "generate a synthetic multi-domain corpus"));
  gen->add_option("--spec", f.spec, "'default' or a domain bundle JSON file");
  gen->add_option("--per-domain", f.per_domain);
  auto* teacher = training(app.add_subcommand("train-teacher", "train one domain expert from denotations"));
  teacher->add_option("--domain", f.domain);
  training(app.add_subcommand("train-combined", "train one weakly supervised model on pooled domains"));
  auto* distill = training(app.add_subcommand("distill", "distill teachers into a student"));
  distill->add_option("--teachers", f.teachers, "comma-separated teacher checkpoints or directories");
  distill->add_option("--domain", f.domain, "distill a single-domain student instead");
  auto* eval = common(app.add_subcommand("eval", "score a checkpoint on the test split"));
  eval->add_option("--model", f.model);
  eval->add_option("--corpus", f.corpus);
  eval->add_option("--beam-width", f.beam_width);
  auto* norm = common(app.add_subcommand("normalize", "normalize external lambda-DCS programs"));
  norm->add_option("input", f.inputs);
  auto* stats = common(app.add_subcommand("stats", "corpus statistics"));
  stats->add_option("--corpus", f.corpus);
  auto* rep = common(app.add_subcommand("report", "tabulate result files"));
  rep->add_option("results", f.inputs);

  if (argc > 1 && argv[1][0] != '-') {
    const std::string name = argv[1];
    const auto subs = app.get_subcommands([](CLI::App*) { return true; });
    if (std::none_of(subs.begin(), subs.end(), [&](CLI::App* s) { return s->get_name() == name; })) {
      std::cerr << "error:config: unknown subcommand '" << name << "'\n" << app.help();
      return 2;
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error:config: " << e.what() << "\n" << app.help();
    return 2;
  }

  static const std::map<std::string, LogLevel> levels = {{"debug", LogLevel::kDebug},
                                                         {"info", LogLevel::kInfo},
                                                         {"warning", LogLevel::kWarning},
                                                         {"error", LogLevel::kError},
                                                         {"off", LogLevel::kOff}};
  if (!levels.count(level)) {
    std::cerr << "error:config: unknown log level '" << level << "'\n";
    return 2;
  }
  set_log_level(levels.at(level));

  using Handler = int (*)(const Flags&, const std::vector<std::string>&);
  static const std::map<std::string, Handler> handlers = {
      {"gen-data", cmd_gen_data}, {"train-teacher", cmd_train_teacher}, {"train-combined", cmd_train_combined},
      {"distill", cmd_distill},   {"eval", cmd_eval},                   {"normalize", cmd_normalize},
      {"stats", cmd_stats},       {"report", cmd_report}};
  CLI::App* sub = app.get_subcommands().front();
  try {
    const std::vector<std::string> extras = sub->remaining();
    if (!extras.empty() && (sub->get_name() == "eval" || sub->get_name() == "normalize" ||
                            sub->get_name() == "stats" || sub->get_name() == "report")) {
      throw ConfigError("unknown flag " + extras.front());
    }
    return handlers.at(sub->get_name())(f, extras);
  } catch (const Error& e) {
    std::cerr << "error:" << to_string(e.category()) << ": " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error:invariant: " << e.what() << "\n";
    return 4;
  }
}
