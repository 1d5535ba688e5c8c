#include "unisp/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <set>
#include <sstream>

#include "unisp/error.hpp"
#include "unisp/evaluation.hpp"
#include "unisp/log.hpp"
#include "unisp/parallel.hpp"

namespace unisp {

namespace {

struct SystemName {
  System system;
  std::string_view name;
};

constexpr SystemName kSystems[] = {
    {System::kWeakIndependent, "weak-independent"},
    {System::kWeakCombined, "weak-combined"},
    {System::kDistillIndependent, "distill-independent"},
    {System::kDistillCombined, "distill-combined"},
    {System::kSupervised, "supervised"},
};

std::uint64_t init_seed(std::uint64_t seed, System system) {
  int salt = 0;
  switch (system) {
    case System::kWeakIndependent: salt = 1; break;
    case System::kWeakCombined: salt = 2; break;
    case System::kDistillCombined: salt = 3; break;
    case System::kSupervised: salt = 4; break;
    case System::kDistillIndependent: salt = 5; break;
  }
  return seed * 100 + static_cast<std::uint64_t>(salt);
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n == 0) return 0.0;
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean_of(const std::map<std::string, double>& m) {
  if (m.empty()) return 0.0;
  double s = 0.0;
  for (const auto& [_, v] : m) s += v;
  return s / static_cast<double>(m.size());
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::string fmt_fraction(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2g", v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

const Parser& lookup_teacher(const ExperimentConfig& config, TeacherBank* bank,
                             std::map<std::string, LoadedParser>& loaded, std::uint64_t seed,
                             const std::string& domain) {
  if (bank) {
    if (auto s = bank->find(seed); s != bank->end()) {
      if (auto d = s->second.find(domain); d != s->second.end()) return d->second;
    }
  }
  if (auto it = loaded.find(domain); it != loaded.end()) return it->second.parser;
  std::stringstream list(config.teachers);
  for (std::string item; std::getline(list, item, ',');) {
    if (item.empty()) continue;
    const auto file = teacher_checkpoint_path(item, seed, domain);
    if (std::filesystem::exists(file)) return loaded.emplace(domain, load_checkpoint(file)).first->second.parser;
    std::filesystem::path single(item);
    if (std::filesystem::is_directory(single)) single /= "model.json";
    if (!std::filesystem::is_regular_file(single)) continue;
    LoadedParser l = load_checkpoint(single);
    if (l.metadata.value("domain", std::string()) == domain) return loaded.emplace(domain, std::move(l)).first->second.parser;
  }
  throw InputError("no teacher checkpoint for domain '" + domain + "' (seed " + std::to_string(seed) +
                   "); run weak-independent or `unisp train-teacher --domain " + domain + "` first");
}

}  // namespace

std::string_view to_string(System system) {
  for (const auto& s : kSystems) {
    if (s.system == system) return s.name;
  }
  return "unknown";
}

System system_from_string(std::string_view name) {
  for (const auto& s : kSystems) {
    if (s.name == name) return s.system;
  }
  throw ConfigError("unknown system '" + std::string(name) + "'");
}

bool is_independent(System system) {
  return system == System::kWeakIndependent || system == System::kDistillIndependent;
}

ModelConfig ExperimentConfig::default_teacher_model() {
  ModelConfig c;
  c.num_layers = 1;
  c.hidden_size = 300;
  return c;
}

ModelConfig ExperimentConfig::default_student_model() {
  ModelConfig c;
  c.num_layers = 2;
  c.hidden_size = 300;
  return c;
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
  if (!(parallel_fraction >= 0.0 && parallel_fraction <= 1.0)) {
    throw ConfigError("parallel_fraction must lie in [0,1]");
  }
  for (ModelConfig m : {teacher_model, student_model}) {
    // Vocabulary sizes are filled in from the corpus when the model is built.
    m.src_vocab_size = std::max(m.src_vocab_size, 1);
    m.tgt_vocab_size = std::max(m.tgt_vocab_size, 3);
    m.validate();
  }
  train.validate();
}

nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"corpus", c.corpus},
          {"system", std::string(to_string(c.system))},
          {"teacher_model", to_json(c.teacher_model)},
          {"student_model", to_json(c.student_model)},
          {"train", to_json(c.train)},
          {"parallel_fraction", c.parallel_fraction},
          {"seeds", c.seeds},
          {"domain", c.domain},
          {"teachers", c.teachers},
          {"out", c.out}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j, ExperimentConfig c) {
  if (!j.is_object()) throw ConfigError("experiment config must be an object");
  static const std::set<std::string> known = {"corpus",           "system", "teacher_model", "student_model", "train",
                                              "parallel_fraction", "seeds", "domain", "teachers", "out"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown experiment config key '" + key + "'");
  }
  try {
    c.corpus = j.value("corpus", c.corpus);
    if (j.contains("system")) c.system = system_from_string(j.at("system").get<std::string>());
    if (j.contains("teacher_model")) c.teacher_model = model_config_from_json(j.at("teacher_model"), c.teacher_model);
    if (j.contains("student_model")) c.student_model = model_config_from_json(j.at("student_model"), c.student_model);
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"), c.train);
    c.parallel_fraction = j.value("parallel_fraction", c.parallel_fraction);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.domain = j.value("domain", c.domain);
    c.teachers = j.value("teachers", c.teachers);
    c.out = j.value("out", c.out);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig desk_config(System system, double parallel_fraction) {
  ExperimentConfig c;
  c.system = system;
  for (ModelConfig* m : {&c.teacher_model, &c.student_model}) {
    m->hidden_size = 48;
    m->embed_size = 48;
    m->max_tgt_len = 20;
  }
  c.train.step.optimizer.learning_rate = 0.01;
  c.train.max_epochs = 60;
  c.parallel_fraction = parallel_fraction;
  return c;
}

int evaluation_width(const ExperimentConfig& config) {
  if (config.system == System::kSupervised) return 1;
  return config.train.eval_beam_width > 0 ? config.train.eval_beam_width : config.train.beam_width;
}

TrainedModel train_system_model(const ExperimentConfig& config, const Corpus& corpus, std::uint64_t seed,
                                const std::string& domain, const TeacherSet* teachers) {
  config.validate();
  TrainConfig tc = config.train;
  tc.seed = seed;
  const bool independent = is_independent(config.system);
  if (independent && std::find(corpus.domains.begin(), corpus.domains.end(), domain) == corpus.domains.end()) {
    throw ConfigError("unknown domain '" + domain + "'");
  }
  const std::vector<std::string> domains = independent ? std::vector<std::string>{domain} : corpus.domains;
  const ModelConfig& mc = config.system == System::kWeakIndependent ? config.teacher_model : config.student_model;
  Vocab target = independent ? domain_target_vocab(corpus, domain) : combined_target_vocab(corpus);
  TrainedModel out{make_parser(mc, source_vocab(corpus, domains), std::move(target), init_seed(seed, config.system)),
                   {}};
  const auto train = independent ? corpus.of_domain(Split::kTrain, domain) : corpus.train;
  const auto valid = independent ? corpus.of_domain(Split::kValid, domain) : corpus.valid;
  switch (config.system) {
    case System::kSupervised:
      out.result = train_supervised(out.parser, train, valid, corpus, tc);
      break;
    case System::kWeakIndependent:
    case System::kWeakCombined:
      out.result = pretrain_then(ContinueMode::kWeak, config.parallel_fraction, out.parser, train, valid, corpus, tc);
      break;
    case System::kDistillIndependent:
    case System::kDistillCombined: {
      if (!teachers) throw ConfigError("distillation needs teachers");
      TeacherSet used;
      for (const auto& d : domains) {
        auto it = teachers->find(d);
        if (it == teachers->end()) {
          throw InputError("no teacher for domain '" + d + "'; run `unisp train-teacher --domain " + d + "` first");
        }
        used.emplace(d, it->second);
      }
      out.result =
          pretrain_then(ContinueMode::kDistill, config.parallel_fraction, out.parser, train, valid, corpus, tc, &used);
      break;
    }
  }
  return out;
}

std::filesystem::path teacher_checkpoint_path(const std::filesystem::path& root, std::uint64_t seed,
                                              const std::string& domain) {
  return root / ("seed-" + std::to_string(seed)) / (domain + ".json");
}

ResultTable run_experiment(const ExperimentConfig& config, const Corpus& corpus, TeacherBank* bank) {
  config.validate();
  if (corpus.domains.empty()) throw InputError("corpus has no domains");
  const std::string system(to_string(config.system));
  const std::string corpus_hash = combined_target_vocab(corpus).hash();
  const int width = evaluation_width(config);
  const bool independent = is_independent(config.system);
  const bool distill = config.system == System::kDistillIndependent || config.system == System::kDistillCombined;

  ResultTable table;
  table.system = system;
  table.parallel_fraction = config.system == System::kSupervised ? 0.0 : config.parallel_fraction;
  table.domains = corpus.domains;

  for (const std::uint64_t seed : config.seeds) {
    log_info(system, ": seed ", seed);
    std::map<std::string, LoadedParser> loaded;
    TeacherSet teachers;
    if (distill) {
      for (const auto& d : corpus.domains) teachers[d] = &lookup_teacher(config, bank, loaded, seed, d);
    }
    const std::vector<std::string> cells = independent ? corpus.domains : std::vector<std::string>{""};
    std::vector<std::optional<TrainedModel>> models(cells.size());
    std::vector<EvalResult> evals(cells.size());
    const int workers = resolve_workers(config.train.workers);
    const int cell_workers = cells.size() > 1 ? workers : 1;
    ExperimentConfig cell_config = config;
    if (cell_workers > 1) cell_config.train.workers = 1;
    parallel_for(cells.size(), cell_workers, [&](std::size_t i) {
      models[i].emplace(train_system_model(cell_config, corpus, seed, cells[i], distill ? &teachers : nullptr));
      const auto test = independent ? corpus.of_domain(Split::kTest, cells[i]) : corpus.test;
      evals[i] = evaluate(models[i]->parser, test, corpus, width, cell_config.train.workers);
    });

    SeedResult r;
    r.seed = seed;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      for (const auto& [d, acc] : evals[i].accuracy) r.per_domain[d] = acc;
      r.parameters += models[i]->parser.model.num_parameters();
    }
    for (const auto& d : corpus.domains) r.per_domain.try_emplace(d, 0.0);
    r.average = mean_of(r.per_domain);
    log_info(system, ": seed ", seed, " average ", r.average);
    table.seeds.push_back(std::move(r));

    for (std::size_t i = 0; i < cells.size(); ++i) {
      const std::string name = independent ? cells[i] : system;
      if (!config.out.empty()) {
        nlohmann::json meta = {{"system", system}, {"seed", seed}, {"domain", independent ? cells[i] : ""}};
        save_checkpoint(models[i]->parser, teacher_checkpoint_path(config.out, seed, name), corpus_hash, meta);
        models[i]->result.log.write_csv(config.out + "/seed-" + std::to_string(seed) + "/" + name + ".log.csv");
      }
      if (bank && config.system == System::kWeakIndependent) {
        (*bank)[seed].insert_or_assign(cells[i], std::move(models[i]->parser));
      }
    }
  }
  table.aggregate();
  table.validate();
  return table;
}

void ResultTable::aggregate() {
  median.clear();
  for (const auto& d : domains) {
    std::vector<double> v;
    for (const auto& s : seeds) {
      auto it = s.per_domain.find(d);
      v.push_back(it == s.per_domain.end() ? 0.0 : it->second);
    }
    median[d] = median_of(std::move(v));
  }
  median_average = mean_of(median);
}

void ResultTable::validate() const {
  const std::set<std::string> expected(domains.begin(), domains.end());
  auto check_row = [&](const std::map<std::string, double>& row, double average, const std::string& what) {
    std::set<std::string> keys;
    for (const auto& [d, v] : row) {
      keys.insert(d);
      if (!(v >= 0.0 && v <= 100.0)) throw ContractViolation(what + ": accuracy for " + d + " outside [0,100]");
    }
    if (keys != expected) throw ContractViolation(what + ": domain set does not match the table");
    if (std::abs(mean_of(row) - average) > 1e-9) throw ContractViolation(what + ": average is not the domain mean");
  };
  for (const auto& s : seeds) check_row(s.per_domain, s.average, system + " seed " + std::to_string(s.seed));
  check_row(median, median_average, system + " median");
}

nlohmann::json to_json(const SeedResult& r, const std::string& system) {
  return {{"system", system},
          {"seed", r.seed},
          {"per_domain", r.per_domain},
          {"average", r.average},
          {"parameters", r.parameters}};
}

nlohmann::json to_json(const ResultTable& t) {
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& s : t.seeds) seeds.push_back(to_json(s, t.system));
  return {{"system", t.system},
          {"parallel_fraction", t.parallel_fraction},
          {"domains", t.domains},
          {"seeds", std::move(seeds)},
          {"median", {{"per_domain", t.median}, {"average", t.median_average}}}};
}

ResultTable result_table_from_json(const nlohmann::json& j) {
  ResultTable t;
  try {
    t.system = j.at("system").get<std::string>();
    t.parallel_fraction = j.value("parallel_fraction", 0.0);
    t.domains = j.at("domains").get<std::vector<std::string>>();
    for (const auto& js : j.at("seeds")) {
      SeedResult r;
      r.seed = js.at("seed").get<std::uint64_t>();
      r.per_domain = js.at("per_domain").get<std::map<std::string, double>>();
      r.average = js.at("average").get<double>();
      r.parameters = js.value("parameters", std::size_t{0});
      t.seeds.push_back(std::move(r));
    }
    t.median = j.at("median").at("per_domain").get<std::map<std::string, double>>();
    t.median_average = j.at("median").at("average").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed result table: ") + e.what());
  }
  try {
    t.validate();
  } catch (const ContractViolation& e) {
    throw InputError(std::string("inconsistent result table: ") + e.what());
  }
  return t;
}

Report report(const std::vector<ResultTable>& tables) {
  Report rep;
  rep.json = {{"domains", nlohmann::json::array()}, {"tables", nlohmann::json::array()}, {"series", nlohmann::json::object()}};
  if (tables.empty()) return rep;
  const std::set<std::string> domains(tables.front().domains.begin(), tables.front().domains.end());
  for (const auto& t : tables) {
    if (std::set<std::string>(t.domains.begin(), t.domains.end()) != domains) {
      throw ConfigError("result tables cover different domain sets (" + tables.front().system + " vs " + t.system + ")");
    }
  }
  rep.json["domains"] = domains;

  std::map<std::string, std::set<double>> fractions;
  for (const auto& t : tables) fractions[t.system].insert(t.parallel_fraction);
  auto label = [&](const ResultTable& t) {
    return fractions[t.system].size() > 1 || t.parallel_fraction > 0.0
               ? t.system + " @" + fmt_fraction(t.parallel_fraction)
               : t.system;
  };

  std::size_t first = 6;
  for (const auto& d : domains) first = std::max(first, d.size());
  first += 2;
  std::ostringstream os;
  os << pad("domain", first);
  for (const auto& t : tables) os << " | " << label(t);
  os << '\n';
  auto row = [&](const std::string& name, auto&& value) {
    os << pad(name, first);
    for (const auto& t : tables) os << " | " << pad(fmt(value(t)), label(t).size());
    os << '\n';
  };
  for (const auto& d : domains) row(d, [&](const ResultTable& t) { return t.median.at(d); });
  row("average", [](const ResultTable& t) { return t.median_average; });

  bool header = false;
  for (const auto& [system, fs] : fractions) {
    if (fs.size() < 2) continue;
    if (!header) os << "\nparallel-fraction series (median average accuracy)\n";
    header = true;
    nlohmann::json series = nlohmann::json::array();
    os << system << ':';
    for (double f : fs) {
      for (const auto& t : tables) {
        if (t.system != system || t.parallel_fraction != f) continue;
        os << "  " << fmt_fraction(f) << " -> " << fmt(t.median_average);
        series.push_back({{"parallel_fraction", f}, {"average", t.median_average}, {"per_domain", t.median}});
        break;
      }
    }
    os << '\n';
    rep.json["series"][system] = std::move(series);
  }
  for (const auto& t : tables) rep.json["tables"].push_back(to_json(t));
  rep.text = os.str();
  return rep;
}

}  // namespace unisp
