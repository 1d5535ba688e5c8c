#include "unisp/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <numeric>

#include "unisp/error.hpp"
#include "unisp/evaluation.hpp"
#include "unisp/log.hpp"
#include "unisp/parallel.hpp"
#include "unisp/random.hpp"

namespace unisp {

std::string_view to_string(RewardMode mode) {
  return mode == RewardMode::kDenotation ? "denotation" : "string-match";
}

RewardMode reward_mode_from_string(const std::string& name) {
  if (name == "denotation") return RewardMode::kDenotation;
  if (name == "string-match") return RewardMode::kStringMatch;
  throw ConfigError("unknown reward mode '" + name + "' (expected denotation or string-match)");
}

std::vector<Example> make_examples(const Parser& parser, const std::vector<Instance>& instances,
                                   const Corpus& corpus) {
  std::vector<Example> out;
  out.reserve(instances.size());
  const auto max_len = static_cast<std::size_t>(parser.model.config().max_tgt_len);
  for (const auto& in : instances) {
    Example ex;
    ex.instance = &in;
    ex.kb = &corpus.kb(in.domain);
    ex.source = parser.encode_utterance(in.utterance);
    if (!in.program.empty()) {
      ex.program = parser.encode_program(in.program);
      if (ex.program && ex.program->size() > max_len) ex.program.reset();
    }
    out.push_back(std::move(ex));
  }
  return out;
}

RewardFn make_reward(RewardMode mode) {
  if (mode == RewardMode::kDenotation) {
    return [](const Example& ex, const std::vector<std::string>& tokens) {
      return soft_f1(run_program(tokens, *ex.kb, ex.instance->entity_map), ex.instance->denotation);
    };
  }
  return [](const Example& ex, const std::vector<std::string>& tokens) {
    if (ex.instance->program.empty()) throw ContractViolation("string-match reward needs gold programs");
    return static_cast<double>(string_match_reward(tokens, ex.instance->program));
  };
}

RewardRecord score_beam(const Parser& parser, const Example& example, int beam_width, const RewardFn& reward,
                        const BeamExploration& explore) {
  RewardRecord rec;
  rec.instance_id = example.instance ? example.instance->id : std::string();
  rec.beam = parser.model.beam_search(example.source, beam_width, explore).items;
  const std::size_t n = rec.beam.size();
  rec.rewards.resize(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (rec.beam[i].finished) rec.rewards[i] = reward(example, parser.decode(rec.beam[i].tokens));
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  rec.baseline = std::accumulate(rec.rewards.begin(), rec.rewards.end(), 0.0) * inv_n;
  rec.centered.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double diff = 0.0;
    for (std::size_t j = 0; j < n; ++j) diff += rec.rewards[i] - rec.rewards[j];
    rec.centered[i] = diff * inv_n;
  }
  double top = -std::numeric_limits<double>::infinity();
  for (const auto& h : rec.beam) top = std::max(top, h.log_prob);
  rec.weights.resize(n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += rec.weights[i] = std::exp(rec.beam[i].log_prob - top);
  for (std::size_t i = 0; i < n; ++i) {
    rec.weights[i] /= z;
    rec.expected_reward += rec.weights[i] * rec.rewards[i];
  }
  return rec;
}

namespace {

void finish_step(Parser& parser, const StepOptions& options) {
  if (!options.apply) return;
  parser.model.params().clip_grad_norm(options.clip_norm);
  rmsprop_update(parser.model.params(), options.optimizer);
}

// Sum of per-step cross-entropies of a teacher-forced sequence.
template <typename Target>
Var sequence_xent(Graph& g, const std::vector<Var>& logits, std::size_t steps, Target&& target_of) {
  Var total = g.softmax_xent(logits[0], target_of(0));
  for (std::size_t j = 1; j < steps; ++j) total = g.add(total, g.softmax_xent(logits[j], target_of(j)));
  return total;
}

}  // namespace

double supervised_step(Parser& parser, std::span<const Example> batch, const StepOptions& options) {
  std::size_t tokens = 0;
  for (const auto& ex : batch) {
    if (!ex.program) {
      throw ContractViolation("supervised step: instance " + (ex.instance ? ex.instance->id : std::string("?")) +
                              " has no gold program");
    }
    tokens += ex.program->size();
  }
  if (tokens == 0) return 0.0;
  Seq2Seq& model = parser.model;
  model.params().zero_grad();
  double total = 0.0;
  for (const auto& ex : batch) {
    Graph g;
    const Weights w = model.bind(g);
    const Encoding enc = model.encode(g, w, ex.source);
    const auto& program = *ex.program;
    const auto logits = model.teacher_force(g, w, enc, program);
    Var loss = sequence_xent(g, logits, program.size(), [&](std::size_t j) { return std::size_t{program[j]}; });
    total += g.scalar(loss);
    g.backward(g.scale(loss, 1.0 / static_cast<double>(tokens)));
  }
  finish_step(parser, options);
  return total / static_cast<double>(tokens);
}

ReinforceOutcome reinforce_step(Parser& parser, std::span<const Example> batch, int beam_width,
                                const RewardFn& reward, const StepOptions& options,
                                const BeamExploration& explore) {
  if (beam_width < 2) throw ConfigError("REINFORCE needs a beam width of at least 2");
  ReinforceOutcome out;
  if (batch.empty()) return out;
  Seq2Seq& model = parser.model;
  for (const auto& ex : batch) out.records.push_back(score_beam(parser, ex, beam_width, reward, explore));
  model.params().zero_grad();
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const RewardRecord& rec = out.records[b];
    out.expected_reward += rec.expected_reward * inv_batch;
    Graph g;
    std::optional<Weights> w;
    std::optional<Encoding> enc;
    std::optional<Var> loss;
    for (std::size_t i = 0; i < rec.beam.size(); ++i) {
      const double coef = rec.weights[i] * rec.centered[i] * inv_batch;
      if (coef == 0.0) continue;
      if (!w) {
        w = model.bind(g);
        enc = model.encode(g, *w, batch[b].source);
      }
      const auto& tokens = rec.beam[i].tokens;
      const auto logits = model.teacher_force(g, *w, *enc, tokens);
      Var term = g.scale(
          sequence_xent(g, logits, tokens.size(), [&](std::size_t j) { return std::size_t{tokens[j]}; }), coef);
      loss = loss ? g.add(*loss, term) : term;
    }
    if (loss) g.backward(*loss);
  }
  finish_step(parser, options);
  return out;
}

TeacherTrace teacher_trace(const Parser& teacher, const Instance& instance, const Vocab& combined,
                           double temperature) {
  const auto src = teacher.encode_utterance(instance.utterance);
  const Hypothesis greedy = teacher.model.greedy(src);
  const auto rows = teacher.model.step_distributions(src, greedy.tokens, temperature);
  std::vector<TokenId> to_combined(teacher.target.size());
  for (TokenId t = 0; t < teacher.target.size(); ++t) {
    const auto id = combined.find(teacher.target.token(t));
    if (!id) {
      throw ContractViolation("teacher token '" + teacher.target.token(t) + "' is not in the combined vocabulary");
    }
    to_combined[t] = *id;
  }
  TeacherTrace trace;
  trace.instance_id = instance.id;
  trace.domain = instance.domain;
  for (TokenId t : greedy.tokens) trace.prefix.push_back(to_combined[t]);
  for (const auto& row : rows) {
    std::vector<double> full(combined.size(), 0.0);
    for (std::size_t t = 0; t < row.size(); ++t) full[to_combined[t]] += row[t];
    trace.rows.push_back(std::move(full));
  }
  return trace;
}

nlohmann::json to_json(const TeacherTrace& trace, const Vocab& combined) {
  std::vector<std::string> prefix;
  for (TokenId t : trace.prefix) prefix.push_back(combined.token(t));
  return {{"instance_id", trace.instance_id}, {"domain", trace.domain}, {"prefix", prefix}, {"rows", trace.rows}};
}

void write_traces(const std::vector<TeacherTrace>& traces, const Vocab& combined, const std::filesystem::path& file) {
  std::ofstream os(file);
  if (!os) throw InputError("cannot write " + file.string());
  for (const auto& t : traces) os << to_json(t, combined).dump() << '\n';
}

double distill_step(Parser& student, std::span<const DistillExample> batch, const StepOptions& options) {
  std::size_t steps = 0;
  for (const auto& ex : batch) {
    if (!ex.trace || ex.trace->rows.size() != ex.trace->prefix.size()) {
      throw ContractViolation("distill step: trace rows must match its prefix");
    }
    for (const auto& row : ex.trace->rows) {
      if (row.size() != student.target.size()) {
        throw ContractViolation("distill step: trace row width " + std::to_string(row.size()) +
                                " differs from student vocabulary " + std::to_string(student.target.size()));
      }
    }
    steps += ex.trace->rows.size();
  }
  if (steps == 0) return 0.0;
  Seq2Seq& model = student.model;
  model.params().zero_grad();
  double total = 0.0;
  for (const auto& ex : batch) {
    const TeacherTrace& trace = *ex.trace;
    if (trace.prefix.empty()) continue;
    Graph g;
    const Weights w = model.bind(g);
    const Encoding enc = model.encode(g, w, ex.source);
    const auto logits = model.teacher_force(g, w, enc, trace.prefix);
    Var loss = sequence_xent(g, logits, trace.prefix.size(),
                             [&](std::size_t j) { return std::span<const double>(trace.rows[j]); });
    total += g.scalar(loss);
    g.backward(g.scale(loss, 1.0 / static_cast<double>(steps)));
  }
  finish_step(student, options);
  return total / static_cast<double>(steps);
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (max_epochs < 0) throw ConfigError("train.max_epochs must be non-negative");
  if (patience < 1) throw ConfigError("train.patience must be positive");
  if (beam_width < 1) throw ConfigError("train.beam_width must be positive");
  if (eval_beam_width < 0) throw ConfigError("train.eval_beam_width must be non-negative");
  if (!(temperature > 0.0)) throw ConfigError("train.temperature must be positive");
  if (!(explore_epsilon >= 0.0 && explore_epsilon <= 1.0)) throw ConfigError("train.explore_epsilon must be in [0,1]");
  if (!(step.clip_norm > 0.0)) throw ConfigError("train.clip_norm must be positive");
  if (!(step.optimizer.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (!(step.optimizer.decay >= 0.0 && step.optimizer.decay < 1.0)) throw ConfigError("train.decay must be in [0,1)");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"beam_width", c.beam_width},
          {"eval_beam_width", c.eval_beam_width},
          {"reward_mode", std::string(to_string(c.reward_mode))},
          {"temperature", c.temperature},
          {"explore_epsilon", c.explore_epsilon},
          {"clip_norm", c.step.clip_norm},
          {"learning_rate", c.step.optimizer.learning_rate},
          {"decay", c.step.optimizer.decay},
          {"epsilon", c.step.optimizer.eps},
          {"seed", c.seed},
          {"workers", c.workers}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("training config must be an object");
  static const std::vector<std::string> known = {"batch_size", "max_epochs",  "patience",      "beam_width",
                                                 "eval_beam_width", "reward_mode", "temperature", "explore_epsilon", "clip_norm",
                                                 "learning_rate", "decay",  "epsilon",       "seed", "workers"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown training config key '" + key + "'");
    }
  }
  try {
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.beam_width = j.value("beam_width", c.beam_width);
    c.eval_beam_width = j.value("eval_beam_width", c.eval_beam_width);
    if (j.contains("reward_mode")) c.reward_mode = reward_mode_from_string(j.at("reward_mode").get<std::string>());
    c.temperature = j.value("temperature", c.temperature);
    c.explore_epsilon = j.value("explore_epsilon", c.explore_epsilon);
    c.step.clip_norm = j.value("clip_norm", c.step.clip_norm);
    c.step.optimizer.learning_rate = j.value("learning_rate", c.step.optimizer.learning_rate);
    c.step.optimizer.decay = j.value("decay", c.step.optimizer.decay);
    c.step.optimizer.eps = j.value("epsilon", c.step.optimizer.eps);
    c.seed = j.value("seed", c.seed);
    c.workers = j.value("workers", c.workers);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad training config: ") + e.what());
  }
  c.validate();
  return c;
}

void TrainingLog::add(long step, std::string split, std::string metric, double value) {
  rows.push_back({step, std::move(split), std::move(metric), value});
}

void TrainingLog::write_csv(const std::filesystem::path& file) const {
  std::ofstream os(file);
  if (!os) throw InputError("cannot write " + file.string());
  os << "step,split,metric,value\n";
  os.precision(17);
  for (const auto& r : rows) os << r.step << ',' << r.split << ',' << r.metric << ',' << r.value << '\n';
}

namespace {

std::vector<std::vector<double>> snapshot(const ParamStore& params) {
  std::vector<std::vector<double>> out;
  for (const Parameter* p : params.all()) out.emplace_back(p->value.values().begin(), p->value.values().end());
  return out;
}

void restore(ParamStore& params, const std::vector<std::vector<double>>& values) {
  auto all = params.all();
  for (std::size_t i = 0; i < all.size(); ++i) std::copy(values[i].begin(), values[i].end(), all[i]->value.values().begin());
}

int eval_width(const TrainConfig& c) { return c.eval_beam_width > 0 ? c.eval_beam_width : c.beam_width; }

double valid_accuracy(const Parser& parser, const std::vector<Instance>& valid, const Corpus& corpus,
                      const TrainConfig& config) {
  if (valid.empty()) return 0.0;
  const EvalResult r = evaluate(parser, valid, corpus, eval_width(config), config.workers);
  double hits = 0.0;
  for (const auto& rec : r.records) hits += rec.hard;
  return hits / static_cast<double>(valid.size());
}

double mean_loss(const Parser& parser, const std::vector<Example>& examples) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& ex : examples) {
    if (!ex.program) continue;
    Graph g;
    const Weights w = parser.model.bind_frozen(g);
    const Encoding enc = parser.model.encode(g, w, ex.source);
    const auto logits = parser.model.teacher_force(g, w, enc, *ex.program);
    for (std::size_t j = 0; j < logits.size(); ++j) total -= log_softmax(g.value(logits[j]))[(*ex.program)[j]];
    tokens += ex.program->size();
  }
  return tokens ? total / static_cast<double>(tokens) : 0.0;
}

// Shared epoch loop: shuffled mini-batches, evaluation after every epoch,
// patience-based stopping, best parameters restored.
template <typename Step, typename Score>
TrainResult run_epochs(Parser& parser, std::size_t n_train, const TrainConfig& config, const std::string& train_metric,
                       const std::string& valid_metric, Step&& step, Score&& score, bool loss_tie_break = false) {
  config.validate();
  TrainResult result;
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), std::size_t{0});
  double best = score();
  double best_loss = std::numeric_limits<double>::infinity();
  result.log.add(0, "valid", valid_metric, best);
  auto best_params = snapshot(parser.model.params());
  int since_best = 0;
  long global_step = 0;
  for (int epoch = 1; epoch <= config.max_epochs && n_train > 0; ++epoch) {
    shuffle(order, rng);
    double epoch_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < n_train; start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(n_train, start + static_cast<std::size_t>(config.batch_size));
      const double m = step(std::span<const std::size_t>(order.data() + start, end - start));
      ++global_step;
      epoch_sum += m;
      ++batches;
      result.log.add(global_step, "train", train_metric, m);
    }
    const double current = score();
    result.log.add(global_step, "valid", valid_metric, current);
    result.epochs = epoch;
    log_info("epoch ", epoch, " ", train_metric, "=", epoch_sum / std::max(1, batches), " valid ", valid_metric, "=",
             current);
    const double train_loss = epoch_sum / std::max(1, batches);
    if (current > best || (loss_tie_break && current == best && train_loss < best_loss)) {
      best = current;
      best_loss = train_loss;
      best_params = snapshot(parser.model.params());
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  restore(parser.model.params(), best_params);
  result.best_metric = best;
  return result;
}

template <typename T>
std::vector<T> gather(const std::vector<T>& items, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(items[i]);
  return out;
}

void append_log(TrainResult& into, const TrainResult& from, const std::string& prefix) {
  for (const auto& r : from.log.rows) into.log.add(r.step, prefix + r.split, r.metric, r.value);
}

}  // namespace

TrainResult train_supervised(Parser& parser, const std::vector<Instance>& train, const std::vector<Instance>& valid,
                             const Corpus& corpus, const TrainConfig& config, StopMetric metric) {
  const auto train_ex = make_examples(parser, train, corpus);
  const auto max_len = static_cast<std::size_t>(parser.model.config().max_tgt_len);
  for (const auto& ex : train_ex) {
    if (ex.program) continue;
    const std::size_t needed = ex.instance->program.size() + 1;
    if (needed > max_len) {
      throw ConfigError("supervised training: instance " + ex.instance->id + " needs max_tgt_len >= " +
                        std::to_string(needed) + ", got " + std::to_string(max_len));
    }
    throw InputError("supervised training: instance " + ex.instance->id + " has no usable gold program");
  }
  const auto valid_ex = make_examples(parser, valid, corpus);
  auto step = [&](std::span<const std::size_t> idx) {
    const auto batch = gather(train_ex, idx);
    return supervised_step(parser, batch, config.step);
  };
  if (metric == StopMetric::kLoss) {
    auto score = [&] { return -mean_loss(parser, valid_ex); };
    TrainResult r = run_epochs(parser, train_ex.size(), config, "loss", "neg_loss", step, score);
    return r;
  }
  auto score = [&] { return valid_accuracy(parser, valid, corpus, config); };
  return run_epochs(parser, train_ex.size(), config, "loss", "accuracy", step, score, true);
}

TrainResult train_weak(Parser& parser, const std::vector<Instance>& train, const std::vector<Instance>& valid,
                       const Corpus& corpus, const TrainConfig& config) {
  const auto train_ex = make_examples(parser, train, corpus);
  const RewardFn reward = make_reward(config.reward_mode);
  std::mt19937_64 explore_rng(config.seed ^ 0x5bd1e995ULL);
  const BeamExploration explore{config.explore_epsilon, &explore_rng};
  auto step = [&](std::span<const std::size_t> idx) {
    const auto batch = gather(train_ex, idx);
    return reinforce_step(parser, batch, config.beam_width, reward, config.step, explore).expected_reward;
  };
  auto score = [&] { return valid_accuracy(parser, valid, corpus, config); };
  return run_epochs(parser, train_ex.size(), config, "expected_reward", "accuracy", step, score);
}

std::vector<TeacherTrace> compute_traces(const TeacherSet& teachers, const std::vector<Instance>& instances,
                                         const Vocab& combined, double temperature, int workers) {
  for (const auto& in : instances) {
    if (!teachers.count(in.domain)) {
      throw ConfigError("no teacher for domain '" + in.domain + "'; train-teacher --domain " + in.domain + " first");
    }
  }
  std::vector<TeacherTrace> traces(instances.size());
  parallel_for(instances.size(), workers, [&](std::size_t i) {
    traces[i] = teacher_trace(*teachers.at(instances[i].domain), instances[i], combined, temperature);
  });
  return traces;
}

TrainResult train_distill(Parser& student, const std::vector<Instance>& train, const std::vector<TeacherTrace>& traces,
                          const std::vector<Instance>& valid, const Corpus& corpus, const TrainConfig& config) {
  if (traces.size() != train.size()) throw ContractViolation("one teacher trace per training instance is required");
  std::vector<DistillExample> examples;
  for (std::size_t i = 0; i < train.size(); ++i) {
    examples.push_back({student.encode_utterance(train[i].utterance), &traces[i]});
  }
  auto step = [&](std::span<const std::size_t> idx) {
    const auto batch = gather(examples, idx);
    return distill_step(student, batch, config.step);
  };
  auto score = [&] { return valid_accuracy(student, valid, corpus, config); };
  return run_epochs(student, examples.size(), config, "distill_loss", "accuracy", step, score);
}

std::vector<Instance> parallel_subset(const std::vector<Instance>& train, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("parallel fraction must be in [0, 1]");
  std::vector<std::size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  shuffle(idx, rng);
  idx.resize(static_cast<std::size_t>(std::llround(fraction * static_cast<double>(train.size()))));
  std::sort(idx.begin(), idx.end());
  std::vector<Instance> out;
  for (std::size_t i : idx) out.push_back(train[i]);
  return out;
}

TrainResult pretrain_then(ContinueMode mode, double fraction, Parser& parser, const std::vector<Instance>& train,
                          const std::vector<Instance>& valid, const Corpus& corpus, const TrainConfig& config,
                          const TeacherSet* teachers) {
  const auto subset = parallel_subset(train, fraction, config.seed);
  if (mode == ContinueMode::kDistill && !teachers) throw ConfigError("distillation needs teachers");
  TrainResult result;
  if (!subset.empty()) {
    log_info("pretraining on ", subset.size(), " parallel instances");
    const TrainResult pre = train_supervised(parser, subset, valid, corpus, config, StopMetric::kAccuracy);
    append_log(result, pre, "pretrain-");
    result.epochs += pre.epochs;
  }
  TrainResult main;
  if (mode == ContinueMode::kWeak) {
    main = train_weak(parser, train, valid, corpus, config);
  } else {
    const auto traces = compute_traces(*teachers, train, parser.target, config.temperature, config.workers);
    main = train_distill(parser, train, traces, valid, corpus, config);
  }
  append_log(result, main, "");
  result.epochs += main.epochs;
  result.best_metric = main.best_metric;
  return result;
}

}  // namespace unisp
