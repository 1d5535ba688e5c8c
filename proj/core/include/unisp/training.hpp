#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unisp/corpus.hpp"
#include "unisp/parser.hpp"

namespace unisp {

enum class RewardMode { kDenotation, kStringMatch };
std::string_view to_string(RewardMode mode);
RewardMode reward_mode_from_string(const std::string& name);

/// An instance encoded for one parser.
struct Example {
  const Instance* instance = nullptr;
  const KnowledgeBase* kb = nullptr;
  std::vector<TokenId> source;
  std::optional<std::vector<TokenId>> program;  // gold ids ending in </s>, when representable
};

std::vector<Example> make_examples(const Parser& parser, const std::vector<Instance>& instances,
                                   const Corpus& corpus);
std::vector<Example> make_examples(const Parser&, std::vector<Instance>&&, const Corpus&) = delete;

/// Reward of a decoded program (tokens without the end symbol).
using RewardFn = std::function<double(const Example&, const std::vector<std::string>&)>;
RewardFn make_reward(RewardMode mode);

struct RewardRecord {
  std::string instance_id;
  std::vector<Hypothesis> beam;
  std::vector<double> rewards;
  std::vector<double> centered;  // R(z) - b, from pairwise differences
  std::vector<double> weights;   // beam-normalised probabilities
  double baseline = 0.0;         // unweighted mean reward
  double expected_reward = 0.0;  // sum of weight * reward
};

RewardRecord score_beam(const Parser& parser, const Example& example, int beam_width, const RewardFn& reward,
                        const BeamExploration& explore = {});

struct StepOptions {
  double clip_norm = 5.0;
  RmsPropConfig optimizer;
  /// When false the gradients are left in the parameter store and no update happens.
  bool apply = true;
};

/// Teacher-forced cross-entropy averaged over target tokens. Returns the loss.
double supervised_step(Parser& parser, std::span<const Example> batch, const StepOptions& options);

struct ReinforceOutcome {
  double expected_reward = 0.0;  // batch mean
  std::vector<RewardRecord> records;
};

/// Gradient of -sum_z w(z) (R(z) - b) log P(z|x) over the beam, averaged over the batch.
ReinforceOutcome reinforce_step(Parser& parser, std::span<const Example> batch, int beam_width,
                                const RewardFn& reward, const StepOptions& options,
                                const BeamExploration& explore = {});

struct TeacherTrace {
  std::string instance_id;
  std::string domain;
  std::vector<TokenId> prefix;             // teacher's greedy decode, ids in the combined vocabulary
  std::vector<std::vector<double>> rows;   // next-token distribution over the combined vocabulary per step
};

/// Greedy decode of the teacher, then its per-step distributions along that
/// decode, scattered into the combined vocabulary.
TeacherTrace teacher_trace(const Parser& teacher, const Instance& instance, const Vocab& combined,
                           double temperature = 1.0);

nlohmann::json to_json(const TeacherTrace& trace, const Vocab& combined);
void write_traces(const std::vector<TeacherTrace>& traces, const Vocab& combined, const std::filesystem::path& file);

struct DistillExample {
  std::vector<TokenId> source;  // utterance encoded for the student
  const TeacherTrace* trace = nullptr;
};

/// Cross-entropy between teacher rows and student distributions along the
/// teacher prefix. Returns the loss averaged over steps.
double distill_step(Parser& student, std::span<const DistillExample> batch, const StepOptions& options);

struct TrainConfig {
  int batch_size = 16;
  int max_epochs = 60;
  int patience = 10;  // evaluations without improvement before stopping
  int beam_width = 5;
  int eval_beam_width = 0;  // 0: same as beam_width
  RewardMode reward_mode = RewardMode::kDenotation;
  double temperature = 1.0;
  /// Probability of a random beam slot during REINFORCE search (0 disables).
  double explore_epsilon = 0.0;
  StepOptions step;
  std::uint64_t seed = 1;
  int workers = 1;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig defaults = {});

/// CSV rows {step, split, metric, value}.
struct TrainingLog {
  struct Row {
    long step;
    std::string split;
    std::string metric;
    double value;
  };
  std::vector<Row> rows;
  void add(long step, std::string split, std::string metric, double value);
  void write_csv(const std::filesystem::path& file) const;
};

struct TrainResult {
  int epochs = 0;
  double best_metric = 0.0;
  TrainingLog log;
};

enum class StopMetric { kLoss, kAccuracy };

/// Supervised training on gold programs; early stopping on validation loss
/// (or accuracy, ties broken by lower training loss). The best parameters seen
/// are restored at the end.
TrainResult train_supervised(Parser& parser, const std::vector<Instance>& train, const std::vector<Instance>& valid,
                             const Corpus& corpus, const TrainConfig& config,
                             StopMetric metric = StopMetric::kLoss);

/// REINFORCE from denotations; early stopping on validation accuracy.
TrainResult train_weak(Parser& parser, const std::vector<Instance>& train, const std::vector<Instance>& valid,
                       const Corpus& corpus, const TrainConfig& config);

/// Teacher for each domain; a student learns every domain from its teacher.
using TeacherSet = std::map<std::string, const Parser*>;

std::vector<TeacherTrace> compute_traces(const TeacherSet& teachers, const std::vector<Instance>& instances,
                                         const Vocab& combined, double temperature, int workers);

/// Distillation from precomputed traces; early stopping on validation accuracy.
TrainResult train_distill(Parser& student, const std::vector<Instance>& train, const std::vector<TeacherTrace>& traces,
                          const std::vector<Instance>& valid, const Corpus& corpus, const TrainConfig& config);

enum class ContinueMode { kWeak, kDistill };

/// Training instances that carry gold programs for a given fraction, chosen
/// by a seeded shuffle of the training split.
std::vector<Instance> parallel_subset(const std::vector<Instance>& train, double fraction, std::uint64_t seed);

/// Supervised pretraining on the parallel subset, then weak or distillation
/// training on the whole training split. Fraction 0 skips pretraining.
TrainResult pretrain_then(ContinueMode mode, double fraction, Parser& parser, const std::vector<Instance>& train,
                          const std::vector<Instance>& valid, const Corpus& corpus, const TrainConfig& config,
                          const TeacherSet* teachers = nullptr);

}  // namespace unisp
