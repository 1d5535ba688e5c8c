#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "unisp/corpus.hpp"
#include "unisp/parser.hpp"
#include "unisp/training.hpp"

namespace unisp {

enum class System { kWeakIndependent, kWeakCombined, kDistillIndependent, kDistillCombined, kSupervised };

std::string_view to_string(System system);
System system_from_string(std::string_view name);
/// Independent systems train one model per domain.
bool is_independent(System system);

struct ExperimentConfig {
  std::string corpus;  // directory; may be empty when the corpus is passed in memory
  System system = System::kDistillCombined;
  ModelConfig teacher_model = default_teacher_model();
  ModelConfig student_model = default_student_model();
  TrainConfig train;
  double parallel_fraction = 0.0;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  /// Single-domain runs of independent systems (command-line training); empty means all.
  std::string domain;
  /// Comma-separated teacher checkpoints, or roots holding seed-<s>/<domain>.json.
  std::string teachers;
  /// Checkpoints are written below this directory when non-empty.
  std::string out;

  static ModelConfig default_teacher_model();
  static ModelConfig default_student_model();

  /// Throws ConfigError.
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& config);
/// Unknown keys are rejected.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, ExperimentConfig defaults = {});

/// The small-model preset used by the acceptance suite and `--config desk`.
ExperimentConfig desk_config(System system, double parallel_fraction = 0.3);

struct SeedResult {
  std::uint64_t seed = 0;
  std::map<std::string, double> per_domain;  // percent
  double average = 0.0;
  std::size_t parameters = 0;  // summed over every model the system deploys
};

struct ResultTable {
  std::string system;
  double parallel_fraction = 0.0;
  std::vector<std::string> domains;
  std::vector<SeedResult> seeds;
  std::map<std::string, double> median;  // per domain, over seeds
  double median_average = 0.0;           // mean of the per-domain medians

  /// Recomputes the aggregate from the per-seed rows.
  void aggregate();
  /// Throws ContractViolation when accuracies leave [0,100] or averages are inconsistent.
  void validate() const;
};

nlohmann::json to_json(const SeedResult& r, const std::string& system);
nlohmann::json to_json(const ResultTable& table);
ResultTable result_table_from_json(const nlohmann::json& j);

struct TrainedModel {
  Parser parser;
  TrainResult result;
};

/// Trains the model `config.system` deploys for one seed. Independent systems
/// need `domain`; combined systems ignore it. Distill systems need `teachers`.
TrainedModel train_system_model(const ExperimentConfig& config, const Corpus& corpus, std::uint64_t seed,
                                const std::string& domain, const TeacherSet* teachers = nullptr);

/// Width used to score a system on the test split (1 for the supervised skyline).
int evaluation_width(const ExperimentConfig& config);

/// Trained per-domain teachers, keyed by seed then domain.
using TeacherBank = std::map<std::uint64_t, std::map<std::string, Parser>>;

/// Trains and evaluates one system over every seed. Weak-independent runs
/// deposit their teachers in `bank`; distill runs read them from `bank` first
/// and then from `config.teachers`.
ResultTable run_experiment(const ExperimentConfig& config, const Corpus& corpus, TeacherBank* bank = nullptr);

std::filesystem::path teacher_checkpoint_path(const std::filesystem::path& root, std::uint64_t seed,
                                              const std::string& domain);

struct Report {
  std::string text;
  nlohmann::json json;
};

/// Grid of systems x domains (median over seeds) plus one series per system
/// over parallel fractions. Throws ConfigError when the tables disagree on domains.
Report report(const std::vector<ResultTable>& tables);

}  // namespace unisp
