#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "unisp/corpus.hpp"
#include "unisp/parser.hpp"

namespace unisp {

struct InstanceResult {
  std::string id;
  std::string domain;
  std::vector<std::string> predicted;
  int hard = 0;
  double soft = 0.0;
};

struct EvalResult {
  std::vector<InstanceResult> records;             // input order
  std::map<std::string, double> accuracy;          // per domain, percent
  std::map<std::string, double> soft_accuracy;     // per domain, percent
  double average = 0.0;                            // unweighted mean over domains
  double soft_average = 0.0;
};

using Predictor = std::function<std::vector<std::string>(const Instance&)>;

/// Executes each predicted program against its instance's own knowledge base
/// and scores it against the gold denotation. Predictions that fail to parse or
/// execute score 0.
EvalResult evaluate_predictions(const std::vector<Instance>& instances, const Corpus& corpus,
                                const Predictor& predict, int workers = 1);

/// Top-1 beam prediction of the parser on every instance.
EvalResult evaluate(const Parser& parser, const std::vector<Instance>& instances, const Corpus& corpus,
                    int beam_width, int workers = 1);

}  // namespace unisp
