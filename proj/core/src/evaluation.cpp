#include "unisp/evaluation.hpp"

#include "unisp/parallel.hpp"

namespace unisp {

EvalResult evaluate_predictions(const std::vector<Instance>& instances, const Corpus& corpus,
                                const Predictor& predict, int workers) {
  EvalResult out;
  out.records.resize(instances.size());
  parallel_for(instances.size(), workers, [&](std::size_t i) {
    const Instance& in = instances[i];
    InstanceResult& r = out.records[i];
    r.id = in.id;
    r.domain = in.domain;
    r.predicted = predict(in);
    const auto denotation = run_program(r.predicted, corpus.kb(in.domain), in.entity_map);
    r.hard = hard_match(denotation, in.denotation);
    r.soft = soft_f1(denotation, in.denotation);
  });
  std::map<std::string, std::size_t> counts;
  std::map<std::string, double> hard, soft;
  for (const auto& r : out.records) {
    counts[r.domain] += 1;
    hard[r.domain] += r.hard;
    soft[r.domain] += r.soft;
  }
  for (const auto& [domain, n] : counts) {
    out.accuracy[domain] = 100.0 * hard[domain] / static_cast<double>(n);
    out.soft_accuracy[domain] = 100.0 * soft[domain] / static_cast<double>(n);
    out.average += out.accuracy[domain];
    out.soft_average += out.soft_accuracy[domain];
  }
  if (!counts.empty()) {
    out.average /= static_cast<double>(counts.size());
    out.soft_average /= static_cast<double>(counts.size());
  }
  return out;
}

EvalResult evaluate(const Parser& parser, const std::vector<Instance>& instances, const Corpus& corpus,
                    int beam_width, int workers) {
  return evaluate_predictions(
      instances, corpus, [&](const Instance& in) { return parser.predict(in.utterance, beam_width); }, workers);
}

}  // namespace unisp
