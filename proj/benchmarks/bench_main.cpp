#include <benchmark/benchmark.h>

#include <random>

#include "unisp/generator.hpp"
#include "unisp/graph.hpp"
#include "unisp/parser.hpp"
#include "unisp/program.hpp"
#include "unisp/training.hpp"

namespace {

using namespace unisp;

const Corpus& corpus() {
  static const Corpus c = generate_corpus(default_bundle(), 300, 17);
  return c;
}

ModelConfig desk_model(int layers, int hidden) {
  ModelConfig m;
  m.num_layers = layers;
  m.hidden_size = hidden;
  m.embed_size = 48;
  m.max_tgt_len = 20;
  return m;
}

void BM_MatmulForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Parameter a{"a", Tensor({n, n})}, b{"b", Tensor({n, n})};
  for (Parameter* p : {&a, &b}) {
    for (double& v : p->value.values()) v = u(rng);
  }
  for (auto _ : state) {
    Graph g;
    const Var loss = g.sum(g.matmul(g.param(a), g.param(b)));
    g.backward(loss);
    benchmark::DoNotOptimize(a.value.grad().data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_MatmulForwardBackward)->RangeMultiplier(2)->Range(16, 128)->Complexity();

void BM_BeamSearch(benchmark::State& state) {
  const Corpus& c = corpus();
  const Parser p = make_parser(desk_model(2, 48), source_vocab(c, c.domains), combined_target_vocab(c), 1);
  const auto src = p.encode_utterance(c.test.front().utterance);
  const int width = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(p.model.beam_search(src, width));
}
BENCHMARK(BM_BeamSearch)->Arg(1)->Arg(5)->Arg(10)->Unit(benchmark::kMicrosecond);

void BM_Execute(benchmark::State& state) {
  const Corpus& c = corpus();
  std::vector<Expr> programs;
  for (const auto& in : c.test) programs.push_back(parse_program(in.program));
  for (auto _ : state) {
    for (std::size_t i = 0; i < programs.size(); ++i) {
      benchmark::DoNotOptimize(execute(programs[i], c.kb(c.test[i].domain), c.test[i].entity_map));
    }
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(programs.size()));
}
BENCHMARK(BM_Execute);

void BM_SupervisedStep(benchmark::State& state) {
  const Corpus& c = corpus();
  Parser p = make_parser(desk_model(1, 48), source_vocab(c, c.domains), combined_target_vocab(c), 2);
  const std::vector<Instance> batch(c.train.begin(), c.train.begin() + 16);
  const auto examples = make_examples(p, batch, c);
  for (auto _ : state) benchmark::DoNotOptimize(supervised_step(p, examples, StepOptions{}));
}
BENCHMARK(BM_SupervisedStep)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
