#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "support.hpp"
#include "unisp/error.hpp"
#include "unisp/generator.hpp"
#include "unisp/parser.hpp"
#include "unisp/seq2seq.hpp"

namespace unisp {
namespace {

ModelConfig tiny(int tgt_vocab, int max_len, int layers = 1, int hidden = 6, double scale = 1.5) {
  ModelConfig c;
  c.num_layers = layers;
  c.hidden_size = hidden;
  c.embed_size = 5;
  c.src_vocab_size = 6;
  c.tgt_vocab_size = tgt_vocab;
  c.max_tgt_len = max_len;
  c.init_scale = scale;
  return c;
}

// Every decodable sequence: prefixes ending in </s>, plus length-capped ones without it.
std::vector<std::vector<TokenId>> all_sequences(int vocab, int max_len) {
  std::vector<std::vector<TokenId>> out, frontier = {{}};
  for (int len = 1; len <= max_len; ++len) {
    std::vector<std::vector<TokenId>> next;
    for (const auto& p : frontier) {
      for (TokenId v = 1; v < static_cast<TokenId>(vocab); ++v) {
        auto s = p;
        s.push_back(v);
        if (v == kEos || len == max_len) out.push_back(s);
        else next.push_back(s);
      }
    }
    frontier = std::move(next);
  }
  return out;
}

// Probability of a sequence by multiplying the per-step distributions.
double enumerated_log_prob(const Seq2Seq& m, std::span<const TokenId> src, const std::vector<TokenId>& seq) {
  const auto rows = m.step_distributions(src, seq);
  double lp = 0.0;
  for (std::size_t j = 0; j < seq.size(); ++j) lp += std::log(rows[j][seq[j]]);
  return lp;
}

void expect_enumeration_ranking(int vocab, int max_len, std::uint64_t seed) {
  const Seq2Seq model(tiny(vocab, max_len), seed);
  const std::vector<TokenId> src = {1, 4, 2};
  auto seqs = all_sequences(vocab, max_len);
  std::vector<std::pair<double, std::vector<TokenId>>> ranked;
  for (auto& s : seqs) ranked.emplace_back(enumerated_log_prob(model, src, s), s);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  const double total = std::accumulate(ranked.begin(), ranked.end(), 0.0,
                                       [](double acc, const auto& r) { return acc + std::exp(r.first); });
  ASSERT_LE(total, 1.0 + 1e-9);

  const Beam beam = model.beam_search(src, static_cast<int>(seqs.size()) + 1);
  ASSERT_EQ(beam.items.size(), ranked.size());
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    EXPECT_EQ(beam.items[i].tokens, ranked[i].second) << "rank " << i;
    EXPECT_NEAR(beam.items[i].log_prob, ranked[i].first, 1e-9);
  }
}

TEST(BeamSearch, MatchesExhaustiveEnumerationVocab3Len2) {
  for (std::uint64_t seed : {1u, 2u, 3u}) expect_enumeration_ranking(3, 2, seed);
}

TEST(BeamSearch, MatchesExhaustiveEnumerationVocab4Len3) {
  EXPECT_EQ(all_sequences(4, 3).size(), 15u);
  for (std::uint64_t seed : {4u, 5u}) expect_enumeration_ranking(4, 3, seed);
}

TEST(BeamSearch, WidthOneEqualsGreedy) {
  const Seq2Seq model(tiny(7, 6, 2, 8, 0.8), 9);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 30; ++i) {
    std::vector<TokenId> src(1 + rng() % 5);
    for (auto& t : src) t = static_cast<TokenId>(rng() % 6);
    const Beam beam = model.beam_search(src, 1);
    const Hypothesis g = model.greedy(src);
    ASSERT_EQ(beam.items.size(), 1u);
    EXPECT_EQ(beam.items[0].tokens, g.tokens);
    EXPECT_NEAR(beam.items[0].log_prob, g.log_prob, 1e-12);
  }
}

TEST(BeamSearch, BestScoreIsMonotoneInWidth) {
  const Seq2Seq model(tiny(6, 5, 1, 6, 1.2), 21);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    std::vector<TokenId> src(1 + rng() % 4);
    for (auto& t : src) t = static_cast<TokenId>(rng() % 6);
    double prev = -INFINITY;
    for (int w : {1, 2, 5, 10, 20}) {
      const double best = model.beam_search(src, w).items.front().log_prob;
      EXPECT_GE(best, prev - 1e-12) << "width " << w;
      prev = best;
    }
  }
}

TEST(BeamSearch, ItemsSortedBoundedAndConsistentWithTeacherForcing) {
  const Seq2Seq model(tiny(6, 5, 2, 6, 1.0), 4);
  const std::vector<TokenId> src = {3, 1, 5};
  const Beam beam = model.beam_search(src, 5);
  ASSERT_LE(beam.items.size(), 5u);
  for (std::size_t i = 0; i < beam.items.size(); ++i) {
    const auto& h = beam.items[i];
    EXPECT_LE(h.log_prob, 0.0);
    EXPECT_LE(h.tokens.size(), 5u);
    if (i > 0) EXPECT_GE(beam.items[i - 1].log_prob, h.log_prob);
    const double forced = h.finished ? model.sequence_log_prob(src, h.tokens) : model.prefix_log_prob(src, h.tokens);
    EXPECT_NEAR(forced, h.log_prob, 1e-9);
  }
}

TEST(BeamSearch, WidthBelowOneIsAConfigError) {
  const Seq2Seq model(tiny(4, 3), 1);
  const std::vector<TokenId> src = {1};
  EXPECT_THROW(model.beam_search(src, 0), ConfigError);
}

TEST(Greedy, TeacherForcedLikelihoodEqualsProductOfGreedySteps) {
  const Seq2Seq model(tiny(8, 7, 2, 8, 0.9), 6);
  const std::vector<TokenId> src = {2, 2, 5, 1};
  const Hypothesis g = model.greedy(src);
  const auto rows = model.step_distributions(src, g.tokens);
  double product = 1.0;
  for (std::size_t j = 0; j < g.tokens.size(); ++j) {
    EXPECT_EQ(std::max_element(rows[j].begin() + 1, rows[j].end()) - rows[j].begin(), g.tokens[j]);
    product *= rows[j][g.tokens[j]];
  }
  EXPECT_NEAR(std::exp(model.prefix_log_prob(src, g.tokens)), product, 1e-12);
  EXPECT_NEAR(g.log_prob, std::log(product), 1e-9);
}

TEST(SequenceLogProb, IsNonPositiveAndNeedsEndSymbol) {
  const Seq2Seq model(tiny(5, 4), 8);
  const std::vector<TokenId> src = {1, 2};
  for (const auto& s : all_sequences(5, 4)) {
    if (s.back() != kEos) continue;
    const double lp = model.sequence_log_prob(src, s);
    EXPECT_LE(lp, 0.0);
    EXPECT_GT(std::exp(lp), 0.0);
  }
  const std::vector<TokenId> unfinished = {2, 3};
  EXPECT_THROW(model.sequence_log_prob(src, unfinished), ContractViolation);
  const std::vector<TokenId> too_long = {2, 3, 2, 3, 1};
  EXPECT_THROW(model.sequence_log_prob(src, too_long), ContractViolation);
}

TEST(SequenceLogProb, SaturatedModelScoresItsGreedySequenceAtZero) {
  Seq2Seq model(tiny(4, 3), 2);
  // A huge bias on </s> makes the output one-hot regardless of the input.
  for (double& v : model.params().at("out.w").value.values()) v = 0.0;
  auto bias = model.params().at("out.b").value.values();
  std::fill(bias.begin(), bias.end(), -1e3);
  bias[kEos] = 1e3;
  const std::vector<TokenId> src = {3};
  const Hypothesis g = model.greedy(src);
  ASSERT_EQ(g.tokens, (std::vector<TokenId>{kEos}));
  EXPECT_EQ(model.sequence_log_prob(src, g.tokens), 0.0);
}

TEST(StepDistributions, RowsAreDistributions) {
  const Seq2Seq model(tiny(9, 6, 2, 7, 2.0), 10);
  const std::vector<TokenId> src = {1, 2, 3, 4, 5};
  const std::vector<TokenId> prefix = {3, 4, 8, 2, kEos};
  for (double tau : {0.5, 1.0, 3.0}) {
    for (const auto& row : model.step_distributions(src, prefix, tau)) {
      EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-9);
    }
  }
}

TEST(Encode, ShapesTruncationAndDeterminism) {
  ModelConfig cfg = tiny(4, 3, 2, 6);
  cfg.max_src_len = 4;
  const Seq2Seq model(cfg, 3);
  Graph g;
  const Weights w = model.bind_frozen(g);
  const std::vector<TokenId> one = {2};
  const Encoding e1 = model.encode(g, w, one);
  EXPECT_EQ(e1.states.size(), 1u);
  EXPECT_EQ(e1.final_state.h.size(), 2u);
  EXPECT_FALSE(e1.truncated);
  const std::vector<TokenId> long_src = {1, 2, 3, 4, 5, 1};
  const Encoding e2 = model.encode(g, w, long_src);
  EXPECT_TRUE(e2.truncated);
  EXPECT_EQ(e2.states.size(), 4u);
  const Encoding e3 = model.encode(g, w, one);
  const auto a = g.value(e1.final_state.h[1]);
  const auto b = g.value(e3.final_state.h[1]);
  EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
}

TEST(Encode, RejectsOutOfRangeIds) {
  const Seq2Seq model(tiny(4, 3), 3);
  Graph g;
  const Weights w = model.bind_frozen(g);
  const std::vector<TokenId> bad = {6};
  EXPECT_THROW(model.encode(g, w, bad), ContractViolation);
}

TEST(Encode, FinalStateGradientWrtEmbeddingsMatchesFiniteDifferences) {
  Seq2Seq model(tiny(4, 3, 2, 5, 0.5), 12);
  const std::vector<TokenId> src = {1, 3, 5, 3};
  std::mt19937_64 rng(1);
  std::vector<double> readout(5);
  testing::fill_uniform(readout, rng);
  auto build = [&](Graph& g, const Weights& w) {
    const Encoding e = model.encode(g, w, src);
    return g.sum(g.mul(e.final_state.h.back(), g.constant(Tensor::row(readout))));
  };
  model.params().zero_grad();
  {
    Graph g;
    const Weights w = model.bind(g);
    g.backward(build(g, w));
  }
  auto loss = [&] {
    Graph g;
    const Weights w = model.bind_frozen(g);
    return g.scalar(build(g, w));
  };
  Parameter& emb = model.params().at("src_embed");
  const std::vector<double> analytic(emb.value.grad().begin(), emb.value.grad().end());
  EXPECT_LE(testing::max_fd_error(loss, emb.value.values(), analytic), 1e-4);
}

TEST(Attention, EqualScoresGiveMeanOfStates) {
  Graph g;
  const Var query = g.constant(Tensor({1, 3}, 0.0));
  const Var keys = g.constant(Tensor({3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, -2, 0, 9}));
  const auto ctx = g.value(attention_context(g, query, keys));
  EXPECT_NEAR(ctx[0], 1.0, 1e-15);
  EXPECT_NEAR(ctx[1], 7.0 / 3.0, 1e-15);
  EXPECT_NEAR(ctx[2], 6.0, 1e-15);
}

TEST(DecodeStep, OutputIsADistribution) {
  const Seq2Seq model(tiny(7, 4, 2, 6), 5);
  Graph g;
  const Weights w = model.bind_frozen(g);
  const std::vector<TokenId> src = {1, 2};
  const Encoding enc = model.encode(g, w, src);
  const StepOutput out = model.decode_step(g, w, kBos, enc.final_state, enc);
  const auto p = g.value(g.softmax(out.logits));
  EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-9);
}

TEST(ModelGradient, EndToEndTwoLayerHiddenEight) {
  for (std::uint64_t seed : {1u, 2u, 3u}) EXPECT_LE(testing::model_gradient_error(seed), 1e-4) << "seed " << seed;
}

TEST(ModelConfig, RejectsNonPositiveSizes) {
  ModelConfig c = tiny(4, 3);
  c.hidden_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny(4, 3);
  c.max_tgt_len = -1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Checkpoint, RoundTripIsValueExact) {
  const auto corpus = generate_corpus(default_bundle(), 30, 5);
  ModelConfig cfg = tiny(1, 10, 2, 6);
  Parser p = make_parser(cfg, source_vocab(corpus, corpus.domains), combined_target_vocab(corpus), 77);
  const auto file = std::filesystem::temp_directory_path() / "unisp_ckpt_roundtrip.json";
  save_checkpoint(p, file, "abc", {{"note", "x"}});
  const LoadedParser back = load_checkpoint(file);
  std::filesystem::remove(file);
  EXPECT_EQ(back.corpus_hash, "abc");
  EXPECT_EQ(back.metadata.at("note"), "x");
  EXPECT_EQ(back.parser.model.config(), p.model.config());
  EXPECT_EQ(back.parser.source, p.source);
  EXPECT_EQ(back.parser.target, p.target);
  for (const Parameter* q : p.model.params().all()) {
    const auto a = q->value.values();
    const auto b = back.parser.model.params().at(q->name).value.values();
    ASSERT_EQ(a.size(), b.size());
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin())) << q->name;
  }
}

TEST(Checkpoint, MissingFileIsAnInputError) {
  EXPECT_THROW(load_checkpoint("/nonexistent/unisp/model.json"), InputError);
}

TEST(Parser, BeamOneEqualsGreedyOnCorpusUtterances) {
  const auto corpus = generate_corpus(default_bundle(), 300, 17);
  ModelConfig cfg = tiny(1, 12, 1, 10, 0.6);
  cfg.embed_size = 8;
  const Parser p = make_parser(cfg, source_vocab(corpus, corpus.domains), combined_target_vocab(corpus), 3);
  int checked = 0;
  for (const auto& in : corpus.train) {
    if (checked == 100) break;
    const auto src = p.encode_utterance(in.utterance);
    EXPECT_EQ(p.model.beam_search(src, 1).items.front().tokens, p.model.greedy(src).tokens);
    ++checked;
  }
  EXPECT_EQ(checked, 100);
}

}  // namespace
}  // namespace unisp
