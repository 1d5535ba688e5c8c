#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "unisp/graph.hpp"
#include "unisp/params.hpp"
#include "unisp/vocab.hpp"

namespace unisp {

struct ModelConfig {
  int num_layers = 1;
  int hidden_size = 200;
  int embed_size = 64;
  int src_vocab_size = 0;
  int tgt_vocab_size = 0;
  int max_src_len = 50;
  int max_tgt_len = 35;
  /// Half-width of the uniform initialisation range.
  double init_scale = 0.08;

  /// Throws ConfigError when a size is not positive.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Decoder recurrent state, one entry per layer.
struct DecoderState {
  std::vector<Var> h;
  std::vector<Var> c;
};

/// Encoder output on a particular graph.
struct Encoding {
  std::vector<Var> states;  // top-layer hidden state per source position
  Var memory;               // states stacked into an n x hidden matrix
  DecoderState final_state; // per-layer (h_n, c_n); seeds the decoder
  bool truncated = false;
};

/// Graph handles for every parameter of a model, bound once per forward pass.
struct Weights {
  Var src_embed;
  Var tgt_embed;
  std::vector<Var> enc_w, enc_b, dec_w, dec_b;
  Var attn_w, attn_b, out_w, out_b;
};

struct StepOutput {
  Var logits;  // 1 x tgt_vocab_size, pre-softmax
  DecoderState state;
};

struct Hypothesis {
  std::vector<TokenId> tokens;  // ends with kEos when finished
  double log_prob = 0.0;
  bool finished = false;
};

/// Training-time exploration: each beam slot is filled by a uniformly random
/// surviving candidate with probability epsilon instead of the best one.
struct BeamExploration {
  double epsilon = 0.0;
  std::mt19937_64* rng = nullptr;
};

struct Beam {
  int width = 1;
  std::vector<Hypothesis> items;  // sorted by log_prob, descending
};

/// L-layer LSTM encoder and attention LSTM decoder over token ids.
///
/// Target id 0 is the start symbol (never emitted) and id 1 ends a program.
/// Decoding methods are const and safe to call concurrently on a frozen model.
class Seq2Seq {
 public:
  Seq2Seq() = default;
  Seq2Seq(const ModelConfig& config, std::uint64_t seed);
  /// Adopts existing parameters (checkpoint load); names and shapes are verified.
  Seq2Seq(const ModelConfig& config, ParamStore params);

  const ModelConfig& config() const noexcept { return config_; }
  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }

  Weights bind(Graph& g);              // trainable
  Weights bind_frozen(Graph& g) const; // read-only

  Encoding encode(Graph& g, const Weights& w, std::span<const TokenId> source) const;
  StepOutput decode_step(Graph& g, const Weights& w, TokenId prev, const DecoderState& state,
                         const Encoding& enc) const;
  /// Logits for predicting targets[j] from targets[0..j) for every j.
  std::vector<Var> teacher_force(Graph& g, const Weights& w, const Encoding& enc,
                                 std::span<const TokenId> targets) const;

  /// Length-synchronous beam search without length normalisation.
  Beam beam_search(std::span<const TokenId> source, int width,
                   const BeamExploration& explore = {}) const;
  Hypothesis greedy(std::span<const TokenId> source) const;
  /// log P(program | source); program must end with the end symbol.
  double sequence_log_prob(std::span<const TokenId> source,
                           std::span<const TokenId> program) const;
  /// Sum of per-step log probabilities of an arbitrary token prefix.
  double prefix_log_prob(std::span<const TokenId> source,
                         std::span<const TokenId> prefix) const;
  /// Per-step next-token distributions along a forced prefix (one row per token),
  /// computed with softmax(logits / temperature).
  std::vector<std::vector<double>> step_distributions(std::span<const TokenId> source,
                                                      std::span<const TokenId> prefix,
                                                      double temperature = 1.0) const;

  std::size_t num_parameters() const { return params_.num_values(); }

 private:
  void declare_parameters();
  DecoderState lstm_stack(Graph& g, std::span<const Var> w, std::span<const Var> b, Var input,
                          const DecoderState& prev) const;

  ModelConfig config_;
  ParamStore params_;
};

/// Attention context: softmax(query . keys^T) . keys for a 1 x h query and n x h keys.
Var attention_context(Graph& g, Var query, Var keys);

/// log softmax of a row of logits.
std::vector<double> log_softmax(std::span<const double> logits);

}  // namespace unisp
