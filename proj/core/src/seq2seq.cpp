#include "unisp/seq2seq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "unisp/error.hpp"
#include "unisp/log.hpp"

namespace unisp {

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("model.") + name + " must be positive");
  };
  positive(num_layers, "num_layers");
  positive(hidden_size, "hidden_size");
  positive(embed_size, "embed_size");
  positive(src_vocab_size, "src_vocab_size");
  positive(tgt_vocab_size, "tgt_vocab_size");
  positive(max_src_len, "max_src_len");
  positive(max_tgt_len, "max_tgt_len");
  if (tgt_vocab_size < 2) throw ConfigError("model.tgt_vocab_size must include <s> and </s>");
  if (!(init_scale > 0.0)) throw ConfigError("model.init_scale must be positive");
}

std::vector<double> log_softmax(std::span<const double> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : logits) mx = std::max(mx, x);
  double z = 0.0;
  for (double x : logits) z += std::exp(x - mx);
  const double lse = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

Var attention_context(Graph& g, Var query, Var keys) {
  Var scores = g.matmul(query, g.transpose(keys));
  Var weights = g.softmax(scores);
  return g.matmul(weights, keys);
}

Seq2Seq::Seq2Seq(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  declare_parameters();
  std::mt19937_64 rng(seed);
  params_.init_uniform(-config_.init_scale, config_.init_scale, rng);
}

Seq2Seq::Seq2Seq(const ModelConfig& config, ParamStore params) : config_(config) {
  config_.validate();
  declare_parameters();
  for (Parameter* p : params_.all()) {
    if (!params.contains(p->name)) throw InputError("checkpoint is missing parameter '" + p->name + "'");
    const Parameter& src = params.at(p->name);
    if (!(src.value.shape() == p->value.shape())) {
      throw InputError("checkpoint parameter '" + p->name + "' has shape " +
                       to_string(src.value.shape()) + ", expected " + to_string(p->value.shape()));
    }
    std::copy(src.value.values().begin(), src.value.values().end(), p->value.values().begin());
  }
  if (params.all().size() != params_.all().size()) {
    throw InputError("checkpoint has unexpected extra parameters");
  }
}

void Seq2Seq::declare_parameters() {
  const auto h = static_cast<std::size_t>(config_.hidden_size);
  const auto e = static_cast<std::size_t>(config_.embed_size);
  const auto vs = static_cast<std::size_t>(config_.src_vocab_size);
  const auto vt = static_cast<std::size_t>(config_.tgt_vocab_size);
  params_.add("src_embed", {vs, e});
  params_.add("tgt_embed", {vt, e});
  for (const char* side : {"enc", "dec"}) {
    for (int l = 0; l < config_.num_layers; ++l) {
      const std::size_t in = (l == 0 ? e : h) + h;
      const std::string prefix = std::string(side) + ".l" + std::to_string(l);
      params_.add(prefix + ".w", {in, 4 * h});
      params_.add(prefix + ".b", {1, 4 * h});
    }
  }
  params_.add("attn.w", {2 * h, h});
  params_.add("attn.b", {1, h});
  params_.add("out.w", {h, vt});
  params_.add("out.b", {1, vt});
}

namespace {

template <typename Binder>
Weights bind_all(const ModelConfig& config, Binder&& bind) {
  Weights w;
  w.src_embed = bind("src_embed");
  w.tgt_embed = bind("tgt_embed");
  for (int l = 0; l < config.num_layers; ++l) {
    const std::string enc = "enc.l" + std::to_string(l);
    const std::string dec = "dec.l" + std::to_string(l);
    w.enc_w.push_back(bind(enc + ".w"));
    w.enc_b.push_back(bind(enc + ".b"));
    w.dec_w.push_back(bind(dec + ".w"));
    w.dec_b.push_back(bind(dec + ".b"));
  }
  w.attn_w = bind("attn.w");
  w.attn_b = bind("attn.b");
  w.out_w = bind("out.w");
  w.out_b = bind("out.b");
  return w;
}

}  // namespace

Weights Seq2Seq::bind(Graph& g) {
  return bind_all(config_, [&](const std::string& name) { return g.param(params_.at(name)); });
}

Weights Seq2Seq::bind_frozen(Graph& g) const {
  return bind_all(config_, [&](const std::string& name) { return g.frozen(params_.at(name)); });
}

DecoderState Seq2Seq::lstm_stack(Graph& g, std::span<const Var> w, std::span<const Var> b,
                                 Var input, const DecoderState& prev) const {
  const auto h = static_cast<std::size_t>(config_.hidden_size);
  DecoderState next;
  Var x = input;
  for (int l = 0; l < config_.num_layers; ++l) {
    Var z = g.add(g.matmul(g.concat(x, prev.h[l]), w[l]), b[l]);
    Var in_gate = g.sigmoid(g.slice(z, 0, h));
    Var forget_gate = g.sigmoid(g.slice(z, h, h));
    Var candidate = g.tanh(g.slice(z, 2 * h, h));
    Var out_gate = g.sigmoid(g.slice(z, 3 * h, h));
    Var c = g.add(g.mul(forget_gate, prev.c[l]), g.mul(in_gate, candidate));
    Var hidden = g.mul(out_gate, g.tanh(c));
    next.h.push_back(hidden);
    next.c.push_back(c);
    x = hidden;
  }
  return next;
}

Encoding Seq2Seq::encode(Graph& g, const Weights& w, std::span<const TokenId> source) const {
  if (source.empty()) throw ContractViolation("encode: empty source sequence");
  Encoding enc;
  if (source.size() > static_cast<std::size_t>(config_.max_src_len)) {
    log_warning("source of length ", source.size(), " truncated to ", config_.max_src_len);
    source = source.first(static_cast<std::size_t>(config_.max_src_len));
    enc.truncated = true;
  }
  const std::vector<double> zeros(static_cast<std::size_t>(config_.hidden_size), 0.0);
  DecoderState state;
  for (int l = 0; l < config_.num_layers; ++l) {
    state.h.push_back(g.constant_row(zeros));
    state.c.push_back(g.constant_row(zeros));
  }
  for (TokenId id : source) {
    if (id >= static_cast<TokenId>(config_.src_vocab_size)) {
      throw ContractViolation("encode: source id " + std::to_string(id) + " out of range");
    }
    state = lstm_stack(g, w.enc_w, w.enc_b, g.row(w.src_embed, id), state);
    enc.states.push_back(state.h.back());
  }
  enc.memory = g.stack_rows(enc.states);
  enc.final_state = std::move(state);
  return enc;
}

StepOutput Seq2Seq::decode_step(Graph& g, const Weights& w, TokenId prev,
                                const DecoderState& state, const Encoding& enc) const {
  if (prev >= static_cast<TokenId>(config_.tgt_vocab_size)) {
    throw ContractViolation("decode_step: target id " + std::to_string(prev) + " out of range");
  }
  StepOutput out;
  out.state = lstm_stack(g, w.dec_w, w.dec_b, g.row(w.tgt_embed, prev), state);
  Var top = out.state.h.back();
  Var context = attention_context(g, top, enc.memory);
  Var attentional = g.tanh(g.add(g.matmul(g.concat(top, context), w.attn_w), w.attn_b));
  out.logits = g.add(g.matmul(attentional, w.out_w), w.out_b);
  return out;
}

std::vector<Var> Seq2Seq::teacher_force(Graph& g, const Weights& w, const Encoding& enc,
                                        std::span<const TokenId> targets) const {
  if (targets.size() > static_cast<std::size_t>(config_.max_tgt_len)) {
    throw ContractViolation("program of length " + std::to_string(targets.size()) +
                            " exceeds max_tgt_len " + std::to_string(config_.max_tgt_len));
  }
  std::vector<Var> logits;
  logits.reserve(targets.size());
  DecoderState state = enc.final_state;
  TokenId prev = kBos;
  for (TokenId t : targets) {
    StepOutput step = decode_step(g, w, prev, state, enc);
    logits.push_back(step.logits);
    state = std::move(step.state);
    prev = t;
  }
  return logits;
}

namespace {

bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return a.tokens < b.tokens;
}

}  // namespace

Beam Seq2Seq::beam_search(std::span<const TokenId> source, int width, const BeamExploration& explore) const {
  if (width < 1) throw ConfigError("beam width must be at least 1, got " + std::to_string(width));
  if (explore.epsilon < 0.0 || explore.epsilon > 1.0) throw ConfigError("beam exploration epsilon must be in [0, 1]");
  const bool exploring = explore.epsilon > 0.0 && explore.rng != nullptr;
  Graph g;
  const Weights w = bind_frozen(g);
  const Encoding enc = encode(g, w, source);

  struct Item {
    Hypothesis hyp;
    StepOutput next;  // state after consuming hyp.tokens and the logits for the next token
  };
  struct Candidate {
    Hypothesis hyp;
    std::size_t parent = 0;
  };

  std::vector<Item> open;
  open.push_back({Hypothesis{}, decode_step(g, w, kBos, enc.final_state, enc)});
  std::vector<Hypothesis> finished;
  const auto vocab = static_cast<TokenId>(config_.tgt_vocab_size);
  const auto max_len = static_cast<std::size_t>(config_.max_tgt_len);

  for (std::size_t t = 0; t < max_len && !open.empty(); ++t) {
    std::vector<Candidate> candidates;
    for (const Hypothesis& f : finished) candidates.push_back({f, 0});
    for (std::size_t i = 0; i < open.size(); ++i) {
      const auto lp = log_softmax(g.value(open[i].next.logits));
      for (TokenId v = 0; v < vocab; ++v) {
        if (v == kBos) continue;
        Candidate c{open[i].hyp, i};
        c.hyp.tokens.push_back(v);
        c.hyp.log_prob += lp[v];
        c.hyp.finished = (v == kEos);
        candidates.push_back(std::move(c));
      }
    }
    const std::size_t keep = std::min(candidates.size(), static_cast<std::size_t>(width));
    auto by_score = [](const Candidate& a, const Candidate& b) { return better(a.hyp, b.hyp); };
    if (exploring) {
      std::sort(candidates.begin(), candidates.end(), by_score);
      for (std::size_t k = 0; k < keep; ++k) {
        const double coin = static_cast<double>((*explore.rng)() >> 11) * 0x1.0p-53;
        if (coin < explore.epsilon) {
          const std::size_t pick = k + static_cast<std::size_t>((*explore.rng)() % (candidates.size() - k));
          std::rotate(candidates.begin() + static_cast<std::ptrdiff_t>(k),
                      candidates.begin() + static_cast<std::ptrdiff_t>(pick),
                      candidates.begin() + static_cast<std::ptrdiff_t>(pick) + 1);
        }
      }
      candidates.resize(keep);
      std::sort(candidates.begin(), candidates.end(), by_score);
    } else {
      std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                        candidates.end(), by_score);
      candidates.resize(keep);
    }

    std::vector<Item> next_open;
    finished.clear();
    for (Candidate& c : candidates) {
      if (c.hyp.finished) {
        finished.push_back(std::move(c.hyp));
      } else if (c.hyp.tokens.size() < max_len) {
        StepOutput step = decode_step(g, w, c.hyp.tokens.back(), open[c.parent].next.state, enc);
        next_open.push_back({std::move(c.hyp), std::move(step)});
      } else {
        finished.push_back(std::move(c.hyp));  // length cap reached without </s>
      }
    }
    open = std::move(next_open);
  }

  Beam beam;
  beam.width = width;
  beam.items = std::move(finished);
  for (Item& item : open) beam.items.push_back(std::move(item.hyp));
  std::sort(beam.items.begin(), beam.items.end(), better);
  return beam;
}

Hypothesis Seq2Seq::greedy(std::span<const TokenId> source) const {
  Graph g;
  const Weights w = bind_frozen(g);
  const Encoding enc = encode(g, w, source);
  Hypothesis hyp;
  StepOutput step = decode_step(g, w, kBos, enc.final_state, enc);
  const auto max_len = static_cast<std::size_t>(config_.max_tgt_len);
  while (hyp.tokens.size() < max_len) {
    const auto lp = log_softmax(g.value(step.logits));
    TokenId best = kEos;
    for (TokenId v = 0; v < lp.size(); ++v) {
      if (v == kBos) continue;
      if (lp[v] > lp[best]) best = v;
    }
    hyp.tokens.push_back(best);
    hyp.log_prob += lp[best];
    if (best == kEos) {
      hyp.finished = true;
      break;
    }
    if (hyp.tokens.size() < max_len) step = decode_step(g, w, best, step.state, enc);
  }
  return hyp;
}

double Seq2Seq::prefix_log_prob(std::span<const TokenId> source,
                                std::span<const TokenId> prefix) const {
  Graph g;
  const Weights w = bind_frozen(g);
  const Encoding enc = encode(g, w, source);
  const auto logits = teacher_force(g, w, enc, prefix);
  double total = 0.0;
  for (std::size_t j = 0; j < prefix.size(); ++j) total += log_softmax(g.value(logits[j]))[prefix[j]];
  return total;
}

double Seq2Seq::sequence_log_prob(std::span<const TokenId> source,
                                  std::span<const TokenId> program) const {
  if (program.empty() || program.back() != kEos) {
    throw ContractViolation("sequence_log_prob: program must end with </s>");
  }
  return prefix_log_prob(source, program);
}

std::vector<std::vector<double>> Seq2Seq::step_distributions(std::span<const TokenId> source,
                                                             std::span<const TokenId> prefix,
                                                             double temperature) const {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  Graph g;
  const Weights w = bind_frozen(g);
  const Encoding enc = encode(g, w, source);
  const auto logits = teacher_force(g, w, enc, prefix);
  std::vector<std::vector<double>> rows;
  rows.reserve(logits.size());
  for (Var l : logits) {
    auto values = g.value(l);
    std::vector<double> scaled(values.begin(), values.end());
    if (temperature != 1.0) {
      for (double& x : scaled) x /= temperature;
    }
    auto lp = log_softmax(scaled);
    for (double& x : lp) x = std::exp(x);
    rows.push_back(std::move(lp));
  }
  return rows;
}

}  // namespace unisp
