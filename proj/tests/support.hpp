#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "unisp/graph.hpp"
#include "unisp/knowledge_base.hpp"
#include "unisp/program.hpp"
#include "unisp/seq2seq.hpp"
#include "unisp/vocab.hpp"

namespace unisp::testing {

/// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double analytic, double numeric, double floor = 1e-5) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Largest relative error between `analytic` and central differences of `loss`
/// with respect to every entry of `x`. `loss` must read x afresh on each call.
inline double max_fd_error(const std::function<double()>& loss, std::span<double> x, std::span<const double> analytic,
                           double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = loss();
    x[i] = saved - h;
    const double down = loss();
    x[i] = saved;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * h)));
  }
  return worst;
}

inline void fill_uniform(std::span<double> v, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& x : v) x = d(rng);
}

/// A differentiable graph operation applied to one or two parameter inputs.
struct OpCase {
  std::string name;
  std::vector<Shape> inputs;
  std::function<Var(Graph&, std::span<const Var>)> apply;
};

inline std::vector<OpCase> differentiable_ops() {
  return {
      {"matmul", {{2, 3}, {3, 4}}, [](Graph& g, std::span<const Var> in) { return g.matmul(in[0], in[1]); }},
      {"transpose", {{2, 3}}, [](Graph& g, std::span<const Var> in) { return g.transpose(in[0]); }},
      {"add", {{2, 3}, {2, 3}}, [](Graph& g, std::span<const Var> in) { return g.add(in[0], in[1]); }},
      {"mul", {{2, 3}, {2, 3}}, [](Graph& g, std::span<const Var> in) { return g.mul(in[0], in[1]); }},
      {"tanh", {{2, 3}}, [](Graph& g, std::span<const Var> in) { return g.tanh(in[0]); }},
      {"sigmoid", {{2, 3}}, [](Graph& g, std::span<const Var> in) { return g.sigmoid(in[0]); }},
      {"scale", {{2, 3}}, [](Graph& g, std::span<const Var> in) { return g.scale(in[0], -1.7); }},
      {"sum", {{2, 3}}, [](Graph& g, std::span<const Var> in) { return g.sum(in[0]); }},
      {"row", {{4, 3}}, [](Graph& g, std::span<const Var> in) { return g.row(in[0], 2); }},
      {"concat", {{2, 3}, {2, 2}}, [](Graph& g, std::span<const Var> in) { return g.concat(in[0], in[1]); }},
      {"slice", {{2, 5}}, [](Graph& g, std::span<const Var> in) { return g.slice(in[0], 1, 3); }},
      {"stack_rows", {{1, 3}, {1, 3}},
       [](Graph& g, std::span<const Var> in) {
         const Var rows[] = {in[0], in[1], in[0]};
         return g.stack_rows(rows);
       }},
      {"softmax", {{1, 5}}, [](Graph& g, std::span<const Var> in) { return g.softmax(in[0]); }},
      {"softmax_xent", {{1, 5}},
       [](Graph& g, std::span<const Var> in) {
         static const double target[] = {0.1, 0.2, 0.3, 0.15, 0.25};
         return g.softmax_xent(in[0], target);
       }},
      {"softmax_xent_index", {{1, 5}}, [](Graph& g, std::span<const Var> in) { return g.softmax_xent(in[0], 3); }},
      {"attention_context", {{1, 4}, {3, 4}},
       [](Graph& g, std::span<const Var> in) { return attention_context(g, in[0], in[1]); }},
  };
}

/// Worst relative error of the op's input gradients under a random linear
/// read-out of its output.
inline double op_gradient_error(const OpCase& op, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamStore store;
  std::vector<Parameter*> inputs;
  for (std::size_t i = 0; i < op.inputs.size(); ++i) {
    Parameter& p = store.add("x" + std::to_string(i), op.inputs[i]);
    fill_uniform(p.value.values(), rng);
    inputs.push_back(&p);
  }
  std::vector<double> readout;
  auto forward = [&](Graph& g, bool trainable) {
    std::vector<Var> in;
    for (Parameter* p : inputs) in.push_back(trainable ? g.param(*p) : g.frozen(*p));
    const Var out = op.apply(g, in);
    if (readout.empty()) {
      readout.resize(g.shape(out).size());
      fill_uniform(readout, rng);
    }
    return g.sum(g.mul(out, g.constant(Tensor(g.shape(out), readout))));
  };
  {
    Graph g;
    g.backward(forward(g, true));
  }
  auto loss = [&] {
    Graph g;
    return g.scalar(forward(g, false));
  };
  double worst = 0.0;
  for (Parameter* p : inputs) {
    const std::vector<double> analytic(p->value.grad().begin(), p->value.grad().end());
    worst = std::max(worst, max_fd_error(loss, p->value.values(), analytic));
  }
  return worst;
}

/// Teacher-forced cross-entropy of a fixed target under a small random model;
/// returns the worst relative gradient error over every parameter entry.
inline double model_gradient_error(std::uint64_t seed, int layers = 2, int hidden = 8, int vocab = 12) {
  ModelConfig cfg;
  cfg.num_layers = layers;
  cfg.hidden_size = hidden;
  cfg.embed_size = 6;
  cfg.src_vocab_size = vocab;
  cfg.tgt_vocab_size = vocab;
  cfg.init_scale = 0.5;
  Seq2Seq model(cfg, seed);
  std::mt19937_64 rng(seed * 7 + 1);
  std::vector<TokenId> source, target;
  for (int i = 0; i < 4; ++i) source.push_back(static_cast<TokenId>(1 + rng() % (vocab - 1)));
  for (int i = 0; i < 3; ++i) target.push_back(static_cast<TokenId>(2 + rng() % (vocab - 2)));
  target.push_back(kEos);
  auto build = [&](Graph& g, const Weights& w) {
    const Encoding enc = model.encode(g, w, source);
    const auto logits = model.teacher_force(g, w, enc, target);
    Var total = g.softmax_xent(logits[0], target[0]);
    for (std::size_t j = 1; j < logits.size(); ++j) total = g.add(total, g.softmax_xent(logits[j], target[j]));
    return total;
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
  double worst = 0.0;
  for (Parameter* p : model.params().all()) {
    const std::vector<double> analytic(p->value.grad().begin(), p->value.grad().end());
    worst = std::max(worst, max_fd_error(loss, p->value.values(), analytic));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Random programs and a brute-force interpreter

struct RandomWorld {
  KnowledgeBase kb;
  EntityMap entity_map;
  std::vector<std::string> numeric, categorical;
};

inline RandomWorld random_world(std::mt19937_64& rng) {
  RandomWorld w;
  w.kb.domain_id = "toy";
  w.kb.entity_type = "en.thing";
  w.numeric = {"size", "age"};
  w.categorical = {"color"};
  for (const auto& p : w.numeric) w.kb.properties[p] = ValueKind::kNumber;
  w.kb.properties["color"] = ValueKind::kEntity;
  const int n = 1 + static_cast<int>(rng() % 7);
  for (int i = 0; i < n; ++i) {
    auto& props = w.kb.entities["en.thing.t" + std::to_string(i)];
    for (const auto& p : w.numeric) props[p] = Value::of_number(static_cast<double>(rng() % 5));
    props["color"] = Value::of_entity("en.color.c" + std::to_string(rng() % 3));
  }
  std::vector<std::string> ids;
  for (const auto& [id, _] : w.kb.entities) ids.push_back(id);
  w.entity_map["e0"] = ids[rng() % ids.size()];
  w.entity_map["e1"] = "en.color.c" + std::to_string(rng() % 3);
  return w;
}

/// A well-typed random program over the world's schema, as a token sequence.
inline std::vector<std::string> random_program(const RandomWorld& w, std::mt19937_64& rng, int depth = 0) {
  auto pick = [&](const std::vector<std::string>& v) { return v[rng() % v.size()]; };
  std::function<std::vector<std::string>(int)> set_expr = [&](int d) -> std::vector<std::string> {
    const int choice = d >= 3 ? 0 : static_cast<int>(rng() % 4);
    std::vector<std::string> out;
    if (choice == 0) return {"en.thing"};
    if (choice == 1 || choice == 2) {
      out = {"filter"};
      auto src = set_expr(d + 1);
      out.insert(out.end(), src.begin(), src.end());
      if (choice == 1) {
        static const std::vector<std::string> cmps = {"=", "!=", "<", "<=", ">", ">="};
        const std::string prop = pick(w.numeric);
        out.push_back(prop);
        out.push_back(pick(cmps));
        if (rng() % 2) {
          out.push_back(std::to_string(rng() % 5));
        } else {
          for (const char* t : {"(", "getProperty", "e0"}) out.push_back(t);
          out.push_back(prop);
          out.push_back(")");
        }
      } else {
        out.push_back("color");
        out.push_back(rng() % 2 ? "=" : "!=");
        out.push_back("e1");
      }
      return out;
    }
    out = {rng() % 2 ? "argmax" : "argmin"};
    auto src = set_expr(d + 1);
    out.insert(out.end(), src.begin(), src.end());
    out.push_back(pick(w.numeric));
    return out;
  };
  auto base = set_expr(depth);
  const int top = static_cast<int>(rng() % 4);
  if (top == 1) {
    base.insert(base.begin(), "count");
  } else if (top == 2) {
    base.insert(base.begin(), "getProperty");
    base.push_back(rng() % 2 ? pick(w.numeric) : "color");
  }
  return base;
}

/// Answer computed by enumerating every entity subset condition directly on
/// the token sequence, without the library's parser or executor.
class BruteForce {
 public:
  explicit BruteForce(const RandomWorld& w) : w_(w) {}

  std::vector<std::string> answer(const std::vector<std::string>& tokens) {
    pos_ = 0;
    toks_ = &tokens;
    const std::string& head = tokens[0];
    if (head == "count") {
      ++pos_;
      return {std::to_string(set().size())};
    }
    if (head == "getProperty" && tokens.size() > 1 && tokens[1] != "e0") {
      ++pos_;
      const auto ents = set();
      const std::string prop = next();
      std::set<std::string> vals;
      for (const auto& e : ents) vals.insert(text(w_.kb.entities.at(e).at(prop)));
      return {vals.begin(), vals.end()};
    }
    const auto s = set();
    return {s.begin(), s.end()};
  }

 private:
  static std::string text(const Value& v) {
    return v.kind == ValueKind::kNumber ? std::to_string(static_cast<long>(v.number)) : v.text;
  }
  const std::string& next() { return (*toks_)[pos_++]; }

  std::set<std::string> set() {
    const std::string t = next();
    std::set<std::string> all;
    for (const auto& [id, _] : w_.kb.entities) all.insert(id);
    if (t == "en.thing") return all;
    if (t == "filter") {
      const auto src = set();
      const std::string prop = next();
      const std::string cmp = next();
      std::string rhs = next();
      std::string rhs_text;
      if (rhs == "(") {
        next();  // getProperty
        const std::string ent = w_.entity_map.at(next());
        const std::string p = next();
        next();  // )
        rhs_text = text(w_.kb.entities.at(ent).at(p));
      } else if (rhs == "e1") {
        rhs_text = w_.entity_map.at("e1");
      } else {
        rhs_text = rhs;
      }
      std::set<std::string> out;
      for (const auto& e : src) {
        const std::string lhs = text(w_.kb.entities.at(e).at(prop));
        bool keep = false;
        if (cmp == "=") keep = lhs == rhs_text;
        else if (cmp == "!=") keep = lhs != rhs_text;
        else {
          const long a = std::stol(lhs), b = std::stol(rhs_text);
          keep = cmp == "<" ? a < b : cmp == "<=" ? a <= b : cmp == ">" ? a > b : a >= b;
        }
        if (keep) out.insert(e);
      }
      return out;
    }
    const bool max = t == "argmax";
    const auto src = set();
    const std::string prop = next();
    std::set<std::string> out;
    for (const auto& e : src) {
      const long v = std::stol(text(w_.kb.entities.at(e).at(prop)));
      bool extreme = true;
      for (const auto& o : src) {
        const long u = std::stol(text(w_.kb.entities.at(o).at(prop)));
        if (max ? u > v : u < v) extreme = false;
      }
      if (extreme) out.insert(e);
    }
    return out;
  }

  const RandomWorld& w_;
  const std::vector<std::string>* toks_ = nullptr;
  std::size_t pos_ = 0;
};

/// Denotation rendered the way the brute-force oracle renders answers.
inline std::vector<std::string> render(const Denotation& d) {
  if (d.kind == Denotation::Kind::kCount) return {std::to_string(d.count)};
  std::vector<std::string> out;
  for (const auto& v : d.items) {
    out.push_back(v.kind == ValueKind::kNumber ? std::to_string(static_cast<long>(v.number)) : v.text);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace unisp::testing
