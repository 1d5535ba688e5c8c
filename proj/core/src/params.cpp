#include "unisp/params.hpp"

#include <cmath>

#include "unisp/error.hpp"

namespace unisp {

ParamStore::ParamStore(const ParamStore& other) { *this = other; }

ParamStore& ParamStore::operator=(const ParamStore& other) {
  if (this == &other) return *this;
  params_.clear();
  index_ = other.index_;
  params_.reserve(other.params_.size());
  for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
  return *this;
}

Parameter& ParamStore::add(const std::string& name, Shape shape) {
  if (contains(name)) throw ContractViolation("duplicate parameter '" + name + "'");
  index_[name] = params_.size();
  params_.push_back(std::make_unique<Parameter>(Parameter{name, Tensor(shape), {}}));
  return *params_.back();
}

Parameter& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractViolation("unknown parameter '" + name + "'");
  return *params_[it->second];
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractViolation("unknown parameter '" + name + "'");
  return *params_[it->second];
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParamStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::size_t ParamStore::num_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->value.zero_grad();
}

double ParamStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) {
    for (double g : p->value.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double ParamStore::clip_grad_norm(double max_norm) {
  const double norm = grad_norm();
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& p : params_) {
      if (!p->value.has_grad()) continue;
      for (double& g : p->value.grad()) g *= s;
    }
  }
  return norm;
}

void ParamStore::init_uniform(double low, double high, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(low, high);
  for (auto& p : params_) {
    for (double& v : p->value.values()) v = dist(rng);
  }
}

void rmsprop_update(ParamStore& params, const RmsPropConfig& config) {
  if (!(config.learning_rate > 0.0)) {
    throw ConfigError("rmsprop learning rate must be positive, got " +
                      std::to_string(config.learning_rate));
  }
  if (!(config.decay >= 0.0 && config.decay < 1.0) || !(config.eps > 0.0)) {
    throw ConfigError("rmsprop decay must lie in [0,1) and eps must be positive");
  }
  for (Parameter* p : params.all()) {
    if (!p->value.has_grad()) continue;
    auto values = p->value.values();
    auto grads = p->value.grad();
    if (p->rms_cache.size() != values.size()) p->rms_cache.assign(values.size(), 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grads[i];
      double& c = p->rms_cache[i];
      c = config.decay * c + (1.0 - config.decay) * g * g;
      values[i] -= config.learning_rate * g / std::sqrt(c + config.eps);
    }
  }
}

}  // namespace unisp
