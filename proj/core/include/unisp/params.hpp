#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "unisp/tensor.hpp"

namespace unisp {

/// A named learnable tensor plus its RMSprop running average.
struct Parameter {
  std::string name;
  Tensor value;
  std::vector<double> rms_cache;
};

/// Owns every learnable tensor of a model. Parameter addresses are stable for the
/// lifetime of the store; copies are deep.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore& other);
  ParamStore& operator=(const ParamStore& other);
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Parameter& add(const std::string& name, Shape shape);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  /// Parameters in insertion order.
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;

  std::size_t num_values() const;
  void zero_grad();
  double grad_norm() const;
  /// Rescales all gradients so the global L2 norm is at most max_norm. Returns the pre-clip norm.
  double clip_grad_norm(double max_norm);
  void init_uniform(double low, double high, std::mt19937_64& rng);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

struct RmsPropConfig {
  double learning_rate = 0.001;
  double decay = 0.9;
  double eps = 1e-8;
};

/// c <- decay*c + (1-decay)*g^2 ; p <- p - lr*g/sqrt(c+eps). Gradients are left in place.
void rmsprop_update(ParamStore& params, const RmsPropConfig& config);

}  // namespace unisp
