#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "egnmt/tensor.hpp"

namespace egnmt {

struct Parameter {
  std::string name;
  Tensor value;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  std::int64_t step_count = 0;
};

/// Owns every trainable tensor of a model under a unique dotted name.
/// Insertion order is stable and defines serialization order.
class ParameterStore {
 public:
  Tensor add(const std::string& name, Tensor value);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  std::size_t total_size() const;

  void zero_grad();
  // Drops every parameter whose name starts with prefix.
  void remove_prefix(const std::string& prefix);

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

/// Bias-corrected Adam. Parameters without an accumulated gradient are
/// treated as having a zero gradient.
void adam_step(std::span<Parameter> params, const AdamOptions& options);

/// Linear warmup then inverse-square-root decay, peaking at peak_lr.
double warmup_inverse_sqrt(double peak_lr, std::int64_t step, std::int64_t warmup_steps);

}  // namespace egnmt
