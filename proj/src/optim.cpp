#include "egnmt/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace egnmt {

Tensor ParameterStore::add(const std::string& name, Tensor value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  if (!value.requires_grad()) value = Tensor::from_data(value.shape(), {value.data().begin(), value.data().end()}, true);
  Parameter p;
  p.name = name;
  p.value = value;
  p.adam_m.assign(value.size(), 0.0);
  p.adam_v.assign(value.size(), 0.0);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return value;
}

Tensor ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return params_[it->second].value;
}

std::size_t ParameterStore::total_size() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

void ParameterStore::remove_prefix(const std::string& prefix) {
  std::erase_if(params_, [&](const Parameter& p) { return p.name.rfind(prefix, 0) == 0; });
  index_.clear();
  for (std::size_t i = 0; i < params_.size(); ++i) index_[params_[i].name] = i;
}

void adam_step(std::span<Parameter> params, const AdamOptions& o) {
  for (auto& p : params) {
    ++p.step_count;
    auto grad = p.value.grad();
    if (grad.empty()) continue;
    auto w = p.value.mutable_data();
    const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(p.step_count));
    const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(p.step_count));
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = grad[i];
      p.adam_m[i] = o.beta1 * p.adam_m[i] + (1.0 - o.beta1) * g;
      p.adam_v[i] = o.beta2 * p.adam_v[i] + (1.0 - o.beta2) * g * g;
      const double m_hat = p.adam_m[i] / bc1;
      const double v_hat = p.adam_v[i] / bc2;
      w[i] -= o.lr * m_hat / (std::sqrt(v_hat) + o.eps);
    }
  }
}

double warmup_inverse_sqrt(double peak_lr, std::int64_t step, std::int64_t warmup_steps) {
  const double s = static_cast<double>(std::max<std::int64_t>(step, 1));
  if (warmup_steps <= 0) return peak_lr;
  const double w = static_cast<double>(warmup_steps);
  return peak_lr * std::min(s / w, std::sqrt(w / s));
}

}  // namespace egnmt
