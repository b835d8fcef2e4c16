#include "catn/params.hpp"

#include <cmath>

namespace catn {

Tensor ParamStore::add(std::string name, Tensor value) {
  if (index_.count(name)) throw std::invalid_argument("parameter '" + name + "' registered twice");
  value.set_requires_grad(true);
  index_.emplace(name, items_.size());
  items_.emplace_back(std::move(name), value);
  return value;
}

const Tensor& ParamStore::get(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  return items_[it->second].second;
}

bool ParamStore::contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (const auto& [name, t] : items_) t.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore copy;
  for (const auto& [name, t] : items_) copy.add(name, t.detach());
  return copy;
}

Tensor glorot_uniform(Rng& rng, std::size_t rows, std::size_t cols) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.uniform(-limit, limit);
  return Tensor::from({rows, cols}, std::move(v));
}

}  // namespace catn
