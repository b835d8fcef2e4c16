#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "catn/random.hpp"
#include "catn/tensor.hpp"

namespace catn {

// Named trainable tensors in registration order. The order is part of the
// checkpoint format and of the optimizer's reduction order.
class ParamStore {
 public:
  Tensor add(std::string name, Tensor value);
  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  // Value copy with fresh leaves (no shared storage, no gradients).
  ParamStore clone() const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Uniform(-a, a) with a = sqrt(6 / (rows + cols)).
Tensor glorot_uniform(Rng& rng, std::size_t rows, std::size_t cols);

}  // namespace catn
