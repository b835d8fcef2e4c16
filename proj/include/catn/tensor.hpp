#pragma once

// Dense row-major float64 tensors with a reverse-mode differentiation tape.
//
// Ops record themselves on the thread's active Tape whenever at least one
// operand requires a gradient. Without an active tape every op is a pure
// forward computation, so read-only parameters can be shared across threads.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "catn/error.hpp"

namespace catn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  bool is_leaf = true;

  double* grad_buffer();  // allocates zeros on first use
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double fill, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor identity(std::size_t n);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->value.size(); }

  std::span<double> data() { return impl_->value; }
  std::span<const double> data() const { return impl_->value; }
  const std::vector<double>& values() const { return impl_->value; }

  // Empty span when no gradient has been accumulated.
  std::span<const double> grad() const { return impl_->grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  void zero_grad() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on);
  bool is_leaf() const { return impl_->is_leaf; }

  double item() const;
  double at(std::size_t i) const { return impl_->value[i]; }
  double at(std::size_t i, std::size_t j) const;
  double at(std::size_t i, std::size_t j, std::size_t k) const;

  // Value copy detached from the tape.
  Tensor detach() const;

  const std::shared_ptr<TensorData>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorData> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorData> impl_;
};

// Ordered record of executed operations. Constructing a Tape makes it the
// active tape of the current thread until it is destroyed.
class Tape {
 public:
  using BackwardFn = std::function<void(TensorData& out)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(const Tensor& out, std::vector<std::shared_ptr<TensorData>> inputs, BackwardFn fn);

  // Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
  // loss. Intermediate gradients are reset on each call; leaf gradients add up.
  void backward(const Tensor& loss);

  void clear();
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::shared_ptr<TensorData> out;
    std::vector<std::shared_ptr<TensorData>> inputs;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  Tape* previous_ = nullptr;
};

// backward() on the active tape.
void backward(const Tensor& loss);

// Temporarily disables recording on this thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// Batched product over the leading axis; b is [B,n,k] when transpose_b.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
// x[..., n] + bias[n]
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);

enum class Elementwise { Tanh, Sigmoid, Relu, Add, Sub, Mul, Concat };
// Dispatch form of the pointwise family; Concat joins along `axis`.
Tensor elementwise(Elementwise f, std::span<const Tensor> args, std::size_t axis = 0);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor stack(std::span<const Tensor> parts, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);

// Softmax along `axis`. The optional mask (1 keep / 0 drop) broadcasts to x
// with numpy rules; dropped entries come out exactly 0.
Tensor softmax(const Tensor& x, std::size_t axis, const Tensor& mask = Tensor());

// Rows of table[V,E] selected by ids -> [ids.size(), E].
Tensor gather_rows(const Tensor& table, std::span<const int> ids);

// Row-wise m*updated + (1-m)*previous with m in {0,1} per row.
Tensor masked_update(std::span<const double> keep, const Tensor& updated, const Tensor& previous);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Mean negative log-likelihood of targets under softmax(logits[N,V]) over the
// rows with weight 1.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, std::span<const double> weights);

// scores[b,j] = sum_k v[k] * tanh(keys[b,j,k] + query[b,k])
Tensor additive_scores(const Tensor& keys, const Tensor& query, const Tensor& v);

// Reductions over axis 1 of x[B,T,u] restricted to positions with mask[b,t]=1.
Tensor masked_mean(const Tensor& x, const Tensor& mask);
Tensor masked_max(const Tensor& x, const Tensor& mask);

// x[b, steps[b], :] for x[B,T,u] -> [B,u]
Tensor select_steps(const Tensor& x, std::span<const std::size_t> steps);

}  // namespace catn
