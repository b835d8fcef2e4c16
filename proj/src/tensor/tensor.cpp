#include "catn/tensor.hpp"

#include <numeric>
#include <sstream>

namespace catn {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

double* TensorData::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad.data();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), fill);
  return from(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                         " values");
  }
  auto impl = std::make_shared<TensorData>();
  impl->shape = std::move(shape);
  impl->value = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({}, {v}, requires_grad); }

Tensor Tensor::identity(std::size_t n) {
  Tensor t = zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) t.data()[i * n + i] = 1.0;
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw RankError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return impl_->shape[axis];
}

void Tensor::zero_grad() const { impl_->grad.clear(); }

void Tensor::set_requires_grad(bool on) { impl_->requires_grad = on; }

double Tensor::item() const {
  if (numel() != 1) throw RankError("item() on tensor of shape " + shape_str(shape()));
  return impl_->value[0];
}

double Tensor::at(std::size_t i, std::size_t j) const { return impl_->value[i * impl_->shape[1] + j]; }

double Tensor::at(std::size_t i, std::size_t j, std::size_t k) const {
  const auto& s = impl_->shape;
  return impl_->value[(i * s[1] + j) * s[2] + k];
}

Tensor Tensor::detach() const { return from(shape(), values(), false); }

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const Tensor& out, std::vector<std::shared_ptr<TensorData>> inputs, BackwardFn fn) {
  out.impl()->requires_grad = true;
  out.impl()->is_leaf = false;
  entries_.push_back({out.impl(), std::move(inputs), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw RankError("backward() needs a scalar loss, got " + (loss.defined() ? shape_str(loss.shape()) : "undefined"));
  }
  TensorData& root = *loss.impl();
  if (!root.requires_grad) throw std::logic_error("backward(): loss does not depend on any differentiable tensor");
  if (root.is_leaf) {
    root.grad_buffer()[0] += 1.0;
    return;
  }
  std::size_t end = entries_.size();
  while (end > 0 && entries_[end - 1].out.get() != &root) --end;
  if (end == 0) throw std::logic_error("backward(): loss was not recorded on this tape");

  for (std::size_t i = 0; i < end; ++i) entries_[i].out->grad.clear();
  root.grad.assign(1, 1.0);
  for (std::size_t i = end; i-- > 0;) {
    Entry& e = entries_[i];
    if (!e.out->grad.empty()) e.fn(*e.out);
  }
}

void Tape::clear() { entries_.clear(); }

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (tape == nullptr) throw std::logic_error("backward(): no active tape");
  tape->backward(loss);
}

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }

NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

}  // namespace catn
