#include <algorithm>
#include <cmath>
#include <limits>

#include "catn/tensor.hpp"
#include "kernels.hpp"

namespace catn {

namespace {

using Impl = std::shared_ptr<TensorData>;

Tape* recording(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = Tape::active();
  if (tape == nullptr) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return tape;
  }
  return nullptr;
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  require_defined(t, op);
  if (t.rank() != rank) {
    throw RankError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

std::size_t prod(const Shape& s, std::size_t begin, std::size_t end) {
  std::size_t p = 1;
  for (std::size_t i = begin; i < end; ++i) p *= s[i];
  return p;
}

template <class F>
Tensor unary(const Tensor& x, F&& f, double (*dfdy)(double y, double x)) {
  require_defined(x, "unary");
  std::vector<double> out(x.numel());
  const auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xs[i]);
  Tensor y = Tensor::from(x.shape(), std::move(out));
  if (Tape* tape = recording({&x})) {
    Impl xi = x.impl();
    tape->record(y, {xi}, [xi, dfdy](TensorData& o) {
      if (!xi->requires_grad) return;
      double* gx = xi->grad_buffer();
      for (std::size_t i = 0; i < o.value.size(); ++i) gx[i] += o.grad[i] * dfdy(o.value[i], xi->value[i]);
    });
  }
  return y;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  kernels::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data());
  Tensor c = Tensor::from({m, n}, std::move(out));
  if (Tape* tape = recording({&a, &b})) {
    Impl ai = a.impl(), bi = b.impl();
    tape->record(c, {ai, bi}, [ai, bi, m, n, k](TensorData& o) {
      if (ai->requires_grad) kernels::gemm_nt(m, k, n, o.grad.data(), bi->value.data(), ai->grad_buffer());
      if (bi->requires_grad) kernels::gemm_tn(k, n, m, ai->value.data(), o.grad.data(), bi->grad_buffer());
    });
  }
  return c;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
  if (b.dim(0) != batch || bk != k) {
    throw DimensionError("bmm: incompatible operands " + shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                         (transpose_b ? " (transposed)" : ""));
  }
  std::vector<double> out(batch * m * n, 0.0);
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  for (std::size_t i = 0; i < batch; ++i) {
    if (transpose_b) {
      kernels::gemm_nt(m, n, k, ap + i * m * k, bp + i * n * k, out.data() + i * m * n);
    } else {
      kernels::gemm_nn(m, n, k, ap + i * m * k, bp + i * k * n, out.data() + i * m * n);
    }
  }
  Tensor c = Tensor::from({batch, m, n}, std::move(out));
  if (Tape* tape = recording({&a, &b})) {
    Impl ai = a.impl(), bi = b.impl();
    tape->record(c, {ai, bi}, [ai, bi, batch, m, n, k, transpose_b](TensorData& o) {
      for (std::size_t i = 0; i < batch; ++i) {
        const double* g = o.grad.data() + i * m * n;
        const double* av = ai->value.data() + i * m * k;
        const double* bv = bi->value.data() + i * k * n;
        if (ai->requires_grad) {
          double* ga = ai->grad_buffer() + i * m * k;
          if (transpose_b) {
            kernels::gemm_nn(m, k, n, g, bv, ga);
          } else {
            kernels::gemm_nt(m, k, n, g, bv, ga);
          }
        }
        if (bi->requires_grad) {
          double* gb = bi->grad_buffer() + i * k * n;
          if (transpose_b) {
            kernels::gemm_tn(n, k, m, g, av, gb);
          } else {
            kernels::gemm_tn(k, n, m, av, g, gb);
          }
        }
      }
    });
  }
  return c;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  Tensor c = Tensor::from(a.shape(), std::move(out));
  if (Tape* tape = recording({&a, &b})) {
    Impl ai = a.impl(), bi = b.impl();
    tape->record(c, {ai, bi}, [ai, bi](TensorData& o) {
      for (const Impl& x : {ai, bi}) {
        if (!x->requires_grad) continue;
        double* g = x->grad_buffer();
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
      }
    });
  }
  return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  Tensor c = Tensor::from(a.shape(), std::move(out));
  if (Tape* tape = recording({&a, &b})) {
    Impl ai = a.impl(), bi = b.impl();
    tape->record(c, {ai, bi}, [ai, bi](TensorData& o) {
      if (ai->requires_grad) {
        double* g = ai->grad_buffer();
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
      }
      if (bi->requires_grad) {
        double* g = bi->grad_buffer();
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
      }
    });
  }
  return c;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  Tensor c = Tensor::from(a.shape(), std::move(out));
  if (Tape* tape = recording({&a, &b})) {
    Impl ai = a.impl(), bi = b.impl();
    tape->record(c, {ai, bi}, [ai, bi](TensorData& o) {
      if (ai->requires_grad) {
        double* g = ai->grad_buffer();
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * bi->value[i];
      }
      if (bi->requires_grad) {
        double* g = bi->grad_buffer();
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * ai->value[i];
      }
    });
  }
  return c;
}

Tensor scale(const Tensor& x, double factor) {
  require_defined(x, "scale");
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * factor;
  Tensor y = Tensor::from(x.shape(), std::move(out));
  if (Tape* tape = recording({&x})) {
    Impl xi = x.impl();
    tape->record(y, {xi}, [xi, factor](TensorData& o) {
      double* g = xi->grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * factor;
    });
  }
  return y;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_defined(x, "add_bias");
  require_rank(bias, 1, "add_bias");
  const std::size_t n = bias.dim(0);
  if (x.rank() == 0 || x.shape().back() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
  }
  std::vector<double> out(x.values());
  const std::size_t rows = out.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bias.at(j);
  }
  Tensor y = Tensor::from(x.shape(), std::move(out));
  if (Tape* tape = recording({&x, &bias})) {
    Impl xi = x.impl(), bi = bias.impl();
    tape->record(y, {xi, bi}, [xi, bi, n, rows](TensorData& o) {
      if (xi->requires_grad) {
        double* g = xi->grad_buffer();
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
      }
      if (bi->requires_grad) {
        double* g = bi->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[r * n + j];
        }
      }
    });
  }
  return y;
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double y, double) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double y, double) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0 ? v : 0.0; }, [](double, double v) { return v > 0 ? 1.0 : 0.0; });
}

Tensor elementwise(Elementwise f, std::span<const Tensor> args, std::size_t axis) {
  auto need = [&](std::size_t n) {
    if (args.size() != n) {
      throw std::invalid_argument("elementwise: expected " + std::to_string(n) + " operands, got " +
                                  std::to_string(args.size()));
    }
  };
  switch (f) {
    case Elementwise::Tanh: need(1); return tanh(args[0]);
    case Elementwise::Sigmoid: need(1); return sigmoid(args[0]);
    case Elementwise::Relu: need(1); return relu(args[0]);
    case Elementwise::Add: need(2); return add(args[0], args[1]);
    case Elementwise::Sub: need(2); return sub(args[0], args[1]);
    case Elementwise::Mul: need(2); return mul(args[0], args[1]);
    case Elementwise::Concat: return concat(args, axis);
  }
  throw std::invalid_argument("elementwise: unknown function");
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw EmptyInputError("concat: no operands");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw RankError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == ref[d];
    if (!ok) throw DimensionError("concat: incompatible shapes " + shape_str(ref) + " and " + shape_str(s));
    out_shape[axis] += s[axis];
  }
  const std::size_t outer = prod(ref, 0, axis);
  const std::size_t inner = prod(ref, axis + 1, ref.size());
  const std::size_t out_row = out_shape[axis] * inner;
  std::vector<double> out(outer * out_row);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t chunk = p.shape()[axis] * inner;
    offsets.push_back(off);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.data().data() + o * chunk, chunk, out.data() + o * out_row + off);
    }
    off += chunk;
  }
  Tensor y = Tensor::from(out_shape, std::move(out));
  Tape* tape = Tape::active();
  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  if (tape != nullptr && any) {
    std::vector<Impl> ins;
    for (const Tensor& p : parts) ins.push_back(p.impl());
    tape->record(y, ins, [ins, offsets, outer, out_row, inner, axis](TensorData& o) {
      for (std::size_t i = 0; i < ins.size(); ++i) {
        if (!ins[i]->requires_grad) continue;
        const std::size_t chunk = ins[i]->shape[axis] * inner;
        double* g = ins[i]->grad_buffer();
        for (std::size_t r = 0; r < outer; ++r) {
          const double* src = o.grad.data() + r * out_row + offsets[i];
          for (std::size_t j = 0; j < chunk; ++j) g[r * chunk + j] += src[j];
        }
      }
    });
  }
  return y;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  require_defined(x, "slice");
  const Shape& s = x.shape();
  if (axis >= s.size()) throw RankError("slice: axis out of range for " + shape_str(s));
  if (length == 0 || start + length > s[axis]) {
    throw DimensionError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for " + shape_str(s));
  }
  const std::size_t outer = prod(s, 0, axis);
  const std::size_t inner = prod(s, axis + 1, s.size());
  const std::size_t in_row = s[axis] * inner;
  const std::size_t out_row = length * inner;
  std::vector<double> out(outer * out_row);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.data().data() + o * in_row + start * inner, out_row, out.data() + o * out_row);
  }
  Shape out_shape = s;
  out_shape[axis] = length;
  Tensor y = Tensor::from(out_shape, std::move(out));
  if (Tape* tape = recording({&x})) {
    Impl xi = x.impl();
    tape->record(y, {xi}, [xi, outer, in_row, out_row, start, inner](TensorData& o) {
      double* g = xi->grad_buffer();
      for (std::size_t r = 0; r < outer; ++r) {
        double* dst = g + r * in_row + start * inner;
        const double* src = o.grad.data() + r * out_row;
        for (std::size_t j = 0; j < out_row; ++j) dst[j] += src[j];
      }
    });
  }
  return y;
}

Tensor stack(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw EmptyInputError("stack: no operands");
  const Shape& ref = parts[0].shape();
  if (axis > ref.size()) throw RankError("stack: axis out of range for " + shape_str(ref));
  for (const Tensor& p : parts) {
    if (p.shape() != ref) throw DimensionError("stack: shape mismatch " + shape_str(ref) + " vs " + shape_str(p.shape()));
  }
  Shape expanded = ref;
  expanded.insert(expanded.begin() + static_cast<std::ptrdiff_t>(axis), 1);
  std::vector<Tensor> views;
  views.reserve(parts.size());
  for (const Tensor& p : parts) views.push_back(reshape(p, expanded));
  return concat(views, axis);
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor y = Tensor::from(std::move(shape), x.values());
  if (Tape* tape = recording({&x})) {
    Impl xi = x.impl();
    tape->record(y, {xi}, [xi](TensorData& o) {
      double* g = xi->grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    });
  }
  return y;
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  require_defined(x, "permute");
  const Shape& s = x.shape();
  if (perm.size() != s.size()) throw RankError("permute: permutation rank differs from " + shape_str(s));
  std::vector<bool> seen(s.size(), false);
  for (auto p : perm) {
    if (p >= s.size() || seen[p]) throw std::invalid_argument("permute: not a permutation");
    seen[p] = true;
  }
  std::vector<std::size_t> in_stride(s.size(), 1);
  for (std::size_t d = s.size(); d-- > 1;) in_stride[d - 1] = in_stride[d] * s[d];
  Shape out_shape(s.size());
  for (std::size_t d = 0; d < s.size(); ++d) out_shape[d] = s[perm[d]];

  const std::size_t n = x.numel();
  std::vector<std::size_t> source(n);
  std::vector<std::size_t> idx(s.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < s.size(); ++d) src += idx[d] * in_stride[perm[d]];
    source[flat] = src;
    for (std::size_t d = s.size(); d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x.at(source[i]);
  Tensor y = Tensor::from(out_shape, std::move(out));
  if (Tape* tape = recording({&x})) {
    Impl xi = x.impl();
    tape->record(y, {xi}, [xi, source = std::move(source)](TensorData& o) {
      double* g = xi->grad_buffer();
      for (std::size_t i = 0; i < source.size(); ++i) g[source[i]] += o.grad[i];
    });
  }
  return y;
}

Tensor softmax(const Tensor& x, std::size_t axis, const Tensor& mask) {
  require_defined(x, "softmax");
  const Shape& s = x.shape();
  if (axis >= s.size()) throw RankError("softmax: axis out of range for " + shape_str(s));
  const std::size_t n = x.numel();

  std::vector<char> keep;
  if (mask.defined()) {
    const Shape& ms = mask.shape();
    if (ms.size() > s.size()) throw DimensionError("softmax: mask " + shape_str(ms) + " has higher rank than " + shape_str(s));
    const std::size_t lead = s.size() - ms.size();
    std::vector<std::size_t> mstride(s.size(), 0);
    std::size_t st = 1;
    for (std::size_t d = ms.size(); d-- > 0;) {
      const std::size_t xd = d + lead;
      if (ms[d] != 1 && ms[d] != s[xd]) {
        throw DimensionError("softmax: mask " + shape_str(ms) + " not broadcastable to " + shape_str(s));
      }
      mstride[xd] = ms[d] == 1 ? 0 : st;
      st *= ms[d];
    }
    keep.resize(n);
    std::vector<std::size_t> idx(s.size(), 0);
    for (std::size_t flat = 0; flat < n; ++flat) {
      std::size_t mi = 0;
      for (std::size_t d = 0; d < s.size(); ++d) mi += idx[d] * mstride[d];
      keep[flat] = mask.at(mi) != 0.0;
      for (std::size_t d = s.size(); d-- > 0;) {
        if (++idx[d] < s[d]) break;
        idx[d] = 0;
      }
    }
  }

  const std::size_t outer = prod(s, 0, axis);
  const std::size_t len = s[axis];
  const std::size_t inner = prod(s, axis + 1, s.size());
  std::vector<double> out(n, 0.0);
  const auto xs = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      bool any = false;
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t at = base + t * inner;
        if (!keep.empty() && !keep[at]) continue;
        any = true;
        mx = std::max(mx, xs[at]);
      }
      if (!any) throw DegenerateError("softmax: fully masked slice has no distribution");
      double total = 0.0;
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t at = base + t * inner;
        if (!keep.empty() && !keep[at]) continue;
        out[at] = std::exp(xs[at] - mx);
        total += out[at];
      }
      for (std::size_t t = 0; t < len; ++t) out[base + t * inner] /= total;
    }
  }
  Tensor y = Tensor::from(s, std::move(out));
  if (Tape* tape = recording({&x})) {
    Impl xi = x.impl();
    tape->record(y, {xi}, [xi, outer, len, inner](TensorData& o) {
      double* g = xi->grad_buffer();
      for (std::size_t r = 0; r < outer; ++r) {
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t base = r * len * inner + i;
          double dot = 0.0;
          for (std::size_t t = 0; t < len; ++t) dot += o.grad[base + t * inner] * o.value[base + t * inner];
          for (std::size_t t = 0; t < len; ++t) {
            const std::size_t at = base + t * inner;
            g[at] += o.value[at] * (o.grad[at] - dot);
          }
        }
      }
    });
  }
  return y;
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  require_rank(table, 2, "gather_rows");
  if (ids.empty()) throw EmptyInputError("gather_rows: no ids");
  const std::size_t rows = table.dim(0), width = table.dim(1);
  std::vector<double> out(ids.size() * width);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw DimensionError("gather_rows: id " + std::to_string(ids[i]) + " outside table " + shape_str(table.shape()));
    }
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * width, width, out.data() + i * width);
  }
  Tensor y = Tensor::from({ids.size(), width}, std::move(out));
  if (Tape* tape = recording({&table})) {
    Impl ti = table.impl();
    std::vector<int> idv(ids.begin(), ids.end());
    tape->record(y, {ti}, [ti, idv = std::move(idv), width](TensorData& o) {
      double* g = ti->grad_buffer();
      for (std::size_t i = 0; i < idv.size(); ++i) {
        double* dst = g + static_cast<std::size_t>(idv[i]) * width;
        for (std::size_t j = 0; j < width; ++j) dst[j] += o.grad[i * width + j];
      }
    });
  }
  return y;
}

Tensor masked_update(std::span<const double> keep, const Tensor& updated, const Tensor& previous) {
  require_same_shape(updated, previous, "masked_update");
  require_rank(updated, 2, "masked_update");
  const std::size_t rows = updated.dim(0), width = updated.dim(1);
  if (keep.size() != rows) throw DimensionError("masked_update: mask length differs from row count");
  std::vector<double> out(rows * width);
  for (std::size_t r = 0; r < rows; ++r) {
    const Tensor& src = keep[r] != 0.0 ? updated : previous;
    std::copy_n(src.data().data() + r * width, width, out.data() + r * width);
  }
  Tensor y = Tensor::from(updated.shape(), std::move(out));
  if (Tape* tape = recording({&updated, &previous})) {
    Impl ui = updated.impl(), pi = previous.impl();
    std::vector<double> kv(keep.begin(), keep.end());
    tape->record(y, {ui, pi}, [ui, pi, kv = std::move(kv), width](TensorData& o) {
      for (std::size_t r = 0; r < kv.size(); ++r) {
        TensorData& dst = kv[r] != 0.0 ? *ui : *pi;
        if (!dst.requires_grad) continue;
        double* g = dst.grad_buffer() + r * width;
        for (std::size_t j = 0; j < width; ++j) g[j] += o.grad[r * width + j];
      }
    });
  }
  return y;
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor y = Tensor::scalar(total);
  if (Tape* tape = recording({&x})) {
    Impl xi = x.impl();
    tape->record(y, {xi}, [xi](TensorData& o) {
      double* g = xi->grad_buffer();
      for (std::size_t i = 0; i < xi->value.size(); ++i) g[i] += o.grad[0];
    });
  }
  return y;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_defined(x, "layer_norm");
  require_rank(gain, 1, "layer_norm");
  require_rank(bias, 1, "layer_norm");
  const std::size_t n = gain.dim(0);
  if (x.rank() == 0 || x.shape().back() != n || bias.dim(0) != n) {
    throw DimensionError("layer_norm: parameters " + shape_str(gain.shape()) + " do not match " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / n;
  std::vector<double> xhat(x.numel()), inv_std(rows), out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (xr[j] - mu) * inv_std[r];
      out[r * n + j] = gain.at(j) * xhat[r * n + j] + bias.at(j);
    }
  }
  Tensor y = Tensor::from(x.shape(), std::move(out));
  if (Tape* tape = recording({&x, &gain, &bias})) {
    Impl xi = x.impl(), gi = gain.impl(), bi = bias.impl();
    tape->record(y, {xi, gi, bi},
                 [xi, gi, bi, n, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorData& o) {
                   std::vector<double> dxhat(n);
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* g = o.grad.data() + r * n;
                     const double* xh = xhat.data() + r * n;
                     if (gi->requires_grad) {
                       double* gg = gi->grad_buffer();
                       for (std::size_t j = 0; j < n; ++j) gg[j] += g[j] * xh[j];
                     }
                     if (bi->requires_grad) {
                       double* gb = bi->grad_buffer();
                       for (std::size_t j = 0; j < n; ++j) gb[j] += g[j];
                     }
                     if (xi->requires_grad) {
                       double m1 = 0.0, m2 = 0.0;
                       for (std::size_t j = 0; j < n; ++j) {
                         dxhat[j] = g[j] * gi->value[j];
                         m1 += dxhat[j];
                         m2 += dxhat[j] * xh[j];
                       }
                       m1 /= static_cast<double>(n);
                       m2 /= static_cast<double>(n);
                       double* gx = xi->grad_buffer() + r * n;
                       for (std::size_t j = 0; j < n; ++j) gx[j] += inv_std[r] * (dxhat[j] - m1 - xh[j] * m2);
                     }
                   }
                 });
  }
  return y;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, std::span<const double> weights) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != rows || weights.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets / " +
                         std::to_string(weights.size()) + " weights for logits " + shape_str(logits.shape()));
  }
  double total_weight = 0.0;
  for (double w : weights) total_weight += w;
  if (total_weight <= 0.0) throw EmptyInputError("cross_entropy: every target position is masked");

  std::vector<double> probs(rows * vocab);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.data().data() + r * vocab;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
      throw DimensionError("cross_entropy: target id " + std::to_string(targets[r]) + " outside vocabulary of " +
                           std::to_string(vocab));
    }
    const double mx = *std::max_element(z, z + vocab);
    double total = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      probs[r * vocab + j] = std::exp(z[j] - mx);
      total += probs[r * vocab + j];
    }
    for (std::size_t j = 0; j < vocab; ++j) probs[r * vocab + j] /= total;
    if (weights[r] != 0.0) loss += weights[r] * (mx + std::log(total) - z[targets[r]]);
  }
  Tensor y = Tensor::scalar(loss / total_weight);
  if (Tape* tape = recording({&logits})) {
    Impl li = logits.impl();
    std::vector<int> tv(targets.begin(), targets.end());
    std::vector<double> wv(weights.begin(), weights.end());
    tape->record(y, {li},
                 [li, probs = std::move(probs), tv = std::move(tv), wv = std::move(wv), vocab, total_weight](
                     TensorData& o) {
                   double* g = li->grad_buffer();
                   for (std::size_t r = 0; r < tv.size(); ++r) {
                     if (wv[r] == 0.0) continue;
                     const double c = o.grad[0] * wv[r] / total_weight;
                     for (std::size_t j = 0; j < vocab; ++j) g[r * vocab + j] += c * probs[r * vocab + j];
                     g[r * vocab + static_cast<std::size_t>(tv[r])] -= c;
                   }
                 });
  }
  return y;
}

Tensor additive_scores(const Tensor& keys, const Tensor& query, const Tensor& v) {
  require_rank(keys, 3, "additive_scores");
  require_rank(query, 2, "additive_scores");
  require_rank(v, 1, "additive_scores");
  const std::size_t batch = keys.dim(0), slots = keys.dim(1), width = keys.dim(2);
  if (query.dim(0) != batch || query.dim(1) != width || v.dim(0) != width) {
    throw DimensionError("additive_scores: keys " + shape_str(keys.shape()) + ", query " + shape_str(query.shape()) +
                         ", v " + shape_str(v.shape()));
  }
  std::vector<double> act(batch * slots * width), out(batch * slots);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* q = query.data().data() + b * width;
    for (std::size_t j = 0; j < slots; ++j) {
      const std::size_t base = (b * slots + j) * width;
      double s = 0.0;
      for (std::size_t k = 0; k < width; ++k) {
        act[base + k] = std::tanh(keys.at(base + k) + q[k]);
        s += v.at(k) * act[base + k];
      }
      out[b * slots + j] = s;
    }
  }
  Tensor y = Tensor::from({batch, slots}, std::move(out));
  if (Tape* tape = recording({&keys, &query, &v})) {
    Impl ki = keys.impl(), qi = query.impl(), vi = v.impl();
    tape->record(y, {ki, qi, vi}, [ki, qi, vi, act = std::move(act), batch, slots, width](TensorData& o) {
      double* gk = ki->requires_grad ? ki->grad_buffer() : nullptr;
      double* gq = qi->requires_grad ? qi->grad_buffer() : nullptr;
      double* gv = vi->requires_grad ? vi->grad_buffer() : nullptr;
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < slots; ++j) {
          const double g = o.grad[b * slots + j];
          const std::size_t base = (b * slots + j) * width;
          for (std::size_t k = 0; k < width; ++k) {
            const double a = act[base + k];
            const double dpre = g * vi->value[k] * (1.0 - a * a);
            if (gk) gk[base + k] += dpre;
            if (gq) gq[b * width + k] += dpre;
            if (gv) gv[k] += g * a;
          }
        }
      }
    });
  }
  return y;
}

namespace {

void check_time_mask(const Tensor& x, const Tensor& mask, const char* op) {
  require_rank(x, 3, op);
  require_rank(mask, 2, op);
  if (mask.dim(0) != x.dim(0) || mask.dim(1) != x.dim(1)) {
    throw DimensionError(std::string(op) + ": mask " + shape_str(mask.shape()) + " does not match " + shape_str(x.shape()));
  }
}

}  // namespace

Tensor masked_mean(const Tensor& x, const Tensor& mask) {
  check_time_mask(x, mask, "masked_mean");
  const std::size_t batch = x.dim(0), steps = x.dim(1), width = x.dim(2);
  std::vector<double> out(batch * width, 0.0), inv_count(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    double count = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
      if (mask.at(b, t) == 0.0) continue;
      count += 1.0;
      for (std::size_t k = 0; k < width; ++k) out[b * width + k] += x.at(b, t, k);
    }
    if (count == 0.0) throw EmptyInputError("masked_mean: sequence has no unmasked positions");
    inv_count[b] = 1.0 / count;
    for (std::size_t k = 0; k < width; ++k) out[b * width + k] *= inv_count[b];
  }
  Tensor y = Tensor::from({batch, width}, std::move(out));
  if (Tape* tape = recording({&x})) {
    Impl xi = x.impl();
    std::vector<double> m(mask.values());
    tape->record(y, {xi}, [xi, m = std::move(m), inv_count = std::move(inv_count), batch, steps, width](TensorData& o) {
      double* g = xi->grad_buffer();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t t = 0; t < steps; ++t) {
          if (m[b * steps + t] == 0.0) continue;
          for (std::size_t k = 0; k < width; ++k) g[(b * steps + t) * width + k] += o.grad[b * width + k] * inv_count[b];
        }
      }
    });
  }
  return y;
}

Tensor masked_max(const Tensor& x, const Tensor& mask) {
  check_time_mask(x, mask, "masked_max");
  const std::size_t batch = x.dim(0), steps = x.dim(1), width = x.dim(2);
  std::vector<double> out(batch * width);
  std::vector<std::size_t> arg(batch * width);
  for (std::size_t b = 0; b < batch; ++b) {
    bool any = false;
    for (std::size_t t = 0; t < steps; ++t) {
      if (mask.at(b, t) == 0.0) continue;
      for (std::size_t k = 0; k < width; ++k) {
        const double v = x.at(b, t, k);
        if (!any || v > out[b * width + k]) {
          out[b * width + k] = v;
          arg[b * width + k] = (b * steps + t) * width + k;
        }
      }
      any = true;
    }
    if (!any) throw EmptyInputError("masked_max: sequence has no unmasked positions");
  }
  Tensor y = Tensor::from({batch, width}, std::move(out));
  if (Tape* tape = recording({&x})) {
    Impl xi = x.impl();
    tape->record(y, {xi}, [xi, arg = std::move(arg)](TensorData& o) {
      double* g = xi->grad_buffer();
      for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += o.grad[i];
    });
  }
  return y;
}

Tensor select_steps(const Tensor& x, std::span<const std::size_t> steps) {
  require_rank(x, 3, "select_steps");
  const std::size_t batch = x.dim(0), len = x.dim(1), width = x.dim(2);
  if (steps.size() != batch) throw DimensionError("select_steps: need one step per row of " + shape_str(x.shape()));
  std::vector<double> out(batch * width);
  for (std::size_t b = 0; b < batch; ++b) {
    if (steps[b] >= len) throw DimensionError("select_steps: step outside " + shape_str(x.shape()));
    std::copy_n(x.data().data() + (b * len + steps[b]) * width, width, out.data() + b * width);
  }
  Tensor y = Tensor::from({batch, width}, std::move(out));
  if (Tape* tape = recording({&x})) {
    Impl xi = x.impl();
    std::vector<std::size_t> sv(steps.begin(), steps.end());
    tape->record(y, {xi}, [xi, sv = std::move(sv), len, width](TensorData& o) {
      double* g = xi->grad_buffer();
      for (std::size_t b = 0; b < sv.size(); ++b) {
        double* dst = g + (b * len + sv[b]) * width;
        for (std::size_t k = 0; k < width; ++k) dst[k] += o.grad[b * width + k];
      }
    });
  }
  return y;
}

}  // namespace catn
