#include "catn/encoder.hpp"

namespace catn::enc {

GruParams GruParams::create(ParamStore& store, const std::string& prefix, std::size_t input, std::size_t hidden,
                            Rng& rng) {
  GruParams p;
  p.hidden = hidden;
  // Each gate block gets its own Glorot range.
  std::vector<double> wi(input * 3 * hidden);
  for (std::size_t g = 0; g < 3; ++g) {
    Tensor block = glorot_uniform(rng, input, hidden);
    for (std::size_t i = 0; i < input; ++i) {
      for (std::size_t j = 0; j < hidden; ++j) wi[i * 3 * hidden + g * hidden + j] = block.at(i, j);
    }
  }
  std::vector<double> wg(hidden * 2 * hidden);
  for (std::size_t g = 0; g < 2; ++g) {
    Tensor block = glorot_uniform(rng, hidden, hidden);
    for (std::size_t i = 0; i < hidden; ++i) {
      for (std::size_t j = 0; j < hidden; ++j) wg[i * 2 * hidden + g * hidden + j] = block.at(i, j);
    }
  }
  p.w_input = store.add(prefix + ".w_input", Tensor::from({input, 3 * hidden}, std::move(wi)));
  p.w_gates = store.add(prefix + ".w_gates", Tensor::from({hidden, 2 * hidden}, std::move(wg)));
  p.w_candidate = store.add(prefix + ".w_candidate", glorot_uniform(rng, hidden, hidden));
  p.bias = store.add(prefix + ".bias", Tensor::zeros({3 * hidden}));
  return p;
}

Tensor gru_step_projected(const GruParams& p, const Tensor& projected_input, const Tensor& h) {
  const std::size_t n = p.hidden;
  const Tensor gates = matmul(h, p.w_gates);
  const Tensor z = sigmoid(add(slice(projected_input, 1, 0, n), slice(gates, 1, 0, n)));
  const Tensor r = sigmoid(add(slice(projected_input, 1, n, n), slice(gates, 1, n, n)));
  const Tensor candidate = tanh(add(slice(projected_input, 1, 2 * n, n), matmul(mul(r, h), p.w_candidate)));
  return add(h, mul(z, sub(candidate, h)));
}

Tensor gru_step(const GruParams& p, const Tensor& x, const Tensor& h) {
  return gru_step_projected(p, add_bias(matmul(x, p.w_input), p.bias), h);
}

EncoderParams EncoderParams::create(ParamStore& store, std::size_t vocab, std::size_t emb, std::size_t hidden,
                                    Rng& rng) {
  EncoderParams p;
  p.embedding = store.add("encoder.embedding", glorot_uniform(rng, vocab, emb));
  p.forward = GruParams::create(store, "encoder.forward", emb, hidden, rng);
  p.backward = GruParams::create(store, "encoder.backward", emb, hidden, rng);
  return p;
}

namespace {

// Runs one direction; returns per-position outputs (zero on PAD rows).
std::vector<Tensor> run_direction(const GruParams& p, const Tensor& projected, const Tensor& mask, bool reverse) {
  const std::size_t rows = mask.dim(0), steps = mask.dim(1);
  const Tensor zero = Tensor::zeros({rows, p.hidden});
  std::vector<Tensor> outputs(steps);
  Tensor h = zero;
  std::vector<double> keep(rows);
  for (std::size_t i = 0; i < steps; ++i) {
    const std::size_t t = reverse ? steps - 1 - i : i;
    bool all = true;
    for (std::size_t r = 0; r < rows; ++r) {
      keep[r] = mask.at(r, t);
      all = all && keep[r] != 0.0;
    }
    const Tensor x = reshape(slice(projected, 1, t, 1), {rows, 3 * p.hidden});
    const Tensor next = gru_step_projected(p, x, h);
    if (all) {
      outputs[t] = next;
      h = next;
    } else {
      outputs[t] = masked_update(keep, next, zero);
      h = masked_update(keep, next, h);
    }
  }
  return outputs;
}

}  // namespace

EncoderStates encode_bidirectional(std::span<const int> ids, const Tensor& mask, const EncoderParams& params) {
  if (!mask.defined() || mask.rank() != 2) throw DimensionError("encode_bidirectional: mask must be [rows, steps]");
  const std::size_t rows = mask.dim(0), steps = mask.dim(1);
  if (ids.size() != rows * steps) throw DimensionError("encode_bidirectional: ids do not match mask shape");

  EncoderStates out;
  out.mask = mask;
  out.forward_units = params.forward.hidden;
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t first = steps, last = 0;
    for (std::size_t t = 0; t < steps; ++t) {
      if (mask.at(r, t) == 0.0) continue;
      first = std::min(first, t);
      last = t;
    }
    if (first == steps) throw EmptyInputError("encode_bidirectional: row " + std::to_string(r) + " is empty");
    out.first.push_back(first);
    out.last.push_back(last);
  }

  const Tensor embedded = gather_rows(params.embedding, ids);
  auto project = [&](const GruParams& p) {
    return reshape(add_bias(matmul(embedded, p.w_input), p.bias), {rows, steps, 3 * p.hidden});
  };
  const auto fwd = run_direction(params.forward, project(params.forward), mask, false);
  const auto bwd = run_direction(params.backward, project(params.backward), mask, true);
  out.states = concat({stack(fwd, 1), stack(bwd, 1)}, 2);
  return out;
}

Tensor project_states(const Tensor& states, const Tensor& projection) {
  if (states.rank() != 3) throw RankError("project_states: expected [B,T,u], got " + shape_str(states.shape()));
  const std::size_t rows = states.dim(0), steps = states.dim(1), units = states.dim(2);
  const Tensor flat = reshape(states, {rows * steps, units});
  return reshape(matmul(flat, projection), {rows, steps, projection.dim(1)});
}

InnerAttentionParams InnerAttentionParams::create(ParamStore& store, const std::string& prefix, std::size_t units,
                                                  std::size_t hidden, std::size_t size, std::size_t heads, Rng& rng) {
  if (heads == 0) throw ConfigError("inner attention needs at least one head");
  if (hidden == 0) throw ConfigError("inner attention needs a positive hidden size");
  if (size == 0 || size % heads != 0) {
    throw ConfigError("representation size " + std::to_string(size) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  InnerAttentionParams p;
  p.heads = heads;
  p.head_size = size / heads;
  p.w_score = store.add(prefix + ".w_score", glorot_uniform(rng, units, hidden));
  p.u_score = store.add(prefix + ".u_score", glorot_uniform(rng, hidden, heads));
  p.projection = store.add(prefix + ".projection", glorot_uniform(rng, units, p.head_size));
  return p;
}

Tensor SentenceMatrix::flat() const {
  return reshape(matrix, {matrix.dim(0), matrix.dim(1) * matrix.dim(2)});
}

SentenceMatrix inner_attention(const EncoderStates& h, const InnerAttentionParams& params) {
  const std::size_t rows = h.rows(), steps = h.steps(), units = h.units();
  const Tensor flat = reshape(h.states, {rows * steps, units});
  const Tensor scores = matmul(tanh(matmul(flat, params.w_score)), params.u_score);
  const Tensor by_head = permute(reshape(scores, {rows, steps, params.heads}), {0, 2, 1});
  SentenceMatrix out;
  out.attention = softmax(by_head, 2, reshape(h.mask, {rows, 1, steps}));
  out.projected = project_states(h.states, params.projection);
  out.matrix = bmm(out.attention, out.projected);
  return out;
}

Tensor pool(const EncoderStates& h, PoolMode mode) {
  return mode == PoolMode::Avg ? masked_mean(h.states, h.mask) : masked_max(h.states, h.mask);
}

Tensor final_concat(const EncoderStates& h) {
  const std::size_t fw = h.forward_units;
  const Tensor forward = select_steps(slice(h.states, 2, 0, fw), h.last);
  const Tensor backward = select_steps(slice(h.states, 2, fw, h.units() - fw), h.first);
  return concat({forward, backward}, 1);
}

}  // namespace catn::enc
