#include "catn/transformer.hpp"

#include <cmath>

#include "catn/error.hpp"

namespace catn::model {

MultiHeadParams MultiHeadParams::create(ParamStore& store, const std::string& prefix, std::size_t width,
                                        std::size_t key_width, std::size_t heads, Rng& rng) {
  MultiHeadParams p;
  p.heads = heads;
  p.wq = store.add(prefix + ".wq", glorot_uniform(rng, width, width));
  p.wk = store.add(prefix + ".wk", glorot_uniform(rng, key_width, width));
  p.wv = store.add(prefix + ".wv", glorot_uniform(rng, key_width, width));
  p.wo = store.add(prefix + ".wo", glorot_uniform(rng, width, width));
  p.bo = store.add(prefix + ".bo", Tensor::zeros({width}));
  return p;
}

LayerNormParams LayerNormParams::create(ParamStore& store, const std::string& prefix, std::size_t width) {
  return {store.add(prefix + ".gain", Tensor::full({width}, 1.0)), store.add(prefix + ".bias", Tensor::zeros({width}))};
}

FeedForwardParams FeedForwardParams::create(ParamStore& store, const std::string& prefix, std::size_t width,
                                            std::size_t inner, Rng& rng) {
  FeedForwardParams p;
  p.w1 = store.add(prefix + ".w1", glorot_uniform(rng, width, inner));
  p.b1 = store.add(prefix + ".b1", Tensor::zeros({inner}));
  p.w2 = store.add(prefix + ".w2", glorot_uniform(rng, inner, width));
  p.b2 = store.add(prefix + ".b2", Tensor::zeros({width}));
  return p;
}

TransformerParams TransformerParams::create(ParamStore& store, const ModelConfig& c, Rng& rng) {
  if (c.trf_heads == 0 || c.trf_width % c.trf_heads != 0) {
    throw ConfigError("trf_width " + std::to_string(c.trf_width) + " is not divisible by " +
                      std::to_string(c.trf_heads) + " attention heads");
  }
  const std::size_t w = c.trf_width;
  TransformerParams p;
  p.width = w;
  p.src_embedding = store.add("trf.src_embedding", glorot_uniform(rng, c.src_vocab, w));
  for (std::size_t l = 0; l < c.trf_layers; ++l) {
    const std::string pre = "trf.encoder." + std::to_string(l);
    EncoderLayer layer;
    layer.norm1 = LayerNormParams::create(store, pre + ".norm1", w);
    layer.self_attn = MultiHeadParams::create(store, pre + ".self_attn", w, w, c.trf_heads, rng);
    layer.norm2 = LayerNormParams::create(store, pre + ".norm2", w);
    layer.ff = FeedForwardParams::create(store, pre + ".ff", w, c.trf_ff, rng);
    p.encoder.push_back(std::move(layer));
  }
  p.encoder_norm = LayerNormParams::create(store, "trf.encoder.norm", w);
  p.inner = enc::InnerAttentionParams::create(store, "trf.inner", w, c.attn_hidden, c.size, c.heads, rng);

  p.tgt_embedding = store.add("trf.tgt_embedding", glorot_uniform(rng, c.tgt_vocab, w));
  for (std::size_t l = 0; l < c.trf_layers; ++l) {
    const std::string pre = "trf.decoder." + std::to_string(l);
    DecoderLayer layer;
    layer.norm1 = LayerNormParams::create(store, pre + ".norm1", w);
    layer.self_attn = MultiHeadParams::create(store, pre + ".self_attn", w, w, c.trf_heads, rng);
    layer.norm2 = LayerNormParams::create(store, pre + ".norm2", w);
    layer.cross_attn = MultiHeadParams::create(store, pre + ".cross_attn", w, p.inner.head_size, c.trf_heads, rng);
    layer.norm3 = LayerNormParams::create(store, pre + ".norm3", w);
    layer.ff = FeedForwardParams::create(store, pre + ".ff", w, c.trf_ff, rng);
    p.decoder.push_back(std::move(layer));
  }
  p.decoder_norm = LayerNormParams::create(store, "trf.decoder.norm", w);
  p.output_w = store.add("trf.output_w", glorot_uniform(rng, w, c.tgt_vocab));
  p.output_b = store.add("trf.output_b", Tensor::zeros({c.tgt_vocab}));
  return p;
}

Tensor sinusoidal_positions(std::size_t steps, std::size_t width) {
  std::vector<double> v(steps * width);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < width; ++i) {
      const double rate = std::pow(10000.0, static_cast<double>(i - i % 2) / static_cast<double>(width));
      const double angle = static_cast<double>(t) / rate;
      v[t * width + i] = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::from({steps, width}, std::move(v));
}

namespace {

Tensor norm(const Tensor& x, const LayerNormParams& p) { return layer_norm(x, p.gain, p.bias); }

Tensor feed_forward(const Tensor& x, const FeedForwardParams& p) {
  const std::size_t rows = x.dim(0), steps = x.dim(1), width = x.dim(2);
  const Tensor flat = reshape(x, {rows * steps, width});
  const Tensor hidden = relu(add_bias(matmul(flat, p.w1), p.b1));
  return reshape(add_bias(matmul(hidden, p.w2), p.b2), {rows, steps, width});
}

// [B*h, T, dh] view of x [B,T,k] projected by w [k, h*dh].
Tensor split_heads(const Tensor& x, const Tensor& w, std::size_t heads) {
  const std::size_t rows = x.dim(0), steps = x.dim(1), width = w.dim(1), dh = width / heads;
  const Tensor projected = reshape(matmul(reshape(x, {rows * steps, x.dim(2)}), w), {rows, steps, heads, dh});
  return reshape(permute(projected, {0, 2, 1, 3}), {rows * heads, steps, dh});
}

Tensor embed(const Tensor& table, std::span<const int> ids, std::size_t rows, std::size_t steps) {
  const std::size_t width = table.dim(1);
  const Tensor positions = sinusoidal_positions(steps, width);
  std::vector<double> tiled(rows * steps * width);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(positions.values().begin(), positions.values().end(), tiled.begin() + r * steps * width);
  }
  return add(reshape(gather_rows(table, ids), {rows, steps, width}),
             Tensor::from({rows, steps, width}, std::move(tiled)));
}

}  // namespace

Tensor multi_head_attention(const MultiHeadParams& p, const Tensor& queries, const Tensor& keys, const Tensor& mask,
                            Tensor* weights) {
  const std::size_t rows = queries.dim(0), tq = queries.dim(1), tk = keys.dim(1);
  const std::size_t width = p.wq.dim(1), heads = p.heads, dh = width / heads;
  const Tensor q = split_heads(queries, p.wq, heads);
  const Tensor k = split_heads(keys, p.wk, heads);
  const Tensor v = split_heads(keys, p.wv, heads);
  const Tensor att = softmax(scale(bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(dh))), 2, mask);
  if (weights) *weights = reshape(att, {rows, heads, tq, tk});
  const Tensor merged = reshape(permute(reshape(bmm(att, v), {rows, heads, tq, dh}), {0, 2, 1, 3}), {rows * tq, width});
  return reshape(add_bias(matmul(merged, p.wo), p.bo), {rows, tq, width});
}

TransformerEncoding transformer_encode(const TransformerParams& p, std::span<const int> ids, const Tensor& mask) {
  if (!mask.defined() || mask.rank() != 2) throw DimensionError("transformer_encode: mask must be [rows, steps]");
  const std::size_t rows = mask.dim(0), steps = mask.dim(1);
  if (ids.size() != rows * steps) throw DimensionError("transformer_encode: ids do not match mask shape");

  enc::EncoderStates states;
  states.mask = mask;
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t first = steps, last = 0;
    for (std::size_t t = 0; t < steps; ++t) {
      if (mask.at(r, t) == 0.0) continue;
      first = std::min(first, t);
      last = t;
    }
    if (first == steps) throw EmptyInputError("transformer_encode: row " + std::to_string(r) + " is empty");
    states.first.push_back(first);
    states.last.push_back(last);
  }

  const std::size_t heads = p.encoder.empty() ? 1 : p.encoder.front().self_attn.heads;
  std::vector<double> key_mask(rows * heads * steps);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t t = 0; t < steps; ++t) key_mask[(r * heads + h) * steps + t] = mask.at(r, t);
    }
  }
  const Tensor attn_mask = Tensor::from({rows * heads, 1, steps}, std::move(key_mask));

  TransformerEncoding out;
  Tensor x = embed(p.src_embedding, ids, rows, steps);
  for (const EncoderLayer& layer : p.encoder) {
    const Tensor n1 = norm(x, layer.norm1);
    x = add(x, multi_head_attention(layer.self_attn, n1, n1, attn_mask));
    x = add(x, feed_forward(norm(x, layer.norm2), layer.ff));
    out.layers.push_back(x);
  }
  states.states = norm(x, p.encoder_norm);
  out.states = states.states;
  out.mask = mask;
  out.matrix = enc::inner_attention(states, p.inner);
  return out;
}

TransformerDecoding transformer_decode(const TransformerParams& p, std::span<const int> prefix, std::size_t rows,
                                       const Tensor& matrix) {
  if (rows == 0 || prefix.size() % rows != 0) throw DimensionError("transformer_decode: prefix is not [rows, steps]");
  if (matrix.rank() != 3 || matrix.dim(0) != rows) {
    throw DimensionError("transformer_decode: sentence matrix " + shape_str(matrix.shape()) + " does not match " +
                         std::to_string(rows) + " rows");
  }
  const std::size_t steps = prefix.size() / rows;
  std::vector<double> causal(steps * steps, 0.0);
  for (std::size_t i = 0; i < steps; ++i) {
    for (std::size_t j = 0; j <= i; ++j) causal[i * steps + j] = 1.0;
  }
  const Tensor causal_mask = Tensor::from({1, steps, steps}, std::move(causal));

  TransformerDecoding out;
  Tensor x = embed(p.tgt_embedding, prefix, rows, steps);
  for (const DecoderLayer& layer : p.decoder) {
    const Tensor n1 = norm(x, layer.norm1);
    x = add(x, multi_head_attention(layer.self_attn, n1, n1, causal_mask));
    Tensor weights;
    x = add(x, multi_head_attention(layer.cross_attn, norm(x, layer.norm2), matrix, Tensor(), &weights));
    out.cross_per_layer.push_back(weights);
    x = add(x, feed_forward(norm(x, layer.norm3), layer.ff));
  }
  x = norm(x, p.decoder_norm);
  const std::size_t width = p.width, vocab = p.output_w.dim(1);
  out.logits = reshape(add_bias(matmul(reshape(x, {rows * steps, width}), p.output_w), p.output_b), {rows, steps, vocab});

  const Tensor& last = out.cross_per_layer.back();
  const std::size_t heads = last.dim(1), slots = last.dim(3);
  std::vector<double> avg(rows * steps * slots, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < steps; ++i) {
        for (std::size_t j = 0; j < slots; ++j) {
          avg[(r * steps + i) * slots + j] += last.values()[((r * heads + h) * steps + i) * slots + j] / heads;
        }
      }
    }
  }
  out.cross_weights = Tensor::from({rows, steps, slots}, std::move(avg));
  return out;
}

}  // namespace catn::model
