#include "catn/decoder.hpp"

#include "catn/error.hpp"

namespace catn::model {

CgruParams CgruParams::create(ParamStore& store, std::size_t vocab, std::size_t emb, std::size_t hidden,
                              std::size_t context_width, Rng& rng) {
  CgruParams p;
  p.embedding = store.add("decoder.embedding", glorot_uniform(rng, vocab, emb));
  p.block1 = enc::GruParams::create(store, "decoder.block1", emb, hidden, rng);
  if (context_width > 0) p.block2 = enc::GruParams::create(store, "decoder.block2", context_width, hidden, rng);
  p.output_w = store.add("decoder.output_w", glorot_uniform(rng, hidden, vocab));
  p.output_b = store.add("decoder.output_b", Tensor::zeros({vocab}));
  return p;
}

Tensor output_logits(const CgruParams& p, const Tensor& states) {
  return add_bias(matmul(states, p.output_w), p.output_b);
}

CgruOutput cgru_step_projected(const CgruParams& p, const Tensor& projected_y, const Tensor& s_prev,
                               const ContextProvider& provider, bool with_logits) {
  CgruOutput out;
  const Tensor intermediate = enc::gru_step_projected(p.block1, projected_y, s_prev);
  if (p.has_context()) {
    out.context = provider(intermediate);
    out.state = enc::gru_step(p.block2, out.context, intermediate);
  } else {
    out.state = intermediate;
  }
  if (with_logits) out.logits = output_logits(p, out.state);
  return out;
}

CgruOutput cgru_step(const CgruParams& p, std::span<const int> y_prev, const Tensor& s_prev,
                     const ContextProvider& provider, bool with_logits) {
  if (y_prev.size() != s_prev.dim(0)) throw DimensionError("cgru_step: one previous token per row is required");
  const Tensor projected = add_bias(matmul(gather_rows(p.embedding, y_prev), p.block1.w_input), p.block1.bias);
  return cgru_step_projected(p, projected, s_prev, provider, with_logits);
}

AttentionParams AttentionParams::create(ParamStore& store, const std::string& prefix, std::size_t memory_width,
                                        std::size_t query_width, std::size_t hidden, Rng& rng) {
  AttentionParams p;
  p.key_w = store.add(prefix + ".key_w", glorot_uniform(rng, memory_width, hidden));
  p.query_w = store.add(prefix + ".query_w", glorot_uniform(rng, query_width, hidden));
  p.v = store.add(prefix + ".v", reshape(glorot_uniform(rng, hidden, 1), {hidden}));
  return p;
}

AttentionMemory attention_memory(const AttentionParams& p, const Tensor& rows, const Tensor& mask) {
  if (rows.rank() != 3) throw RankError("attention_memory: expected [B,S,w], got " + shape_str(rows.shape()));
  if (rows.dim(1) == 0) throw EmptyInputError("attention_memory: no memory rows");
  return {rows, enc::project_states(rows, p.key_w), mask};
}

Attended decoder_attention(const AttentionParams& p, const Tensor& query, const AttentionMemory& memory) {
  const std::size_t batch = memory.rows.dim(0), slots = memory.rows.dim(1), width = memory.rows.dim(2);
  const Tensor scores = additive_scores(memory.keys, matmul(query, p.query_w), p.v);
  Attended out;
  out.weights = softmax(scores, 1, memory.mask);
  out.context = reshape(bmm(reshape(out.weights, {batch, 1, slots}), memory.rows), {batch, width});
  return out;
}

Tensor compound_alignment(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 3)) {
    throw RankError("compound_alignment: expected two matrices or two batches of matrices");
  }
  const std::size_t axis = a.rank() - 2;
  if (b.dim(axis + 1) != a.dim(axis)) {
    throw DimensionError("compound_alignment: B has " + std::to_string(b.dim(axis + 1)) + " heads, A has " +
                         std::to_string(a.dim(axis)));
  }
  return a.rank() == 2 ? matmul(b, a) : bmm(b, a);
}

}  // namespace catn::model
