#pragma once

// Conditional GRU decoder cell and attention over a fixed set of memory rows.

#include <functional>
#include <span>
#include <string>

#include "catn/encoder.hpp"
#include "catn/params.hpp"
#include "catn/tensor.hpp"

namespace catn::model {

struct CgruParams {
  Tensor embedding;  // V x E
  enc::GruParams block1;
  enc::GruParams block2;  // hidden == 0 when the variant has no context
  Tensor output_w;        // n x V
  Tensor output_b;        // V

  bool has_context() const { return block2.hidden != 0; }
  std::size_t hidden() const { return block1.hidden; }

  static CgruParams create(ParamStore& store, std::size_t vocab, std::size_t emb, std::size_t hidden,
                           std::size_t context_width, Rng& rng);
};

// Maps the intermediate state s' [B,n] to the context c [B,w]. Never called
// for variants without context.
using ContextProvider = std::function<Tensor(const Tensor& intermediate)>;

struct CgruOutput {
  Tensor state;    // s_i
  Tensor context;  // c_i (undefined without context)
  Tensor logits;   // [B,V]; undefined when not requested
};

// s' = GRU1(y_prev, s_prev); c = provider(s'); s = GRU2(c, s'); logits = s W_o + b_o
CgruOutput cgru_step(const CgruParams& p, std::span<const int> y_prev, const Tensor& s_prev,
                     const ContextProvider& provider, bool with_logits = true);
// Same step with the block-1 input projection of y_prev already applied.
CgruOutput cgru_step_projected(const CgruParams& p, const Tensor& projected_y, const Tensor& s_prev,
                               const ContextProvider& provider, bool with_logits = true);

Tensor output_logits(const CgruParams& p, const Tensor& states);

// e_j = v^T tanh(W_q s' + W_k m_j), beta = softmax(e), c = sum_j beta_j m_j
struct AttentionParams {
  Tensor key_w;    // w x d
  Tensor query_w;  // n x d
  Tensor v;        // d

  static AttentionParams create(ParamStore& store, const std::string& prefix, std::size_t memory_width,
                                std::size_t query_width, std::size_t hidden, Rng& rng);
};

struct AttentionMemory {
  Tensor rows;  // B x S x w
  Tensor keys;  // B x S x d
  Tensor mask;  // B x S, or undefined when every row is valid
};

AttentionMemory attention_memory(const AttentionParams& p, const Tensor& rows, const Tensor& mask = Tensor());

struct Attended {
  Tensor weights;  // B x S
  Tensor context;  // B x w
};

Attended decoder_attention(const AttentionParams& p, const Tensor& query, const AttentionMemory& memory);

// Implicit source alignment B*A. Accepts [T',r] x [r,T] or batched
// [N,T',r] x [N,r,T].
Tensor compound_alignment(const Tensor& a, const Tensor& b);

}  // namespace catn::model
