#pragma once

// Bidirectional GRU encoder and the fixed-size sentence representations
// built on top of its states.

#include <span>
#include <string>
#include <vector>

#include "catn/params.hpp"
#include "catn/tensor.hpp"

namespace catn::enc {

// Gate layout in the stacked matrices is update | reset | candidate.
//   z  = sigmoid(W_z x + U_z h + b_z)
//   r  = sigmoid(W_r x + U_r h + b_r)
//   h~ = tanh(W_h x + U_h (r * h) + b_h)
//   h' = (1 - z) * h + z * h~
struct GruParams {
  Tensor w_input;      // in x 3h
  Tensor w_gates;      // h x 2h
  Tensor w_candidate;  // h x h
  Tensor bias;         // 3h
  std::size_t hidden = 0;

  static GruParams create(ParamStore& store, const std::string& prefix, std::size_t input, std::size_t hidden,
                          Rng& rng);
};

Tensor gru_step(const GruParams& p, const Tensor& x, const Tensor& h);
// Same step with x W_input + b already computed ([B, 3h]).
Tensor gru_step_projected(const GruParams& p, const Tensor& projected_input, const Tensor& h);

struct EncoderParams {
  Tensor embedding;  // V x E
  GruParams forward;
  GruParams backward;

  static EncoderParams create(ParamStore& store, std::size_t vocab, std::size_t emb, std::size_t hidden, Rng& rng);
};

// H with rows h_t = [forward_t ; backward_t]. PAD rows are exactly zero and do
// not advance either recurrence.
struct EncoderStates {
  Tensor states;  // B x T x u
  Tensor mask;    // B x T
  std::size_t forward_units = 0;
  std::vector<std::size_t> first;  // first unmasked position per row
  std::vector<std::size_t> last;   // last unmasked position per row

  std::size_t rows() const { return states.dim(0); }
  std::size_t steps() const { return states.dim(1); }
  std::size_t units() const { return states.dim(2); }
};

// ids is row-major [rows, mask.dim(1)].
EncoderStates encode_bidirectional(std::span<const int> ids, const Tensor& mask, const EncoderParams& params);

// Learned linear map applied per position: [B,T,u] x [u,p] -> [B,T,p].
Tensor project_states(const Tensor& states, const Tensor& projection);

struct InnerAttentionParams {
  Tensor w_score;     // u x d
  Tensor u_score;     // d x r
  Tensor projection;  // u x p
  std::size_t heads = 0;
  std::size_t head_size = 0;

  // Throws ConfigError unless heads >= 1, hidden >= 1 and size % heads == 0.
  static InnerAttentionParams create(ParamStore& store, const std::string& prefix, std::size_t units,
                                     std::size_t hidden, std::size_t size, std::size_t heads, Rng& rng);
};

// A = softmax(U tanh(W H^T)) over unmasked positions; M = A * (H projected).
struct SentenceMatrix {
  Tensor attention;  // B x r x T
  Tensor projected;  // B x T x p
  Tensor matrix;     // B x r x p

  // Head-major flattening of M: [B, r*p].
  Tensor flat() const;
};

SentenceMatrix inner_attention(const EncoderStates& h, const InnerAttentionParams& params);

enum class PoolMode { Avg, Max };

Tensor pool(const EncoderStates& h, PoolMode mode);

// [forward state at the last unmasked position ; backward state at the first].
Tensor final_concat(const EncoderStates& h);

}  // namespace catn::enc
