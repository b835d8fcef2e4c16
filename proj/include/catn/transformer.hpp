#pragma once

// Pre-norm Transformer encoder/decoder. The encoder ends in inner attention
// (the same operator as the RNN path), and decoder layers cross-attend over
// the r rows of the resulting sentence matrix only.

#include <span>
#include <string>
#include <vector>

#include "catn/architecture.hpp"
#include "catn/encoder.hpp"
#include "catn/params.hpp"

namespace catn::model {

struct MultiHeadParams {
  Tensor wq, wk, wv, wo;  // wk/wv map the key width to the model width
  Tensor bo;
  std::size_t heads = 0;

  static MultiHeadParams create(ParamStore& store, const std::string& prefix, std::size_t width,
                                std::size_t key_width, std::size_t heads, Rng& rng);
};

struct LayerNormParams {
  Tensor gain, bias;
  static LayerNormParams create(ParamStore& store, const std::string& prefix, std::size_t width);
};

struct FeedForwardParams {
  Tensor w1, b1, w2, b2;
  static FeedForwardParams create(ParamStore& store, const std::string& prefix, std::size_t width,
                                  std::size_t inner, Rng& rng);
};

struct EncoderLayer {
  LayerNormParams norm1, norm2;
  MultiHeadParams self_attn;
  FeedForwardParams ff;
};

struct DecoderLayer {
  LayerNormParams norm1, norm2, norm3;
  MultiHeadParams self_attn, cross_attn;
  FeedForwardParams ff;
};

struct TransformerParams {
  Tensor src_embedding, tgt_embedding;
  std::vector<EncoderLayer> encoder;
  LayerNormParams encoder_norm;
  enc::InnerAttentionParams inner;
  std::vector<DecoderLayer> decoder;
  LayerNormParams decoder_norm;
  Tensor output_w, output_b;
  std::size_t width = 0;

  // Throws ConfigError when trf_width is not divisible by trf_heads.
  static TransformerParams create(ParamStore& store, const ModelConfig& config, Rng& rng);
};

// Position encoding table [steps, width]: sin on even, cos on odd columns.
Tensor sinusoidal_positions(std::size_t steps, std::size_t width);

// Multi-head scaled dot-product attention of queries [B,Tq,w] over keys
// [B,Tk,wk]. mask broadcasts to [B*h,Tq,Tk]. When weights is non-null it
// receives the attention distributions [B,h,Tq,Tk].
Tensor multi_head_attention(const MultiHeadParams& p, const Tensor& queries, const Tensor& keys, const Tensor& mask,
                            Tensor* weights = nullptr);

struct TransformerEncoding {
  std::vector<Tensor> layers;  // output of every layer, [B,T,w]
  Tensor states;               // final normalized states
  Tensor mask;
  enc::SentenceMatrix matrix;  // A and M
};

TransformerEncoding transformer_encode(const TransformerParams& p, std::span<const int> ids, const Tensor& mask);

struct TransformerDecoding {
  Tensor logits;         // [B,T',V]
  Tensor cross_weights;  // last layer, averaged over heads: [B,T',r]
  std::vector<Tensor> cross_per_layer;  // [B,h,T',r] per layer
};

// prefix is row-major [rows, steps] of target ids starting with BOS.
TransformerDecoding transformer_decode(const TransformerParams& p, std::span<const int> prefix, std::size_t rows,
                                       const Tensor& matrix);

}  // namespace catn::model
