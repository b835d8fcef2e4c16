#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

#include "json.hpp"

namespace catn::model {

// The RNN variants differ in which encoder states feed the sentence
// embedding, how they are combined, and where the decoder consumes it:
//
//   ATTN          all states, none combined; decoder attends over H
//   FINAL         final states; embedding initializes the decoder
//   *POOL         mean/max over time; initializes the decoder
//   *-CTX         ...and is also the constant context of every step
//   ATTN_CTX      inner attention; flattened M is init + constant context
//   ATTN_ATTN     inner attention; decoder attends over the rows of M
//   TRF_ATTN_ATTN Transformer encoder/decoder with the same compound wiring
enum class Architecture {
  Attn,
  Final,
  FinalCtx,
  AvgPool,
  MaxPool,
  AvgPoolCtx,
  MaxPoolCtx,
  AttnCtx,
  AttnAttn,
  TrfAttnAttn,
};

inline constexpr std::array<Architecture, 10> kAllArchitectures = {
    Architecture::Attn,       Architecture::Final,      Architecture::FinalCtx, Architecture::AvgPool,
    Architecture::MaxPool,    Architecture::AvgPoolCtx, Architecture::MaxPoolCtx, Architecture::AttnCtx,
    Architecture::AttnAttn,   Architecture::TrfAttnAttn,
};

std::string_view to_string(Architecture arch);
// Accepts "attn-attn", "ATTN_ATTN", "attn_attn", ...
Architecture parse_architecture(std::string_view name);

bool uses_heads(Architecture arch);
bool exposes_embedding(Architecture arch);
bool has_constant_context(Architecture arch);
// Architectures that carry the structured matrix M.
bool has_sentence_matrix(Architecture arch);
bool is_transformer(Architecture arch);

struct ModelConfig {
  Architecture arch = Architecture::AttnAttn;
  std::size_t src_vocab = 0;
  std::size_t tgt_vocab = 0;
  std::size_t emb_dim = 32;
  std::size_t enc_hidden = 64;  // per direction; derived from size for FINAL/POOL variants
  std::size_t dec_hidden = 64;
  std::size_t attn_hidden = 64;  // d: inner-attention hidden units and decoder key/query width
  std::size_t size = 64;         // sentence representation size
  std::size_t heads = 0;         // r; must be 0 for head-free variants
  std::size_t trf_layers = 2;
  std::size_t trf_width = 64;
  std::size_t trf_heads = 4;
  std::size_t trf_ff = 128;

  // Throws ConfigError on inconsistent settings.
  void validate() const;

  // Per-direction encoder units actually used by the RNN encoder.
  std::size_t encoder_hidden() const;
  // Width of the exposed sentence embedding (0 for ATTN).
  std::size_t embedding_size() const;

  nlohmann::json to_json() const;
  // Unknown keys are rejected with ConfigError.
  static ModelConfig from_json(const nlohmann::json& j);
};

}  // namespace catn::model
