#pragma once

#include <vector>

#include "catn/model.hpp"
#include "catn/text.hpp"

namespace catn::testing {

// Small enough for exhaustive finite differences.
inline model::ModelConfig tiny_config(model::Architecture arch) {
  model::ModelConfig c;
  c.arch = arch;
  c.src_vocab = 9;
  c.tgt_vocab = 8;
  c.emb_dim = 3;
  c.enc_hidden = 3;
  c.dec_hidden = 4;
  c.attn_hidden = 3;
  c.size = 4;
  c.heads = model::uses_heads(arch) ? 2 : 0;
  c.trf_layers = 1;
  c.trf_width = 4;
  c.trf_heads = 2;
  c.trf_ff = 6;
  return c;
}

inline std::vector<text::SentencePair> tiny_pairs() {
  return {{{4, 5, 6, 7}, {4, 5, 6}}, {{8, 4}, {7, 4, 5, 6}}};
}

inline text::Batch tiny_batch() {
  const auto pairs = tiny_pairs();
  return text::make_batch(pairs);
}

}  // namespace catn::testing
