#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "catn/architecture.hpp"
#include "catn/decoder.hpp"
#include "catn/encoder.hpp"
#include "catn/params.hpp"
#include "catn/text.hpp"
#include "catn/transformer.hpp"

namespace catn::model {

struct Encoded {
  Tensor mask;                 // B x T
  Tensor states;               // B x T x u (final-layer states for the Transformer)
  Tensor embedding;            // B x size; undefined for ATTN
  enc::SentenceMatrix matrix;  // defined for variants with inner attention
  std::vector<Tensor> layers;  // Transformer only
};

struct ForwardResult {
  Encoded encoded;
  Tensor logits;     // B x (T'-1) x V, predicting target[:, 1:]
  // Decoder attention weights B x (T'-1) x S for ATTN (S = T) and the compound
  // variants (S = r); undefined otherwise.
  Tensor attention;
  // Per-step contexts B x (T'-1) x w for RNN variants with context.
  Tensor contexts;
};

struct Decoded {
  std::vector<std::vector<int>> tokens;   // per row; ends with EOS when one was produced
  std::vector<Tensor> attention;          // per row: steps x S decoder attention, when available
};

class Model {
 public:
  // Builds and initializes every parameter from seed. Throws ConfigError.
  explicit Model(ModelConfig config, std::uint64_t seed = 0);

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  Architecture arch() const { return config_.arch; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  Encoded encode(std::span<const int> ids, const Tensor& mask) const;
  Encoded encode(const text::Batch& batch) const { return encode(batch.source, batch.source_mask); }

  // Teacher-forced pass: consumes target[:, :-1].
  ForwardResult forward(const text::Batch& batch) const;
  // Mean token cross-entropy against target[:, 1:] over unmasked positions.
  Tensor loss(const text::Batch& batch) const;
  Tensor loss(const ForwardResult& result, const text::Batch& batch) const;

  // Argmax decoding; ties go to the lowest id. max_len >= 1.
  Decoded greedy_decode(const text::Batch& batch, std::size_t max_len) const;

  // Copies values by name; throws DimensionError on shape mismatch and
  // std::out_of_range on a missing name.
  void assign(const ParamStore& values);
  Model clone() const;

  const CgruParams& decoder() const { return decoder_; }
  const std::optional<AttentionParams>& attention() const { return attention_; }
  const std::optional<TransformerParams>& transformer() const { return transformer_; }

 private:
  Tensor initial_state(const Encoded& e) const;
  std::optional<AttentionMemory> memory(const Encoded& e) const;

  ModelConfig config_;
  ParamStore params_;
  enc::EncoderParams encoder_;
  std::optional<enc::InnerAttentionParams> inner_;
  Tensor init_w_, init_b_;
  CgruParams decoder_;
  std::optional<AttentionParams> attention_;
  std::optional<TransformerParams> transformer_;
};

Model build_model(const ModelConfig& config, std::uint64_t seed = 0);

// Free-function form of Model::greedy_decode for a single tokenized source.
std::vector<int> greedy_decode(const Model& model, std::span<const int> source, std::size_t max_len);

// Checkpoint layout (all integers little-endian):
//   "CATN1\n"
//   u64 length + UTF-8 JSON metadata (contains "model" and anything else the caller adds)
//   u64 tensor count
//   per tensor: u32 name length, name, u32 rank, u64 extents, f64 values
struct Checkpoint {
  nlohmann::json meta;
  ParamStore params;
};

void write_checkpoint(std::ostream& out, const Model& model, const nlohmann::json& extra = nlohmann::json::object());
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const nlohmann::json& extra = nlohmann::json::object());
// Throws DataError on malformed input.
Checkpoint read_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);
Model model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace catn::model
