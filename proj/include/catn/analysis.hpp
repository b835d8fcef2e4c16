#pragma once

// Attention analyses for models that build a structured sentence matrix.

#include <span>
#include <vector>

#include "catn/model.hpp"
#include "json.hpp"

namespace catn::eval {

struct AlignmentEntry {
  std::size_t t = 0;     // decoder step
  std::size_t s = 0;     // source position (BOS = 0)
  std::size_t head = 0;
  double w = 0.0;        // beta[t, head] * alpha[head, s]
};

struct Alignment {
  std::vector<AlignmentEntry> entries;  // kept entries, w > threshold
  std::vector<double> target_sums;      // per decoder step, over kept entries
  std::size_t target_len = 0;
  std::size_t source_len = 0;
  std::size_t heads = 0;
};

// Per-head decomposition of B*A. a is r x T, b is T' x r.
Alignment decompose_alignment(const Tensor& a, const Tensor& b, double threshold = 0.01);

// Teacher-forced pass over one pair. Throws UnsupportedArchitectureError for
// models without inner attention over a matrix read by decoder attention.
Alignment alignment_export(const model::Model& model, const text::SentencePair& pair, double threshold = 0.01);

nlohmann::json alignment_to_json(const Alignment& alignment);

struct PositionHistogram {
  std::size_t bins = 0;
  std::size_t sentences = 0;  // sentences that contributed
  std::size_t excluded = 0;
  std::vector<std::vector<double>> mass;  // heads x bins, each row sums to 1
};

// attention[i] is r x T_i over the unmasked encoder positions of sentence i
// and tokens[i] its raw token count (without BOS/EOS). Position t falls in
// bin floor(t * bins / T_i). Throws EmptyInputError when every sentence is
// shorter than min_tokens.
PositionHistogram histogram_from_attention(std::span<const Tensor> attention, std::span<const std::size_t> tokens,
                                           std::size_t bins, std::size_t min_tokens = 8);

PositionHistogram position_histogram(const model::Model& model, std::span<const std::vector<int>> sources,
                                     std::size_t bins = 20, std::size_t min_tokens = 8,
                                     std::size_t batch_size = 32);

// CSV "head,bin,weight".
void write_histogram_csv(std::ostream& out, const PositionHistogram& h);

}  // namespace catn::eval
