#include "catn/analysis.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

#include "catn/error.hpp"

namespace catn::eval {

Alignment decompose_alignment(const Tensor& a, const Tensor& b, double threshold) {
  if (a.rank() != 2 || b.rank() != 2) throw RankError("decompose_alignment expects rank-2 A and B");
  if (a.dim(0) != b.dim(1)) {
    throw DimensionError("decompose_alignment: A " + shape_str(a.shape()) + " and B " + shape_str(b.shape()) +
                         " disagree on the head count");
  }
  Alignment out;
  out.heads = a.dim(0);
  out.source_len = a.dim(1);
  out.target_len = b.dim(0);
  out.target_sums.assign(out.target_len, 0.0);
  for (std::size_t t = 0; t < out.target_len; ++t) {
    for (std::size_t h = 0; h < out.heads; ++h) {
      const double beta = b.at(t, h);
      for (std::size_t s = 0; s < out.source_len; ++s) {
        const double w = beta * a.at(h, s);
        if (w > threshold) {
          out.entries.push_back({t, s, h, w});
          out.target_sums[t] += w;
        }
      }
    }
  }
  return out;
}

namespace {

void require_compound(const model::Model& model) {
  const auto arch = model.arch();
  if (!model::has_sentence_matrix(arch) || model::has_constant_context(arch)) {
    throw UnsupportedArchitectureError("attention analysis needs an architecture whose decoder attends over M; " +
                                       std::string(model::to_string(arch)) + " does not");
  }
}

// Rows [0, len) of the r x T slice for batch row `row`.
Tensor inner_rows(const Tensor& attention, std::size_t row, std::size_t len) {
  const std::size_t r = attention.dim(1);
  std::vector<double> values(r * len);
  for (std::size_t h = 0; h < r; ++h) {
    for (std::size_t s = 0; s < len; ++s) values[h * len + s] = attention.at(row, h, s);
  }
  return Tensor::from({r, len}, std::move(values));
}

}  // namespace

Alignment alignment_export(const model::Model& model, const text::SentencePair& pair, double threshold) {
  require_compound(model);
  if (pair.source.empty() || pair.target.empty()) throw EmptyInputError("alignment_export: empty sentence");
  NoGradGuard guard;
  const std::vector<text::SentencePair> one{pair};
  const text::Batch batch = text::make_batch(one);
  const model::ForwardResult f = model.forward(batch);
  const Tensor a = inner_rows(f.encoded.matrix.attention, 0, batch.source_len);
  const std::size_t steps = f.attention.dim(1), heads = f.attention.dim(2);
  std::vector<double> beta(f.attention.values().begin(), f.attention.values().begin() + steps * heads);
  return decompose_alignment(a, Tensor::from({steps, heads}, std::move(beta)), threshold);
}

nlohmann::json alignment_to_json(const Alignment& alignment) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& e : alignment.entries) out.push_back({{"t", e.t}, {"s", e.s}, {"head", e.head}, {"w", e.w}});
  return out;
}

PositionHistogram histogram_from_attention(std::span<const Tensor> attention, std::span<const std::size_t> tokens,
                                           std::size_t bins, std::size_t min_tokens) {
  if (bins < 2) throw ConfigError("position histogram needs at least 2 bins");
  if (attention.size() != tokens.size()) throw DimensionError("histogram: attention and lengths differ in count");
  PositionHistogram h;
  h.bins = bins;
  for (std::size_t i = 0; i < attention.size(); ++i) {
    if (tokens[i] < min_tokens) {
      ++h.excluded;
      continue;
    }
    const Tensor& a = attention[i];
    if (a.rank() != 2) throw RankError("histogram: attention must be heads x positions");
    const std::size_t heads = a.dim(0), len = a.dim(1);
    if (h.mass.empty()) h.mass.assign(heads, std::vector<double>(bins, 0.0));
    if (h.mass.size() != heads) throw DimensionError("histogram: head count differs between sentences");
    for (std::size_t head = 0; head < heads; ++head) {
      for (std::size_t t = 0; t < len; ++t) h.mass[head][t * bins / len] += a.at(head, t);
    }
    ++h.sentences;
  }
  if (h.sentences == 0) {
    throw EmptyInputError("position histogram: every sentence is shorter than " + std::to_string(min_tokens) +
                          " tokens");
  }
  for (auto& row : h.mass) {
    for (double& v : row) v /= static_cast<double>(h.sentences);
  }
  return h;
}

PositionHistogram position_histogram(const model::Model& model, std::span<const std::vector<int>> sources,
                                     std::size_t bins, std::size_t min_tokens, std::size_t batch_size) {
  require_compound(model);
  if (bins < 2) throw ConfigError("position histogram needs at least 2 bins");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  NoGradGuard guard;
  std::vector<std::vector<int>> kept;
  for (const auto& s : sources) {
    if (s.size() >= min_tokens) kept.push_back(s);
  }
  std::vector<Tensor> attention;
  std::vector<std::size_t> lengths;
  for (std::size_t start = 0; start < kept.size(); start += batch_size) {
    const auto chunk = std::span(kept).subspan(start, std::min(batch_size, kept.size() - start));
    const model::Encoded e = model.encode(text::make_source_batch(chunk));
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      attention.push_back(inner_rows(e.matrix.attention, r, chunk[r].size() + 2));
      lengths.push_back(chunk[r].size());
    }
  }
  if (attention.empty()) {
    throw EmptyInputError("position histogram: every sentence is shorter than " + std::to_string(min_tokens) +
                          " tokens");
  }
  PositionHistogram h = histogram_from_attention(attention, lengths, bins, min_tokens);
  h.excluded = sources.size() - kept.size();
  return h;
}

void write_histogram_csv(std::ostream& out, const PositionHistogram& h) {
  out << "head,bin,weight\n";
  char buf[64];
  for (std::size_t head = 0; head < h.mass.size(); ++head) {
    for (std::size_t b = 0; b < h.bins; ++b) {
      std::snprintf(buf, sizeof buf, "%.17g", h.mass[head][b]);
      out << head << ',' << b << ',' << buf << '\n';
    }
  }
}

}  // namespace catn::eval
