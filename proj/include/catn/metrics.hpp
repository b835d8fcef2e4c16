#pragma once

// BLEU, probes, correlation statistics and the MetricReport file format.

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "catn/clusters.hpp"
#include "catn/text.hpp"
#include "json.hpp"

namespace catn::eval {

struct BleuResult {
  double score = 0.0;  // 0..100
  std::array<double, 4> precisions{};
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  double brevity_penalty = 0.0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;

  nlohmann::json to_json() const;
};

// Corpus-level, single reference, case-sensitive, unsmoothed; a zero n-gram
// precision yields score 0.
BleuResult bleu(std::span<const text::Sentence> candidates, std::span<const text::Sentence> references);

// Throw DegenerateError when either side is constant.
double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);
// Ranks starting at 1; tied values share their average rank.
std::vector<double> average_ranks(std::span<const double> x);

double cosine(std::span<const double> a, std::span<const double> b);

struct SimilarityPair {
  std::vector<double> a;
  std::vector<double> b;
  double score = 0.0;
};

struct SimilarityResult {
  double pearson = 0.0;
  double spearman = 0.0;
  std::size_t pairs = 0;
};

SimilarityResult similarity_eval(std::span<const SimilarityPair> pairs);
// {"a": [...], "b": [...], "score": x} per line.
std::vector<SimilarityPair> read_similarity_pairs(std::istream& in);

struct ProbeResult {
  double accuracy = 0.0;  // %
  double baseline = 0.0;  // most-frequent training class, %
  Warnings warnings;
};

struct ProbeOptions {
  double l2 = 1e-4;
  std::size_t epochs = 500;
  double learning_rate = 0.5;
};

// Multinomial logistic regression on standardized frozen embeddings, trained
// by full-batch gradient descent from zero weights.
ProbeResult probe_classify(const EmbeddingSet& train, const EmbeddingSet& test, const ProbeOptions& options = {});

struct MetricReport {
  std::string model;
  std::map<std::string, double> metrics;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json details = nlohmann::json::object();

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
};

struct CorrelationMatrix {
  std::vector<std::string> metrics;
  // nullopt where a metric is constant across models.
  std::vector<std::vector<std::optional<double>>> values;

  nlohmann::json to_json() const;
};

// Pearson correlation across models for every pair of metrics shared by all
// reports. Needs at least three reports.
CorrelationMatrix metric_correlation_matrix(std::span<const MetricReport> reports);

}  // namespace catn::eval
