#pragma once

// Paraphrase-cluster metrics over labeled sentence embeddings.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace catn::eval {

using Warnings = std::vector<std::string>;

struct EmbeddingItem {
  std::string id;
  std::string label;
  std::vector<double> vec;
};

struct EmbeddingSet {
  std::vector<EmbeddingItem> items;

  std::size_t size() const { return items.size(); }
  std::size_t dim() const { return items.empty() ? 0 : items.front().vec.size(); }
  // Sorted distinct labels.
  std::vector<std::string> labels() const;
  // Throws DimensionError on ragged vectors and DataError on empty labels.
  void validate() const;
};

// JSON Lines: {"id": ..., "label": ..., "vec": [...]} per line.
EmbeddingSet read_embeddings(std::istream& in);
EmbeddingSet load_embeddings(const std::filesystem::path& path);
void write_embeddings(std::ostream& out, const EmbeddingSet& set);

// Linear discriminant analysis with a pooled within-class covariance shrunk
// toward its diagonal, and equal class priors.
class Lda {
 public:
  static Lda fit(const std::vector<std::vector<double>>& points, const std::vector<std::size_t>& classes,
                 std::size_t num_classes, double shrinkage = 0.1);
  // Known class means and shared covariance (row-major d x d).
  static Lda from_parameters(const std::vector<std::vector<double>>& means, const std::vector<double>& covariance);

  std::size_t predict(const std::vector<double>& x) const;
  std::vector<double> scores(const std::vector<double>& x) const;

 private:
  std::vector<std::vector<double>> weights_;  // Sigma^-1 mu_k
  std::vector<double> offsets_;               // -0.5 mu_k^T Sigma^-1 mu_k
};

enum class Holdout { One, Half };
Holdout parse_holdout(std::string_view name);
std::string_view to_string(Holdout h);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Seeded per-cluster selection of held-out items: one per cluster, or
// floor(n/2) per cluster. Throws ConfigError for clusters with < 2 members.
Split holdout_split(const EmbeddingSet& set, Holdout holdout, std::uint64_t seed);

// LDA accuracy (%) on the held-out items.
double cluster_classification(const EmbeddingSet& set, Holdout holdout, std::uint64_t seed, double shrinkage = 0.1);

enum class Distance { Cosine, L2 };
Distance parse_distance(std::string_view name);
std::string_view to_string(Distance d);

// Percentage of items whose nearest other item shares their label; ties go to
// the lower index. A zero vector has cosine similarity 0 with everything.
double nn_retrieval(const EmbeddingSet& set, Distance distance);

// Inverse Davies-Bouldin index. Throws DegenerateError on coincident
// centroids; returns +inf (and appends a warning) when every cluster has zero
// scatter.
double idb(const EmbeddingSet& set, Warnings* warnings = nullptr);

}  // namespace catn::eval
