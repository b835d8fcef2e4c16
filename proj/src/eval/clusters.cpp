#include "catn/clusters.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "catn/error.hpp"
#include "catn/random.hpp"
#include "json.hpp"

namespace catn::eval {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::vector<std::string> EmbeddingSet::labels() const {
  std::vector<std::string> out;
  for (const auto& item : items) out.push_back(item.label);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void EmbeddingSet::validate() const {
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].vec.size() != dim()) {
      throw DimensionError("embedding " + items[i].id + " has dimension " + std::to_string(items[i].vec.size()) +
                           ", expected " + std::to_string(dim()));
    }
    if (items[i].label.empty()) throw DataError("embedding " + items[i].id + " has an empty label");
  }
}

EmbeddingSet read_embeddings(std::istream& in) {
  EmbeddingSet set;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EmbeddingItem item;
      item.id = j.contains("id") ? (j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump())
                                 : std::to_string(set.items.size());
      item.label = j.value("label", std::string());
      item.vec = j.at("vec").get<std::vector<double>>();
      set.items.push_back(std::move(item));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("embeddings line " + std::to_string(number) + ": " + e.what());
    }
  }
  set.validate();
  return set;
}

EmbeddingSet load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  return read_embeddings(in);
}

void write_embeddings(std::ostream& out, const EmbeddingSet& set) {
  for (const auto& item : set.items) {
    out << nlohmann::json{{"id", item.id}, {"label", item.label}, {"vec", item.vec}}.dump() << '\n';
  }
}

namespace {

VectorXd to_eigen(const std::vector<double>& v) { return Eigen::Map<const VectorXd>(v.data(), v.size()); }

// Cholesky with growing diagonal jitter when the matrix is not positive definite.
Eigen::LLT<MatrixXd> factor(MatrixXd sigma) {
  const auto d = sigma.rows();
  double jitter = 0.0;
  const double base = std::max(sigma.diagonal().cwiseAbs().maxCoeff(), 1.0) * 1e-10;
  for (int attempt = 0; attempt < 20; ++attempt) {
    Eigen::LLT<MatrixXd> llt(sigma + jitter * MatrixXd::Identity(d, d));
    if (llt.info() == Eigen::Success) return llt;
    jitter = jitter == 0.0 ? base : jitter * 10.0;
  }
  throw DegenerateError("LDA covariance is not positive definite even after regularization");
}

}  // namespace

Lda Lda::from_parameters(const std::vector<std::vector<double>>& means, const std::vector<double>& covariance) {
  if (means.empty()) throw EmptyInputError("LDA needs at least one class");
  const std::size_t d = means.front().size();
  if (covariance.size() != d * d) throw DimensionError("LDA covariance does not match the mean dimension");
  const MatrixXd sigma = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      covariance.data(), d, d);
  const auto llt = factor(sigma);
  Lda lda;
  for (const auto& mu : means) {
    if (mu.size() != d) throw DimensionError("LDA class means differ in dimension");
    const VectorXd m = to_eigen(mu);
    const VectorXd w = llt.solve(m);
    lda.weights_.emplace_back(w.data(), w.data() + d);
    lda.offsets_.push_back(-0.5 * m.dot(w));
  }
  return lda;
}

Lda Lda::fit(const std::vector<std::vector<double>>& points, const std::vector<std::size_t>& classes,
             std::size_t num_classes, double shrinkage) {
  if (points.size() != classes.size()) throw DimensionError("LDA: points and labels differ in length");
  if (points.empty() || num_classes == 0) throw EmptyInputError("LDA: no training points");
  if (shrinkage < 0 || shrinkage > 1) throw ConfigError("LDA shrinkage must lie in [0, 1]");
  const std::size_t d = points.front().size();
  std::vector<VectorXd> sums(num_classes, VectorXd::Zero(d));
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].size() != d) throw DimensionError("LDA: ragged training points");
    if (classes[i] >= num_classes) throw DimensionError("LDA: class index out of range");
    sums[classes[i]] += to_eigen(points[i]);
    ++counts[classes[i]];
  }
  std::vector<std::vector<double>> means(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (counts[k] == 0) throw EmptyInputError("LDA: class " + std::to_string(k) + " has no training points");
    const VectorXd mu = sums[k] / static_cast<double>(counts[k]);
    means[k].assign(mu.data(), mu.data() + d);
  }

  MatrixXd scatter = MatrixXd::Zero(d, d);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const VectorXd c = to_eigen(points[i]) - to_eigen(means[classes[i]]);
    scatter.noalias() += c * c.transpose();
  }
  const std::size_t dof = points.size() > num_classes ? points.size() - num_classes : 1;
  MatrixXd sigma = scatter / static_cast<double>(dof);
  const MatrixXd diagonal = sigma.diagonal().asDiagonal();
  sigma = (1.0 - shrinkage) * sigma + shrinkage * diagonal;

  std::vector<double> flat(d * d);
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(flat.data(), d, d) = sigma;
  return from_parameters(means, flat);
}

std::vector<double> Lda::scores(const std::vector<double>& x) const {
  std::vector<double> out(weights_.size());
  for (std::size_t k = 0; k < weights_.size(); ++k) {
    if (x.size() != weights_[k].size()) throw DimensionError("LDA: query dimension mismatch");
    double s = offsets_[k];
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * weights_[k][i];
    out[k] = s;
  }
  return out;
}

std::size_t Lda::predict(const std::vector<double>& x) const {
  const auto s = scores(x);
  return static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
}

Holdout parse_holdout(std::string_view name) {
  if (name == "one") return Holdout::One;
  if (name == "half") return Holdout::Half;
  throw ConfigError("holdout must be 'one' or 'half', got '" + std::string(name) + "'");
}

std::string_view to_string(Holdout h) { return h == Holdout::One ? "one" : "half"; }

namespace {

std::map<std::string, std::vector<std::size_t>> members_by_label(const EmbeddingSet& set) {
  std::map<std::string, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < set.items.size(); ++i) out[set.items[i].label].push_back(i);
  return out;
}

}  // namespace

Split holdout_split(const EmbeddingSet& set, Holdout holdout, std::uint64_t seed) {
  if (set.items.empty()) throw EmptyInputError("holdout split of an empty embedding set");
  Rng rng(seed);
  Split split;
  for (auto& [label, members] : members_by_label(set)) {
    if (members.size() < 2) {
      throw ConfigError("cluster '" + label + "' has " + std::to_string(members.size()) +
                        " member; held-out evaluation needs at least 2");
    }
    rng.shuffle(std::span(members));
    const std::size_t held = holdout == Holdout::One ? 1 : members.size() / 2;
    split.test.insert(split.test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(held));
    split.train.insert(split.train.end(), members.begin() + static_cast<std::ptrdiff_t>(held), members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

double cluster_classification(const EmbeddingSet& set, Holdout holdout, std::uint64_t seed, double shrinkage) {
  set.validate();
  const Split split = holdout_split(set, holdout, seed);
  const auto labels = set.labels();
  auto index_of = [&](const std::string& label) {
    return static_cast<std::size_t>(std::lower_bound(labels.begin(), labels.end(), label) - labels.begin());
  };
  std::vector<std::vector<double>> points;
  std::vector<std::size_t> classes;
  for (std::size_t i : split.train) {
    points.push_back(set.items[i].vec);
    classes.push_back(index_of(set.items[i].label));
  }
  const Lda lda = Lda::fit(points, classes, labels.size(), shrinkage);
  std::size_t correct = 0;
  for (std::size_t i : split.test) correct += lda.predict(set.items[i].vec) == index_of(set.items[i].label);
  return 100.0 * static_cast<double>(correct) / static_cast<double>(split.test.size());
}

Distance parse_distance(std::string_view name) {
  if (name == "cosine") return Distance::Cosine;
  if (name == "l2") return Distance::L2;
  throw ConfigError("metric must be 'cosine' or 'l2', got '" + std::string(name) + "'");
}

std::string_view to_string(Distance d) { return d == Distance::Cosine ? "cosine" : "l2"; }

double nn_retrieval(const EmbeddingSet& set, Distance distance) {
  if (set.items.size() < 2) throw EmptyInputError("nearest-neighbour retrieval needs at least two items");
  set.validate();
  const std::size_t n = set.items.size();
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) norms[i] = to_eigen(set.items[i].vec).norm();

  // Lower distance is better; cosine is negated so both compare the same way.
  auto cost = [&](std::size_t i, std::size_t j) {
    const VectorXd a = to_eigen(set.items[i].vec);
    const VectorXd b = to_eigen(set.items[j].vec);
    if (distance == Distance::L2) return (a - b).norm();
    if (norms[i] == 0.0 || norms[j] == 0.0) return 0.0;
    return -a.dot(b) / (norms[i] * norms[j]);
  };

  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = n;
    double best_cost = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double c = cost(i, j);
      if (best == n || c < best_cost) {
        best = j;
        best_cost = c;
      }
    }
    correct += set.items[best].label == set.items[i].label;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

double idb(const EmbeddingSet& set, Warnings* warnings) {
  set.validate();
  const auto groups = members_by_label(set);
  if (groups.size() < 2) throw EmptyInputError("iDB needs at least two clusters");
  std::vector<VectorXd> centroids;
  std::vector<double> scatter;
  std::vector<std::string> names;
  for (const auto& [label, members] : groups) {
    VectorXd c = VectorXd::Zero(static_cast<Eigen::Index>(set.dim()));
    for (std::size_t i : members) c += to_eigen(set.items[i].vec);
    c /= static_cast<double>(members.size());
    double s = 0.0;
    for (std::size_t i : members) s += (to_eigen(set.items[i].vec) - c).norm();
    centroids.push_back(std::move(c));
    scatter.push_back(s / static_cast<double>(members.size()));
    names.push_back(label);
  }

  const std::size_t k = centroids.size();
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      if ((centroids[i] - centroids[j]).norm() == 0.0) {
        throw DegenerateError("clusters '" + names[i] + "' and '" + names[j] + "' have coincident centroids");
      }
    }
  }
  if (std::all_of(scatter.begin(), scatter.end(), [](double s) { return s == 0.0; })) {
    if (warnings) warnings->push_back("every cluster has zero scatter; iDB is unbounded");
    return std::numeric_limits<double>::infinity();
  }

  double db = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double worst = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (j != i) worst = std::max(worst, (scatter[i] + scatter[j]) / (centroids[i] - centroids[j]).norm());
    }
    db += worst;
  }
  db /= static_cast<double>(k);
  return 1.0 / db;
}

}  // namespace catn::eval
