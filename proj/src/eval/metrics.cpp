#include "catn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <set>

#include "catn/error.hpp"

namespace catn::eval {

using nlohmann::json;

json BleuResult::to_json() const {
  return {{"bleu", score},
          {"precisions", precisions},
          {"matches", matches},
          {"totals", totals},
          {"brevity_penalty", brevity_penalty},
          {"candidate_length", candidate_length},
          {"reference_length", reference_length}};
}

namespace {

using Ngrams = std::map<std::vector<std::string>, std::size_t>;

Ngrams count_ngrams(const text::Sentence& s, std::size_t n) {
  Ngrams out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[text::Sentence(s.begin() + i, s.begin() + i + n)];
  return out;
}

}  // namespace

BleuResult bleu(std::span<const text::Sentence> candidates, std::span<const text::Sentence> references) {
  if (candidates.size() != references.size()) {
    throw DimensionError("BLEU: " + std::to_string(candidates.size()) + " candidates for " +
                         std::to_string(references.size()) + " references");
  }
  if (candidates.empty()) throw EmptyInputError("BLEU: empty corpus");
  BleuResult r;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    r.candidate_length += candidates[i].size();
    r.reference_length += references[i].size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const Ngrams cand = count_ngrams(candidates[i], n);
      const Ngrams ref = count_ngrams(references[i], n);
      for (const auto& [gram, count] : cand) {
        const auto it = ref.find(gram);
        r.matches[n - 1] += it == ref.end() ? 0 : std::min(count, it->second);
        r.totals[n - 1] += count;
      }
    }
  }
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    r.precisions[n] = r.totals[n] ? static_cast<double>(r.matches[n]) / static_cast<double>(r.totals[n]) : 0.0;
    if (r.matches[n] == 0) {
      zero = true;
    } else {
      log_sum += std::log(r.precisions[n]);
    }
  }
  const double c = static_cast<double>(r.candidate_length);
  const double ref = static_cast<double>(r.reference_length);
  r.brevity_penalty = r.candidate_length == 0 ? 0.0 : (c > ref ? 1.0 : std::exp(1.0 - ref / c));
  r.score = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / 4.0);
  return r;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("correlation: inputs differ in length");
  if (x.size() < 2) throw EmptyInputError("correlation needs at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw DegenerateError("correlation of a constant series is undefined");
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double rank = (static_cast<double>(i + j) / 2.0) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("correlation: inputs differ in length");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine: vectors differ in length");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

SimilarityResult similarity_eval(std::span<const SimilarityPair> pairs) {
  std::vector<double> predicted, gold;
  for (const auto& p : pairs) {
    predicted.push_back(cosine(p.a, p.b));
    gold.push_back(p.score);
  }
  return {pearson(predicted, gold), spearman(predicted, gold), pairs.size()};
}

std::vector<SimilarityPair> read_similarity_pairs(std::istream& in) {
  std::vector<SimilarityPair> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      out.push_back({j.at("a").get<std::vector<double>>(), j.at("b").get<std::vector<double>>(),
                     j.at("score").get<double>()});
    } catch (const json::exception& e) {
      throw DataError("similarity line " + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

ProbeResult probe_classify(const EmbeddingSet& train, const EmbeddingSet& test, const ProbeOptions& options) {
  if (train.items.empty()) throw EmptyInputError("probe: empty training set");
  if (test.items.empty()) throw EmptyInputError("probe: empty test set");
  train.validate();
  test.validate();
  if (test.dim() != train.dim()) throw DimensionError("probe: train and test embeddings differ in dimension");

  const auto labels = train.labels();
  const std::size_t k = labels.size();
  const std::size_t d = train.dim();
  const std::size_t n = train.size();
  auto index_of = [&](const std::string& label) -> std::ptrdiff_t {
    const auto it = std::lower_bound(labels.begin(), labels.end(), label);
    return it != labels.end() && *it == label ? it - labels.begin() : -1;
  };

  std::vector<double> mean(d, 0.0), stdev(d, 0.0);
  for (const auto& item : train.items) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += item.vec[j] / static_cast<double>(n);
  }
  for (const auto& item : train.items) {
    for (std::size_t j = 0; j < d; ++j) stdev[j] += (item.vec[j] - mean[j]) * (item.vec[j] - mean[j]);
  }
  for (double& s : stdev) {
    s = std::sqrt(s / static_cast<double>(n));
    if (s == 0.0) s = 1.0;
  }
  auto standardize = [&](const std::vector<double>& v) {
    std::vector<double> out(d);
    for (std::size_t j = 0; j < d; ++j) out[j] = (v[j] - mean[j]) / stdev[j];
    return out;
  };

  std::vector<std::vector<double>> x;
  std::vector<std::size_t> y;
  for (const auto& item : train.items) {
    x.push_back(standardize(item.vec));
    y.push_back(static_cast<std::size_t>(index_of(item.label)));
  }

  // Weights are k x (d + 1) with the bias in the last column.
  std::vector<double> w(k * (d + 1), 0.0), grad(w.size()), p(k);
  auto logits = [&](const std::vector<double>& v, std::vector<double>& out) {
    for (std::size_t c = 0; c < k; ++c) {
      const double* row = &w[c * (d + 1)];
      double s = row[d];
      for (std::size_t j = 0; j < d; ++j) s += row[j] * v[j];
      out[c] = s;
    }
  };
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      logits(x[i], p);
      const double top = *std::max_element(p.begin(), p.end());
      double z = 0.0;
      for (double& v : p) z += (v = std::exp(v - top));
      for (std::size_t c = 0; c < k; ++c) {
        const double delta = (p[c] / z - (c == y[i] ? 1.0 : 0.0)) / static_cast<double>(n);
        double* row = &grad[c * (d + 1)];
        for (std::size_t j = 0; j < d; ++j) row[j] += delta * x[i][j];
        row[d] += delta;
      }
    }
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t j = 0; j < d; ++j) grad[c * (d + 1) + j] += options.l2 * w[c * (d + 1) + j];
    }
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= options.learning_rate * grad[i];
  }

  std::map<std::string, std::size_t> frequency;
  for (const auto& item : train.items) ++frequency[item.label];
  std::string majority;
  std::size_t best = 0;
  for (const auto& [label, count] : frequency) {
    if (count > best) {
      best = count;
      majority = label;
    }
  }

  ProbeResult result;
  std::size_t correct = 0, baseline = 0;
  std::set<std::string> unseen;
  for (const auto& item : test.items) {
    baseline += item.label == majority;
    const auto truth = index_of(item.label);
    if (truth < 0) {
      unseen.insert(item.label);
      continue;
    }
    logits(standardize(item.vec), p);
    correct += static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()) ==
               static_cast<std::size_t>(truth);
  }
  for (const auto& label : unseen) {
    result.warnings.push_back("test label '" + label + "' never occurs in training; counted as errors");
  }
  const double m = static_cast<double>(test.size());
  result.accuracy = 100.0 * static_cast<double>(correct) / m;
  result.baseline = 100.0 * static_cast<double>(baseline) / m;
  return result;
}

json MetricReport::to_json() const {
  json j = {{"model", model}, {"metrics", metrics}, {"config", config}};
  if (!details.empty()) j["details"] = details;
  return j;
}

MetricReport MetricReport::from_json(const json& j) {
  try {
    MetricReport r;
    r.model = j.at("model").get<std::string>();
    r.metrics = j.at("metrics").get<std::map<std::string, double>>();
    r.config = j.value("config", json::object());
    r.details = j.value("details", json::object());
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed metric report: ") + e.what());
  }
}

json CorrelationMatrix::to_json() const {
  json rows = json::array();
  for (const auto& row : values) {
    json r = json::array();
    for (const auto& v : row) r.push_back(v ? json(*v) : json(nullptr));
    rows.push_back(std::move(r));
  }
  return {{"metrics", metrics}, {"matrix", std::move(rows)}};
}

CorrelationMatrix metric_correlation_matrix(std::span<const MetricReport> reports) {
  if (reports.size() < 3) throw EmptyInputError("metric correlation needs at least three models");
  CorrelationMatrix out;
  for (const auto& [name, value] : reports.front().metrics) {
    const bool shared = std::all_of(reports.begin(), reports.end(),
                                    [&](const MetricReport& r) { return r.metrics.count(name) > 0; });
    if (shared) out.metrics.push_back(name);
  }
  const std::size_t m = out.metrics.size();
  std::vector<std::vector<double>> columns(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (const auto& r : reports) columns[i].push_back(r.metrics.at(out.metrics[i]));
  }
  out.values.assign(m, std::vector<std::optional<double>>(m));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      try {
        out.values[i][j] = pearson(columns[i], columns[j]);
      } catch (const DegenerateError&) {
        out.values[i][j] = std::nullopt;
      }
    }
  }
  return out;
}

}  // namespace catn::eval
