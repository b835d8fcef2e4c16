#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "catn/analysis.hpp"
#include "catn/error.hpp"
#include "catn/metrics.hpp"
#include "catn/random.hpp"
#include "support/fixtures.hpp"

using namespace catn;
using namespace catn::eval;

namespace {

text::Sentence words(const std::string& s) { return text::tokenize(s); }

EmbeddingSet make_set(const std::vector<std::pair<std::string, std::vector<double>>>& rows) {
  EmbeddingSet set;
  for (std::size_t i = 0; i < rows.size(); ++i) set.items.push_back({std::to_string(i), rows[i].first, rows[i].second});
  return set;
}

// k well-separated Gaussian clusters in d dimensions.
EmbeddingSet gaussian_clusters(std::size_t k, std::size_t per, std::size_t d, double spread, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingSet set;
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> center(d);
    for (double& v : center) v = 10.0 * rng.normal();
    for (std::size_t i = 0; i < per; ++i) {
      std::vector<double> x(center);
      for (double& v : x) v += spread * rng.normal();
      set.items.push_back({std::to_string(set.size()), "c" + std::to_string(c), x});
    }
  }
  return set;
}

double pearson_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

}  // namespace

// ---------------------------------------------------------------- BLEU

TEST(Bleu, ClippedUnigramPrecision) {
  const std::vector<text::Sentence> cand{words("the the the the the the the")};
  const std::vector<text::Sentence> ref{words("the cat is on the mat")};
  const BleuResult r = bleu(cand, ref);
  EXPECT_DOUBLE_EQ(r.precisions[0], 2.0 / 7.0);
  EXPECT_EQ(r.matches[1], 0u);
  EXPECT_EQ(r.score, 0.0);
}

TEST(Bleu, CatMatHandCounts) {
  const std::vector<text::Sentence> cand{words("the cat sat on the mat")};
  const std::vector<text::Sentence> ref{words("the cat is on the mat")};
  const BleuResult r = bleu(cand, ref);
  EXPECT_EQ(r.matches, (std::array<std::size_t, 4>{5, 3, 1, 0}));
  EXPECT_EQ(r.totals, (std::array<std::size_t, 4>{6, 5, 4, 3}));
  EXPECT_EQ(r.precisions[0], 5.0 / 6.0);
  EXPECT_EQ(r.precisions[3], 0.0);
  EXPECT_EQ(r.score, 0.0);
}

TEST(Bleu, IdenticalCorpusScoresHundred) {
  const std::vector<text::Sentence> s{words("a b c d e"), words("x y z w v u")};
  EXPECT_NEAR(bleu(s, s).score, 100.0, 1e-12);
}

TEST(Bleu, BrevityPenaltyOnPerfectPrefix) {
  const std::vector<text::Sentence> cand{words("a b c d e f")};
  const std::vector<text::Sentence> ref{words("a b c d e f g h")};
  const BleuResult r = bleu(cand, ref);
  EXPECT_NEAR(r.brevity_penalty, std::exp(1.0 - 8.0 / 6.0), 1e-15);
  EXPECT_NEAR(r.score, 100.0 * std::exp(1.0 - 8.0 / 6.0), 1e-12);
}

TEST(Bleu, HandComputedPartialMatch) {
  // 1-gram 5/6, 2-gram 3/5, 3-gram 1/4, 4-gram 0/3 -> 0; add a second pair
  // to lift the 4-gram count above zero.
  const std::vector<text::Sentence> cand{words("a b c x d e"), words("p q r s")};
  const std::vector<text::Sentence> ref{words("a b c y d e"), words("p q r s")};
  const BleuResult r = bleu(cand, ref);
  EXPECT_EQ(r.matches, (std::array<std::size_t, 4>{9, 6, 3, 1}));
  EXPECT_EQ(r.totals, (std::array<std::size_t, 4>{10, 8, 6, 4}));
  const double expected = 100.0 * std::pow(0.9 * 0.75 * 0.5 * 0.25, 0.25);
  EXPECT_NEAR(r.score, expected, 1e-10);
}

TEST(Bleu, DuplicatingCorpusLeavesScoreUnchanged) {
  const std::vector<text::Sentence> cand{words("a b c x d e"), words("p q r s t")};
  const std::vector<text::Sentence> ref{words("a b c y d e f"), words("p q r s")};
  auto doubled_c = cand, doubled_r = ref;
  doubled_c.insert(doubled_c.end(), cand.begin(), cand.end());
  doubled_r.insert(doubled_r.end(), ref.begin(), ref.end());
  EXPECT_NEAR(bleu(cand, ref).score, bleu(doubled_c, doubled_r).score, 1e-12);
}

TEST(Bleu, ErrorsOnEmptyOrMismatchedCorpus) {
  const std::vector<text::Sentence> none;
  const std::vector<text::Sentence> one{words("a")};
  EXPECT_THROW(bleu(none, none), EmptyInputError);
  EXPECT_THROW(bleu(one, none), DimensionError);
}

TEST(Bleu, ScoreStaysWithinBounds) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<text::Sentence> cand(4), ref(4);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0, n = 1 + rng.below(9); j < n; ++j) cand[i].push_back(std::string(1, 'a' + rng.below(3)));
      for (std::size_t j = 0, n = 1 + rng.below(9); j < n; ++j) ref[i].push_back(std::string(1, 'a' + rng.below(3)));
    }
    const double s = bleu(cand, ref).score;
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 100.0 + 1e-9);
  }
}

// ---------------------------------------------------------------- correlation

TEST(Correlation, PearsonMatchesDefinition) {
  const std::vector<double> x{1, 2, 4, 7, 3}, y{2, 1, 5, 9, 4};
  EXPECT_NEAR(pearson(x, y), pearson_oracle(x, y), 1e-14);
  EXPECT_NEAR(pearson(x, x), 1.0, 1e-15);
}

TEST(Correlation, SpearmanIsOneForMonotoneMaps) {
  const std::vector<double> x{0.1, 3, 2, 5, -1};
  std::vector<double> y;
  for (double v : x) y.push_back(std::exp(v));
  EXPECT_NEAR(spearman(x, y), 1.0, 1e-15);
  for (double& v : y) v = -v;
  EXPECT_NEAR(spearman(x, y), -1.0, 1e-15);
}

TEST(Correlation, TiesShareAverageRank) {
  const std::vector<double> x{3, 1, 2, 2};
  EXPECT_EQ(average_ranks(x), (std::vector<double>{4, 1, 2.5, 2.5}));
}

TEST(Correlation, ConstantInputIsDegenerate) {
  const std::vector<double> x{1, 2, 3}, c{5, 5, 5};
  EXPECT_THROW(pearson(x, c), DegenerateError);
  EXPECT_THROW(spearman(c, x), DegenerateError);
}

TEST(Similarity, PerfectlyOrderedPairs) {
  std::vector<SimilarityPair> pairs;
  for (int k = 0; k < 5; ++k) {
    const double angle = 0.3 * k;
    pairs.push_back({{1, 0}, {std::cos(angle), std::sin(angle)}, 5.0 - k});
  }
  const SimilarityResult r = similarity_eval(pairs);
  EXPECT_NEAR(r.spearman, 1.0, 1e-15);
  EXPECT_GT(r.pearson, 0.9);
  std::istringstream in(R"({"a":[1,0],"b":[0,1],"score":1.5}
{"a":[1,1],"b":[1,1],"score":4})");
  const auto read = read_similarity_pairs(in);
  ASSERT_EQ(read.size(), 2u);
  EXPECT_EQ(read[1].score, 4.0);
}

TEST(Correlation, CosineOfZeroVectorIsZero) {
  const std::vector<double> z{0, 0}, a{1, 2};
  EXPECT_EQ(cosine(z, a), 0.0);
}

// ---------------------------------------------------------------- iDB

TEST(Idb, TwoClusterHandValue) {
  auto set = make_set({{"a", {0, 0}}, {"a", {2, 0}}, {"b", {10, 0}}, {"b", {12, 0}}});
  EXPECT_NEAR(idb(set), 5.0, 1e-12);
  set.items[2].vec = {20, 0};
  set.items[3].vec = {22, 0};
  EXPECT_NEAR(idb(set), 10.0, 1e-12);
}

TEST(Idb, ThreeClusterBruteForce) {
  const auto set = gaussian_clusters(3, 6, 4, 1.0, 9);
  // Independent computation straight from the definition.
  std::vector<std::vector<double>> c(3, std::vector<double>(4, 0.0));
  std::vector<double> s(3, 0.0);
  for (const auto& it : set.items) {
    const std::size_t k = it.label[1] - '0';
    for (std::size_t j = 0; j < 4; ++j) c[k][j] += it.vec[j] / 6.0;
  }
  auto dist = [](const std::vector<double>& a, const std::vector<double>& b) {
    double t = 0;
    for (std::size_t j = 0; j < a.size(); ++j) t += (a[j] - b[j]) * (a[j] - b[j]);
    return std::sqrt(t);
  };
  for (const auto& it : set.items) s[it.label[1] - '0'] += dist(it.vec, c[it.label[1] - '0']) / 6.0;
  double db = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    double worst = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      if (i != j) worst = std::max(worst, (s[i] + s[j]) / dist(c[i], c[j]));
    }
    db += worst / 3.0;
  }
  EXPECT_NEAR(idb(set), 1.0 / db, 1e-12);
}

TEST(Idb, InvariantToUniformScaling) {
  auto set = gaussian_clusters(4, 5, 3, 2.0, 2);
  const double base = idb(set);
  for (double factor : {0.01, 3.0, 250.0}) {
    auto scaled = set;
    for (auto& it : scaled.items) {
      for (double& v : it.vec) v *= factor;
    }
    EXPECT_NEAR(idb(scaled), base, 1e-9 * base);
  }
}

TEST(Idb, DegenerateInputs) {
  EXPECT_THROW(idb(make_set({{"a", {0, 0}}, {"a", {1, 1}}})), EmptyInputError);
  EXPECT_THROW(idb(make_set({{"a", {0, 0}}, {"a", {2, 2}}, {"b", {1, 1}}})), DegenerateError);
  Warnings w;
  EXPECT_EQ(idb(make_set({{"a", {0, 0}}, {"b", {1, 1}}}), &w), std::numeric_limits<double>::infinity());
  EXPECT_EQ(w.size(), 1u);
}

// ---------------------------------------------------------------- cluster classification

TEST(Holdout, SplitSizesAndCoverage) {
  const auto set = gaussian_clusters(3, 5, 2, 1.0, 4);
  for (Holdout h : {Holdout::One, Holdout::Half}) {
    const Split s = holdout_split(set, h, 11);
    EXPECT_EQ(s.test.size(), h == Holdout::One ? 3u : 6u);
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    for (std::size_t i : s.test) EXPECT_TRUE(all.insert(i).second);
    EXPECT_EQ(all.size(), set.size());
    const Split again = holdout_split(set, h, 11);
    EXPECT_EQ(again.test, s.test);
  }
  EXPECT_NE(holdout_split(set, Holdout::Half, 1).test, holdout_split(set, Holdout::Half, 2).test);
}

TEST(Holdout, SingletonClusterIsConfigError) {
  EXPECT_THROW(holdout_split(make_set({{"a", {0}}, {"a", {1}}, {"b", {2}}}), Holdout::One, 0), ConfigError);
  EXPECT_EQ(parse_holdout("half"), Holdout::Half);
  EXPECT_THROW(parse_holdout("most"), ConfigError);
}

TEST(ClusterClassification, SeparatedClustersAreFullyRecovered) {
  const auto set = gaussian_clusters(5, 8, 6, 0.5, 21);
  EXPECT_DOUBLE_EQ(cluster_classification(set, Holdout::One, 1), 100.0);
  EXPECT_DOUBLE_EQ(cluster_classification(set, Holdout::Half, 1), 100.0);
}

TEST(ClusterClassification, ShuffledLabelsFallToChance) {
  auto set = gaussian_clusters(10, 10, 5, 1.0, 5);
  Rng rng(17);
  std::vector<std::string> labels;
  for (const auto& it : set.items) labels.push_back(it.label);
  rng.shuffle(std::span(labels));
  for (std::size_t i = 0; i < labels.size(); ++i) set.items[i].label = labels[i];
  double total = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) total += cluster_classification(set, Holdout::Half, seed);
  // Chance is 10%; 500 held-out predictions put 30% far in the tail.
  EXPECT_LT(total / 10.0, 30.0);
}

TEST(Lda, IdentityCovarianceMatchesNearestCentroid) {
  Rng rng(8);
  std::vector<std::vector<double>> means(4, std::vector<double>(3));
  for (auto& m : means) {
    for (double& v : m) v = rng.normal();
  }
  const Lda lda = Lda::from_parameters(means, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(3);
    for (double& v : x) v = 2.0 * rng.normal();
    std::size_t nearest = 0;
    double best = 1e300;
    for (std::size_t k = 0; k < 4; ++k) {
      double d = 0;
      for (std::size_t j = 0; j < 3; ++j) d += (x[j] - means[k][j]) * (x[j] - means[k][j]);
      if (d < best) {
        best = d;
        nearest = k;
      }
    }
    EXPECT_EQ(lda.predict(x), nearest);
  }
}

TEST(Lda, DiscriminantMatchesClosedForm) {
  // Sigma = diag(4, 1): delta_k = x'S^-1 mu - 0.5 mu'S^-1 mu
  const Lda lda = Lda::from_parameters({{2, 0}, {0, 1}}, {4, 0, 0, 1});
  const auto s = lda.scores({1, 1});
  EXPECT_NEAR(s[0], 0.5 - 0.5, 1e-14);
  EXPECT_NEAR(s[1], 1.0 - 0.5, 1e-14);
}

TEST(Lda, SingularCovarianceStillPredicts) {
  // Third coordinate is constant, so the pooled covariance is singular
  // even after diagonal shrinkage.
  const std::vector<std::vector<double>> pts{{0, 0, 1}, {1, 0, 1}, {5, 5, 1}, {6, 5, 1}};
  const Lda lda = Lda::fit(pts, {0, 0, 1, 1}, 2);
  EXPECT_EQ(lda.predict({0.5, 0.2, 1}), 0u);
  EXPECT_EQ(lda.predict({5.5, 4.8, 1}), 1u);
}

// ---------------------------------------------------------------- NN retrieval

TEST(NnRetrieval, MatchesBruteForce) {
  const auto set = gaussian_clusters(4, 4, 3, 6.0, 13);
  for (Distance dist : {Distance::Cosine, Distance::L2}) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
      std::vector<std::pair<double, std::size_t>> cands;
      for (std::size_t j = 0; j < set.size(); ++j) {
        if (j == i) continue;
        double key = 0;
        if (dist == Distance::Cosine) {
          key = -cosine(set.items[i].vec, set.items[j].vec);
        } else {
          for (std::size_t k = 0; k < 3; ++k) key += std::pow(set.items[i].vec[k] - set.items[j].vec[k], 2);
        }
        cands.push_back({key, j});
      }
      correct += set.items[std::min_element(cands.begin(), cands.end())->second].label == set.items[i].label;
    }
    EXPECT_NEAR(nn_retrieval(set, dist), 100.0 * correct / set.size(), 1e-12) << to_string(dist);
  }
}

TEST(NnRetrieval, SingletonClusterCountsAsMiss) {
  const auto set = make_set({{"a", {1, 0}}, {"a", {1, 0.1}}, {"b", {0, 1}}});
  EXPECT_NEAR(nn_retrieval(set, Distance::Cosine), 200.0 / 3.0, 1e-12);
  EXPECT_THROW(nn_retrieval(make_set({{"a", {1}}}), Distance::L2), EmptyInputError);
}

TEST(NnRetrieval, TiesGoToLowerIndex) {
  // Item 0 is equidistant from 1 (label b) and 2 (label a).
  const auto set = make_set({{"a", {0}}, {"b", {1}}, {"a", {-1}}});
  EXPECT_NEAR(nn_retrieval(set, Distance::L2), 100.0 / 3.0, 1e-12);
}

// ---------------------------------------------------------------- probe

TEST(Probe, SeparableClassesAreLearned) {
  const auto all = gaussian_clusters(3, 20, 4, 0.5, 31);
  EmbeddingSet train, test;
  for (std::size_t i = 0; i < all.size(); ++i) (i % 4 == 0 ? test : train).items.push_back(all.items[i]);
  const ProbeResult r = probe_classify(train, test);
  EXPECT_DOUBLE_EQ(r.accuracy, 100.0);
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Probe, ConstantFeaturesFallBackToMajority) {
  auto train = make_set({{"x", {1, 1}}, {"x", {1, 1}}, {"y", {1, 1}}});
  auto test = make_set({{"x", {1, 1}}, {"y", {1, 1}}, {"y", {1, 1}}, {"z", {1, 1}}});
  const ProbeResult r = probe_classify(train, test);
  EXPECT_DOUBLE_EQ(r.baseline, 25.0);
  EXPECT_DOUBLE_EQ(r.accuracy, 25.0);
  EXPECT_EQ(r.warnings.size(), 1u);
}

// ---------------------------------------------------------------- reports

TEST(MetricCorrelation, MatchesDefinitionalPearson) {
  const std::vector<std::vector<double>> table{
      {1.0, 5.0, 2.0, 7.0}, {2.0, 3.0, 2.0, 1.0}, {3.5, 4.0, 2.0, 0.0}, {4.0, 1.0, 2.0, 3.0}, {6.0, 2.5, 2.0, 2.0}};
  const std::vector<std::string> names{"bleu", "idb", "flat", "nn"};
  std::vector<MetricReport> reports;
  for (std::size_t m = 0; m < table.size(); ++m) {
    MetricReport r;
    r.model = "m" + std::to_string(m);
    for (std::size_t k = 0; k < 4; ++k) r.metrics[names[k]] = table[m][k];
    if (m == 0) r.metrics["extra"] = 1.0;
    reports.push_back(r);
  }
  const CorrelationMatrix c = metric_correlation_matrix(reports);
  ASSERT_EQ(c.metrics, (std::vector<std::string>{"bleu", "flat", "idb", "nn"}));
  auto column = [&](const std::string& name) {
    std::vector<double> v;
    for (const auto& row : table) v.push_back(row[std::find(names.begin(), names.end(), name) - names.begin()]);
    return v;
  };
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      if (c.metrics[i] == "flat" || c.metrics[j] == "flat") {
        EXPECT_FALSE(c.values[i][j].has_value());
      } else {
        ASSERT_TRUE(c.values[i][j].has_value());
        EXPECT_NEAR(*c.values[i][j], pearson_oracle(column(c.metrics[i]), column(c.metrics[j])), 1e-12);
      }
    }
  }
  EXPECT_TRUE(c.to_json()["matrix"][1][0].is_null());
  EXPECT_THROW(metric_correlation_matrix(std::span(reports).first(2)), EmptyInputError);
}

TEST(MetricReport, JsonRoundTrip) {
  MetricReport r;
  r.model = "attn-attn";
  r.metrics = {{"bleu", 12.5}, {"nn", 40}};
  r.config = {{"seed", 3}};
  const MetricReport back = MetricReport::from_json(nlohmann::json::parse(r.to_json().dump()));
  EXPECT_EQ(back.model, r.model);
  EXPECT_EQ(back.metrics, r.metrics);
  EXPECT_EQ(back.config, r.config);
  EXPECT_THROW(MetricReport::from_json({{"metrics", 1}}), DataError);
}

TEST(Embeddings, JsonlRoundTrip) {
  const auto set = make_set({{"a", {0.25, -1}}, {"b", {3, 1e-300}}});
  std::stringstream io;
  write_embeddings(io, set);
  const EmbeddingSet back = read_embeddings(io);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.items[1].vec, set.items[1].vec);
  EXPECT_EQ(back.items[0].label, "a");
  std::istringstream ragged(R"({"id":"1","label":"a","vec":[1,2]}
{"id":"2","label":"a","vec":[1]})");
  EXPECT_THROW(read_embeddings(ragged), DimensionError);
  std::istringstream broken("{\"vec\": [1,");
  EXPECT_THROW(read_embeddings(broken), DataError);
}

// ---------------------------------------------------------------- alignment

TEST(Alignment, DecompositionMatchesCompoundProduct) {
  Rng rng(6);
  auto random_rows = [&](std::size_t rows, std::size_t cols) {
    std::vector<double> v(rows * cols);
    for (std::size_t i = 0; i < rows; ++i) {
      double z = 0;
      for (std::size_t j = 0; j < cols; ++j) z += v[i * cols + j] = std::exp(rng.normal());
      for (std::size_t j = 0; j < cols; ++j) v[i * cols + j] /= z;
    }
    return Tensor::from({rows, cols}, v);
  };
  const Tensor a = random_rows(3, 7), b = random_rows(5, 3);
  const Alignment al = decompose_alignment(a, b, 0.0);
  EXPECT_EQ(al.entries.size(), 5u * 7u * 3u);
  const Tensor ba = model::compound_alignment(a, b);
  std::vector<double> summed(5 * 7, 0.0);
  for (const auto& e : al.entries) summed[e.t * 7 + e.s] += e.w;
  for (std::size_t i = 0; i < summed.size(); ++i) EXPECT_NEAR(summed[i], ba.at(i), 1e-15);
  for (double s : al.target_sums) EXPECT_NEAR(s, 1.0, 1e-12);
  const Alignment pruned = decompose_alignment(a, b, 0.05);
  for (const auto& e : pruned.entries) EXPECT_GT(e.w, 0.05);
  for (double s : pruned.target_sums) EXPECT_LE(s, 1.0 + 1e-12);
}

TEST(Alignment, SingleHeadModelSumsToOne) {
  auto config = catn::testing::tiny_config(model::Architecture::AttnAttn);
  config.heads = 1;
  const model::Model m(config, 4);
  const text::SentencePair pair{{4, 5, 6, 7, 8}, {4, 5, 6}};
  const Alignment al = alignment_export(m, pair, 0.0);
  EXPECT_EQ(al.heads, 1u);
  EXPECT_EQ(al.source_len, 7u);
  EXPECT_EQ(al.target_len, 4u);
  EXPECT_EQ(al.entries.size(), 4u * 7u);
  for (double s : al.target_sums) EXPECT_NEAR(s, 1.0, 1e-12);
  EXPECT_EQ(alignment_to_json(al).size(), al.entries.size());
}

TEST(Alignment, TransformerAndUnsupportedArchitectures) {
  const model::Model trf(catn::testing::tiny_config(model::Architecture::TrfAttnAttn), 1);
  const Alignment al = alignment_export(trf, {{4, 5, 6}, {7, 6}}, 0.0);
  for (double s : al.target_sums) EXPECT_NEAR(s, 1.0, 1e-12);
  for (auto arch : {model::Architecture::Attn, model::Architecture::AttnCtx, model::Architecture::Final}) {
    const model::Model m(catn::testing::tiny_config(arch), 1);
    EXPECT_THROW(alignment_export(m, {{4}, {5}}), UnsupportedArchitectureError);
  }
}

// ---------------------------------------------------------------- position histogram

TEST(PositionHistogram, UniformAttentionIsFlat) {
  const std::vector<Tensor> a{Tensor::full({2, 40}, 1.0 / 40)};
  const std::vector<std::size_t> tokens{38};
  const auto h = histogram_from_attention(a, tokens, 20);
  for (const auto& row : h.mass) {
    for (double v : row) EXPECT_NEAR(v, 0.05, 1e-15);
  }
}

TEST(PositionHistogram, FirstPositionLandsInFirstBin) {
  std::vector<double> v(12, 0.0);
  v[0] = 1.0;
  const std::vector<Tensor> a{Tensor::from({1, 12}, v)};
  const std::vector<std::size_t> tokens{10};
  const auto h = histogram_from_attention(a, tokens, 5);
  EXPECT_EQ(h.mass[0], (std::vector<double>{1, 0, 0, 0, 0}));
}

TEST(PositionHistogram, BruteForceOverFiveSentences) {
  Rng rng(12);
  std::vector<Tensor> a;
  std::vector<std::size_t> tokens;
  const std::size_t bins = 7;
  for (std::size_t lens : {8, 9, 13, 30, 11}) {
    const std::size_t len = lens + 2;
    std::vector<double> v(2 * len);
    for (std::size_t h = 0; h < 2; ++h) {
      double z = 0;
      for (std::size_t t = 0; t < len; ++t) z += v[h * len + t] = rng.uniform();
      for (std::size_t t = 0; t < len; ++t) v[h * len + t] /= z;
    }
    a.push_back(Tensor::from({2, len}, v));
    tokens.push_back(lens);
  }
  const auto h = histogram_from_attention(a, tokens, bins);
  for (std::size_t head = 0; head < 2; ++head) {
    double row = 0;
    for (std::size_t b = 0; b < bins; ++b) {
      double expected = 0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double len = static_cast<double>(a[i].dim(1));
        for (std::size_t t = 0; t < a[i].dim(1); ++t) {
          // Relative position t/len lies in [b/bins, (b+1)/bins).
          if (t * bins >= b * len && t * bins < (b + 1) * len) expected += a[i].at(head, t) / 5.0;
        }
      }
      EXPECT_NEAR(h.mass[head][b], expected, 1e-14);
      row += h.mass[head][b];
    }
    EXPECT_NEAR(row, 1.0, 1e-12);
  }
}

TEST(PositionHistogram, ShortSentencesAreExcluded) {
  const std::vector<Tensor> a{Tensor::full({1, 9}, 1.0 / 9), Tensor::full({1, 10}, 0.1)};
  const std::vector<std::size_t> tokens{7, 8};
  const auto h = histogram_from_attention(a, tokens, 2);
  EXPECT_EQ(h.sentences, 1u);
  EXPECT_EQ(h.excluded, 1u);
  EXPECT_NEAR(h.mass[0][0], 0.5, 1e-15);
  const std::vector<std::size_t> all_short{3, 7};
  EXPECT_THROW(histogram_from_attention(a, all_short, 2), EmptyInputError);
  EXPECT_THROW(histogram_from_attention(a, tokens, 1), ConfigError);
}

TEST(PositionHistogram, ModelRowsAreDistributions) {
  const model::Model m(catn::testing::tiny_config(model::Architecture::AttnAttn), 2);
  const std::vector<std::vector<int>> sources{
      {4, 5, 6, 7, 8, 4, 5, 6}, {8, 7, 6, 5, 4, 4, 4, 4, 5, 6}, {4, 5}, {6, 6, 6, 6, 6, 6, 6, 6, 6}};
  const auto h = position_histogram(m, sources, 4, 8, 2);
  EXPECT_EQ(h.sentences, 3u);
  EXPECT_EQ(h.excluded, 1u);
  ASSERT_EQ(h.mass.size(), 2u);
  for (const auto& row : h.mass) EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-12);
  // Batching must not change the result.
  const auto one_batch = position_histogram(m, sources, 4, 8, 32);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t b = 0; b < 4; ++b) EXPECT_NEAR(one_batch.mass[i][b], h.mass[i][b], 1e-12);
  }
  std::ostringstream csv;
  write_histogram_csv(csv, h);
  EXPECT_EQ(csv.str().substr(0, 16), "head,bin,weight\n");
}
