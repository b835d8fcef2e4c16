#include <gtest/gtest.h>

#include <cmath>

#include "catn/error.hpp"
#include "catn/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace catn;
using catn::testing::check_gradients;
using catn::testing::random_tensor;

namespace {

void expect_values(const Tensor& t, const std::vector<double>& expected, double tol = 0.0) {
  ASSERT_EQ(t.numel(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(t.at(i), expected[i], tol) << "index " << i;
}

void expect_grads_ok(const catn::testing::NamedTensors& params, const std::function<Tensor()>& loss,
                     double tol = 1e-6) {
  for (const auto& r : check_gradients(params, loss)) EXPECT_LE(r.rel_error, tol) << r.name;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  expect_values(matmul(Tensor::identity(2), m), {1, 2, 3, 4});
}

TEST(Matmul, BasisSelection) {
  expect_values(matmul(Tensor::from({1, 2}, {1, 0}), Tensor::from({2, 1}, {0, 5})), {0});
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4,2]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Rng rng(1);
  const Tensor a = random_tensor(rng, {3, 4});
  const Tensor b = random_tensor(rng, {4, 2});
  const Tensor w = random_tensor(rng, {3, 2}, false);
  expect_grads_ok({{"a", a}, {"b", b}}, [&] { return sum(mul(matmul(a, b), w)); });
}

TEST(Bmm, MatchesPerBatchMatmulAndGradients) {
  Rng rng(2);
  const Tensor a = random_tensor(rng, {2, 3, 4});
  const Tensor b = random_tensor(rng, {2, 4, 5});
  const Tensor bt = random_tensor(rng, {2, 5, 4});
  const Tensor c = bmm(a, b);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < 4; ++k) s += a.at(n, i, k) * b.at(n, k, j);
        EXPECT_NEAR(c.at(n, i, j), s, 1e-12);
      }
    }
  }
  const Tensor w = random_tensor(rng, {2, 3, 5}, false);
  expect_grads_ok({{"a", a}, {"b", b}}, [&] { return sum(mul(bmm(a, b), w)); });
  expect_grads_ok({{"a", a}, {"bt", bt}}, [&] { return sum(mul(bmm(a, bt, true), w)); });
}

TEST(Softmax, SymmetricInputIsUniform) { expect_values(softmax(Tensor::from({2}, {0, 0}), 0), {0.5, 0.5}, 1e-15); }

TEST(Softmax, LargeLogitsDoNotOverflow) {
  const Tensor s = softmax(Tensor::from({2}, {1000, 0}), 0);
  EXPECT_TRUE(std::isfinite(s.at(0)));
  expect_values(s, {1.0, 0.0}, 1e-300);
}

TEST(Softmax, MaskedHandEvaluation) {
  const double e = std::exp(1.0);
  const Tensor s = softmax(Tensor::from({3}, {1, 2, 3}), 0, Tensor::from({3}, {1, 1, 0}));
  expect_values(s, {1 / (1 + e), e / (1 + e), 0.0}, 1e-15);
  EXPECT_EQ(s.at(2), 0.0);
}

TEST(Softmax, FullyMaskedSliceIsDegenerate) {
  EXPECT_THROW(softmax(Tensor::from({2, 2}, {1, 2, 3, 4}), 1, Tensor::from({2, 2}, {1, 1, 0, 0})), DegenerateError);
}

TEST(Softmax, RowsSumToOneWithBroadcastMask) {
  Rng rng(3);
  const Tensor x = random_tensor(rng, {3, 4, 5}, false, 5.0);
  const Tensor mask = Tensor::from({3, 1, 5}, {1, 1, 1, 0, 0, 1, 0, 1, 0, 1, 1, 1, 1, 1, 1});
  const Tensor s = softmax(x, 2, mask);
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t i = 0; i < 4; ++i) {
      double total = 0;
      for (std::size_t j = 0; j < 5; ++j) {
        EXPECT_GE(s.at(b, i, j), 0.0);
        if (mask.at(b * 5 + j) == 0.0) {
          EXPECT_EQ(s.at(b, i, j), 0.0);
        }
        total += s.at(b, i, j);
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  const Tensor x = random_tensor(rng, {3, 4});
  const Tensor w = random_tensor(rng, {3, 4}, false);
  const Tensor mask = Tensor::from({3, 4}, {1, 1, 0, 1, 1, 0, 0, 0, 1, 1, 1, 1});
  expect_grads_ok({{"x", x}}, [&] { return sum(mul(softmax(x, 1, mask), w)); });
  expect_grads_ok({{"x", x}}, [&] { return sum(mul(softmax(x, 0), w)); });
}

TEST(Elementwise, PointwiseValues) {
  EXPECT_EQ(tanh(Tensor::scalar(0)).item(), 0.0);
  EXPECT_EQ(sigmoid(Tensor::scalar(0)).item(), 0.5);
  const Tensor args[] = {Tensor::from({2}, {1, 2}), Tensor::from({2}, {3, 5})};
  expect_values(elementwise(Elementwise::Add, args), {4, 7});
  expect_values(elementwise(Elementwise::Mul, args), {3, 10});
}

TEST(Elementwise, ConcatShapeArithmetic) {
  const Tensor parts[] = {Tensor::zeros({2, 3}), Tensor::zeros({2, 5})};
  EXPECT_EQ(elementwise(Elementwise::Concat, parts, 1).shape(), (Shape{2, 8}));
}

TEST(Elementwise, IncompatibleShapesThrow) {
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
  EXPECT_THROW(concat({Tensor::zeros({2, 3}), Tensor::zeros({3, 3})}, 1), DimensionError);
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  const Tensor a = random_tensor(rng, {2, 3});
  const Tensor b = random_tensor(rng, {2, 3});
  const Tensor w = random_tensor(rng, {2, 3}, false);
  expect_grads_ok({{"a", a}, {"b", b}}, [&] { return sum(mul(mul(tanh(a), sigmoid(b)), w)); });
  expect_grads_ok({{"a", a}, {"b", b}}, [&] { return sum(mul(sub(relu(a), scale(b, 3.0)), w)); });
  const Tensor w2 = random_tensor(rng, {2, 6}, false);
  expect_grads_ok({{"a", a}, {"b", b}}, [&] { return sum(mul(concat({a, b}, 1), w2)); });
}

TEST(ShapeOps, SliceStackReshapePermuteGradients) {
  Rng rng(6);
  const Tensor x = random_tensor(rng, {2, 3, 4});
  const Tensor y = random_tensor(rng, {2, 3, 4});
  const Tensor w1 = random_tensor(rng, {2, 2, 4}, false);
  expect_grads_ok({{"x", x}}, [&] { return sum(mul(slice(x, 1, 1, 2), w1)); });
  const Tensor w2 = random_tensor(rng, {2, 2, 3, 4}, false);
  const Tensor pair[] = {x, y};
  expect_grads_ok({{"x", x}, {"y", y}}, [&] { return sum(mul(stack(pair, 1), w2)); });
  const Tensor w3 = random_tensor(rng, {4, 2, 3}, false);
  expect_grads_ok({{"x", x}}, [&] { return sum(mul(permute(x, {2, 0, 1}), w3)); });
  const Tensor w4 = random_tensor(rng, {6, 4}, false);
  expect_grads_ok({{"x", x}}, [&] { return sum(mul(reshape(x, {6, 4}), w4)); });
}

TEST(ShapeOps, PermuteMovesEntries) {
  const Tensor x = Tensor::from({2, 3}, {0, 1, 2, 3, 4, 5});
  expect_values(permute(x, {1, 0}), {0, 3, 1, 4, 2, 5});
}

TEST(Reductions, MaskedPoolingValuesAndGradients) {
  const Tensor h = Tensor::from({1, 3, 2}, {0, 2, 2, 0, 9, 9});
  const Tensor mask = Tensor::from({1, 3}, {1, 1, 0});
  expect_values(masked_mean(h, mask), {1, 1});
  expect_values(masked_max(h, mask), {2, 2});
  EXPECT_THROW(masked_mean(h, Tensor::zeros({1, 3})), EmptyInputError);

  Rng rng(7);
  const Tensor x = random_tensor(rng, {2, 4, 3});
  const Tensor m = Tensor::from({2, 4}, {1, 1, 1, 0, 1, 0, 0, 0});
  const Tensor w = random_tensor(rng, {2, 3}, false);
  expect_grads_ok({{"x", x}}, [&] { return sum(mul(masked_mean(x, m), w)); });
  expect_grads_ok({{"x", x}}, [&] { return sum(mul(masked_max(x, m), w)); });
}

TEST(LayerNorm, NormalizesAndDifferentiates) {
  Rng rng(8);
  const Tensor x = random_tensor(rng, {3, 5});
  const Tensor g = random_tensor(rng, {5});
  const Tensor b = random_tensor(rng, {5});
  const Tensor y = layer_norm(x, Tensor::full({5}, 1.0), Tensor::zeros({5}));
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < 5; ++j) m += y.at(r, j) / 5;
    for (std::size_t j = 0; j < 5; ++j) v += (y.at(r, j) - m) * (y.at(r, j) - m) / 5;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-3);
  }
  const Tensor w = random_tensor(rng, {3, 5}, false);
  expect_grads_ok({{"x", x}, {"g", g}, {"b", b}}, [&] { return sum(mul(layer_norm(x, g, b), w)); });
}

TEST(CrossEntropy, UniformLogitsGiveLogVocab) {
  const std::vector<int> targets{0, 3};
  const std::vector<double> weights{1, 1};
  EXPECT_NEAR(cross_entropy(Tensor::zeros({2, 7}), targets, weights).item(), std::log(7.0), 1e-15);
  const std::vector<double> none{0, 0};
  EXPECT_THROW(cross_entropy(Tensor::zeros({2, 7}), targets, none), EmptyInputError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  const Tensor logits = random_tensor(rng, {4, 5});
  const std::vector<int> targets{0, 4, 2, 1};
  const std::vector<double> weights{1, 0, 1, 1};
  expect_grads_ok({{"logits", logits}}, [&] { return cross_entropy(logits, targets, weights); });
}

TEST(GatherAndSelect, GradientsMatchFiniteDifferences) {
  Rng rng(10);
  const Tensor table = random_tensor(rng, {5, 3});
  const std::vector<int> ids{4, 0, 4, 2};
  const Tensor w = random_tensor(rng, {4, 3}, false);
  expect_grads_ok({{"table", table}}, [&] { return sum(mul(gather_rows(table, ids), w)); });

  const Tensor x = random_tensor(rng, {2, 4, 3});
  const std::vector<std::size_t> steps{3, 1};
  const Tensor sel = select_steps(x, steps);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(sel.at(0, j), x.at(0, 3, j));
    EXPECT_EQ(sel.at(1, j), x.at(1, 1, j));
  }
  const Tensor w2 = random_tensor(rng, {2, 3}, false);
  expect_grads_ok({{"x", x}}, [&] { return sum(mul(select_steps(x, steps), w2)); });
}

TEST(AdditiveScores, MatchesLoopAndDifferentiates) {
  Rng rng(11);
  const Tensor keys = random_tensor(rng, {2, 3, 4});
  const Tensor query = random_tensor(rng, {2, 4});
  const Tensor v = random_tensor(rng, {4});
  const Tensor s = additive_scores(keys, query, v);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t j = 0; j < 3; ++j) {
      double e = 0;
      for (std::size_t k = 0; k < 4; ++k) e += v.at(k) * std::tanh(keys.at(b, j, k) + query.at(b, k));
      EXPECT_NEAR(s.at(b, j), e, 1e-14);
    }
  }
  const Tensor w = random_tensor(rng, {2, 3}, false);
  expect_grads_ok({{"keys", keys}, {"query", query}, {"v", v}},
                  [&] { return sum(mul(additive_scores(keys, query, v), w)); });
}

TEST(MaskedUpdate, SelectsRowsAndDifferentiates) {
  Rng rng(12);
  const Tensor a = random_tensor(rng, {3, 2});
  const Tensor b = random_tensor(rng, {3, 2});
  const std::vector<double> keep{1, 0, 1};
  const Tensor m = masked_update(keep, a, b);
  EXPECT_EQ(m.at(0, 1), a.at(0, 1));
  EXPECT_EQ(m.at(1, 0), b.at(1, 0));
  const Tensor w = random_tensor(rng, {3, 2}, false);
  expect_grads_ok({{"a", a}, {"b", b}}, [&] { return sum(mul(masked_update(keep, a, b), w)); });
}

TEST(Backward, SquareAtThreeGivesSix) {
  const Tensor x = Tensor::scalar(3.0, true);
  Tape tape;
  tape.backward(mul(x, x));
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Backward, TanhAtZeroGivesOne) {
  const Tensor x = Tensor::scalar(0.0, true);
  Tape tape;
  tape.backward(tanh(x));
  EXPECT_EQ(x.grad()[0], 1.0);
}

TEST(Backward, RepeatedCallsAccumulate) {
  const Tensor x = Tensor::scalar(3.0, true);
  Tape tape;
  const Tensor y = mul(x, x);
  tape.backward(y);
  tape.backward(y);
  EXPECT_EQ(x.grad()[0], 12.0);
  x.zero_grad();
  tape.backward(y);
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Backward, NonScalarLossIsRankError) {
  const Tensor x = Tensor::from({2}, {1, 2}, true);
  Tape tape;
  EXPECT_THROW(tape.backward(tanh(x)), RankError);
}

TEST(Backward, EveryRequiresGradLeafGetsGradient) {
  const Tensor a = Tensor::from({2}, {1, 2}, true);
  const Tensor unused_path = Tensor::from({2}, {3, 4}, true);
  Tape tape;
  tape.backward(sum(mul(a, scale(unused_path, 0.0))));
  EXPECT_TRUE(a.has_grad());
  EXPECT_TRUE(unused_path.has_grad());
}

TEST(Tape, RecordsOnlyWhenGradientsAreNeeded) {
  Tape tape;
  const Tensor c = Tensor::from({2}, {1, 2});
  tanh(c);
  EXPECT_EQ(tape.size(), 0u);
  const Tensor x = Tensor::from({2}, {1, 2}, true);
  tanh(x);
  EXPECT_EQ(tape.size(), 1u);
  {
    NoGradGuard guard;
    tanh(x);
  }
  EXPECT_EQ(tape.size(), 1u);
}

TEST(Tape, GradientShapeMatchesData) {
  Rng rng(13);
  const Tensor x = random_tensor(rng, {3, 2});
  Tape tape;
  tape.backward(sum(tanh(x)));
  EXPECT_EQ(x.grad().size(), x.numel());
}
