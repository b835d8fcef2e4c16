#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "catn/error.hpp"
#include "catn/train.hpp"
#include "support/fixtures.hpp"

using namespace catn;
using namespace catn::train;
using catn::testing::tiny_config;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<text::SentencePair> small_corpus() {
  return {{{4, 5, 6}, {4, 5, 6}}, {{7, 8}, {7, 4}}, {{5, 5, 4, 6}, {6, 5}}, {{8}, {4, 7, 7}}};
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST(XentLoss, UniformLogitsGiveLogVocab) {
  const std::vector<int> targets{1, 2, 3, 0, 4, 2};
  const Tensor mask = Tensor::full({2, 3}, 1.0);
  EXPECT_NEAR(xent_loss(Tensor::zeros({2, 3, 11}), targets, mask).item(), std::log(11.0), 1e-15);
}

TEST(XentLoss, LargeMarginApproachesZero) {
  const std::vector<int> targets{2};
  const Tensor mask = Tensor::full({1}, 1.0);
  double previous = 1e300;
  for (double margin : {1.0, 5.0, 20.0, 60.0}) {
    const double loss = xent_loss(Tensor::from({1, 3}, {0, 0, margin}), targets, mask).item();
    EXPECT_LT(loss, previous);
    previous = loss;
  }
  EXPECT_LT(previous, 1e-25);
}

TEST(XentLoss, PaddingPositionsAreExcluded) {
  const Tensor logits = Tensor::from({1, 2, 3}, {0.3, -1, 2, 0.5, 0.1, -0.2});
  const std::vector<int> targets{2, 1};
  const Tensor one = Tensor::from({1, 2}, {1, 0});
  const Tensor solo = Tensor::from({1, 1, 3}, {0.3, -1, 2});
  const std::vector<int> solo_target{2};
  EXPECT_NEAR(xent_loss(logits, targets, one).item(), xent_loss(solo, solo_target, Tensor::full({1, 1}, 1.0)).item(),
              1e-12);
  EXPECT_THROW(xent_loss(logits, targets, Tensor::zeros({1, 2})), EmptyInputError);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParamStore store;
  Tensor p = store.add("p", Tensor::from({3}, {1, -2, 3}));
  p.zero_grad();
  (void)p.impl()->grad_buffer();
  AdamState state(store);
  TrainConfig c;
  adam_update(store, state, c);
  EXPECT_EQ(p.values(), (std::vector<double>{1, -2, 3}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore store;
  Tensor p = store.add("p", Tensor::from({3}, {1, -2, 3}));
  {
    Tape tape;
    tape.backward(sum(mul(p, Tensor::from({3}, {0.5, -3.0, 0.01}))));
  }
  AdamState state(store);
  TrainConfig c;
  c.lr = 0.1;
  adam_update(store, state, c);
  EXPECT_NEAR(p.at(0), 1 - 0.1, 1e-6);
  EXPECT_NEAR(p.at(1), -2 + 0.1, 1e-6);
  EXPECT_NEAR(p.at(2), 3 - 0.1, 1e-5);
}

TEST(Adam, ClipsGlobalGradientNorm) {
  ParamStore store;
  Tensor p = store.add("p", Tensor::from({2}, {0, 0}));
  {
    Tape tape;
    tape.backward(sum(mul(p, Tensor::from({2}, {30, 40}))));
  }
  AdamState state(store);
  TrainConfig c;
  EXPECT_DOUBLE_EQ(adam_update(store, state, c), 50.0);
  // After clipping to 5 the first moment holds 0.1 * (3, 4).
  EXPECT_NEAR(state.m[0][0], 0.3, 1e-12);
  EXPECT_NEAR(state.m[0][1], 0.4, 1e-12);
}

TEST(Adam, MinimizesQuadraticBowl) {
  ParamStore store;
  Tensor x = store.add("x", Tensor::from({4}, {3, -1, 0.5, 2}));
  const Tensor center = Tensor::from({4}, {1, 2, -1, 0});
  AdamState state(store);
  TrainConfig c;
  c.lr = 0.05;
  double loss = 1e300;
  std::size_t steps = 0;
  for (; steps < 2000 && loss > 1e-6; ++steps) {
    store.zero_grad();
    Tape tape;
    const Tensor d = sub(x, center);
    const Tensor l = sum(mul(d, d));
    loss = l.item();
    tape.backward(l);
    adam_update(store, state, c);
  }
  EXPECT_LE(loss, 1e-6);
  EXPECT_LE(steps, 2000u);
}

TEST(Train, RepeatedSingleBatchLowersLoss) {
  model::Model m(tiny_config(model::Architecture::AttnAttn), 1);
  const std::vector<text::SentencePair> one{{{4, 5, 6}, {6, 5, 4}}};
  TrainConfig c;
  c.epochs = 200;
  c.lr = 0.01;
  const auto log = train::train(m, one, c);
  ASSERT_EQ(log.size(), 200u);
  EXPECT_LT(log.back().loss, log.front().loss);
}

TEST(Train, SameSeedGivesIdenticalLogsAndCheckpoints) {
  TempDir a("catn_train_a"), b("catn_train_b");
  const auto corpus = small_corpus();
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 3;
  c.seed = 7;
  for (const auto* dir : {&a, &b}) {
    model::Model m(tiny_config(model::Architecture::FinalCtx), c.seed);
    TrainOptions o;
    o.out_dir = dir->path;
    train::train(m, corpus, c, o);
  }
  EXPECT_EQ(slurp(a.path / "loss.csv"), slurp(b.path / "loss.csv"));
  EXPECT_EQ(slurp(a.path / "last.ckpt"), slurp(b.path / "last.ckpt"));
}

TEST(Train, WritesLossLogAndPerEpochCheckpoints) {
  TempDir dir("catn_train_files");
  const auto corpus = small_corpus();
  TrainConfig c;
  c.epochs = 4;
  c.batch_size = 3;
  model::Model m(tiny_config(model::Architecture::Attn), 2);
  TrainOptions o;
  o.out_dir = dir.path;
  o.save_every = 2;
  std::vector<std::size_t> epochs;
  o.on_epoch = [&](const EpochSummary& s, const model::Model&) {
    epochs.push_back(s.epoch);
    EXPECT_TRUE(std::filesystem::exists(dir.path / "last.ckpt"));
    return true;
  };
  const auto log = train::train(m, corpus, c, o);
  EXPECT_EQ(epochs, (std::vector<std::size_t>{1, 2, 3, 4}));
  EXPECT_TRUE(std::filesystem::exists(dir.path / "epoch-0002.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir.path / "epoch-0004.ckpt"));
  EXPECT_FALSE(std::filesystem::exists(dir.path / "epoch-0003.ckpt"));

  std::istringstream csv(slurp(dir.path / "loss.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "epoch,step,loss");
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    std::size_t epoch = 0, step = 0;
    double loss = 0;
    ASSERT_EQ(std::sscanf(line.c_str(), "%zu,%zu,%lf", &epoch, &step, &loss), 3);
    EXPECT_EQ(step, rows + 1);
    EXPECT_EQ(loss, log[rows].loss);
    ++rows;
  }
  EXPECT_EQ(rows, 8u);

  // save -> load -> save is byte-identical
  const model::Checkpoint ck = model::load_checkpoint(dir.path / "last.ckpt");
  EXPECT_EQ(ck.meta.at("epoch"), 4);
  EXPECT_EQ(ck.meta.at("train").at("epochs"), 4);
  const model::Model back = model::model_from_checkpoint(ck);
  model::save_checkpoint(dir.path / "again.ckpt", back, ck.meta);
  EXPECT_EQ(slurp(dir.path / "again.ckpt"), slurp(dir.path / "last.ckpt"));
}

TEST(Train, CallbackCanStopEarly) {
  model::Model m(tiny_config(model::Architecture::MaxPool), 3);
  TrainConfig c;
  c.epochs = 50;
  TrainOptions o;
  o.on_epoch = [](const EpochSummary& s, const model::Model&) { return s.epoch < 2; };
  EXPECT_EQ(train::train(m, small_corpus(), c, o).back().epoch, 2u);
}

TEST(Train, NanLossAbortsWithDivergenceError) {
  model::Model m(tiny_config(model::Architecture::Final), 3);
  Tensor w = m.params().get("decoder.output_b");
  w.data()[0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig c;
  c.epochs = 2;
  EXPECT_THROW(train::train(m, small_corpus(), c), DivergenceError);
}

TEST(Train, EmptyCorpusIsError) {
  model::Model m(tiny_config(model::Architecture::Final), 3);
  EXPECT_THROW(train::train(m, {}, TrainConfig{}), EmptyInputError);
}

TEST(TrainConfig, JsonRoundTripRejectsUnknownKeys) {
  TrainConfig c;
  c.lr = 0.003;
  c.seed = 11;
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_THROW(TrainConfig::from_json({{"momentum", 0.9}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"batch_size", 0}}), ConfigError);
}
