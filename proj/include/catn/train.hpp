#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "catn/model.hpp"
#include "catn/params.hpp"
#include "catn/text.hpp"
#include "json.hpp"

namespace catn::train {

struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip = 5.0;  // global gradient-norm threshold; <= 0 disables clipping
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  // Unknown keys are rejected with ConfigError.
  static TrainConfig from_json(const nlohmann::json& j);
};

// Mean negative log-likelihood over positions with mask 1. logits is [N,T,V]
// (or [N,V] with targets/mask of length N).
Tensor xent_loss(const Tensor& logits, std::span<const int> targets, const Tensor& mask);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;

  explicit AdamState(const ParamStore& params);
};

// Clips the global gradient norm to config.clip, then applies one
// bias-corrected Adam step with config.lr. Returns the pre-clip norm.
double adam_update(ParamStore& params, AdamState& state, const TrainConfig& config);

struct LossRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
};

void write_loss_csv(std::ostream& out, std::span<const LossRecord> records);

struct EpochSummary {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
};

struct TrainOptions {
  // When set, DIR/last.ckpt is rewritten after every epoch and DIR/loss.csv
  // holds the full loss log.
  std::filesystem::path out_dir;
  // Additional epoch-numbered checkpoints every N epochs (0 = none).
  std::size_t save_every = 0;
  // Extra metadata stored in every checkpoint next to the model config.
  nlohmann::json meta = nlohmann::json::object();
  // Called after each epoch; returning false stops training.
  std::function<bool(const EpochSummary&, const model::Model&)> on_epoch;
};

// Throws EmptyInputError on an empty corpus and DivergenceError when the loss
// becomes NaN or infinite.
std::vector<LossRecord> train(model::Model& model, std::span<const text::SentencePair> corpus,
                              const TrainConfig& config, const TrainOptions& options = {});

}  // namespace catn::train
