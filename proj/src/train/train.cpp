#include "catn/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "catn/error.hpp"

namespace catn::train {

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs}, {"batch_size", batch_size}, {"lr", lr},     {"beta1", beta1},
          {"beta2", beta2},   {"eps", eps},               {"clip", clip}, {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  static const std::set<std::string> known = {"epochs", "batch_size", "lr", "beta1", "beta2", "eps", "clip", "seed"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown training config key '" + key + "'");
  }
  TrainConfig c;
  auto count = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_number_unsigned()) throw ConfigError(std::string("'") + key + "' must be a non-negative integer");
    field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  auto real = [&](const char* key, double& field) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_number()) throw ConfigError(std::string("'") + key + "' must be a number");
    field = j.at(key).get<double>();
  };
  count("epochs", c.epochs);
  count("batch_size", c.batch_size);
  count("seed", c.seed);
  real("lr", c.lr);
  real("beta1", c.beta1);
  real("beta2", c.beta2);
  real("eps", c.eps);
  real("clip", c.clip);
  if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(c.lr > 0)) throw ConfigError("lr must be positive");
  return c;
}

Tensor xent_loss(const Tensor& logits, std::span<const int> targets, const Tensor& mask) {
  const std::size_t vocab = logits.shape().back();
  const std::size_t rows = logits.numel() / vocab;
  if (targets.size() != rows || mask.numel() != rows) {
    throw DimensionError("xent_loss: logits " + shape_str(logits.shape()) + " do not match " +
                         std::to_string(targets.size()) + " targets");
  }
  return cross_entropy(reshape(logits, {rows, vocab}), targets, mask.values());
}

AdamState::AdamState(const ParamStore& params) {
  for (const auto& [name, t] : params.items()) {
    m.emplace_back(t.numel(), 0.0);
    v.emplace_back(t.numel(), 0.0);
  }
}

double adam_update(ParamStore& params, AdamState& state, const TrainConfig& config) {
  double norm2 = 0.0;
  for (const auto& [name, t] : params.items()) {
    for (double g : t.grad()) norm2 += g * g;
  }
  const double norm = std::sqrt(norm2);
  const double factor = config.clip > 0 && norm > config.clip ? config.clip / norm : 1.0;

  ++state.step;
  const double step = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(config.beta1, step);
  const double correct2 = 1.0 - std::pow(config.beta2, step);
  std::size_t index = 0;
  for (const auto& [name, param] : params.items()) {
    Tensor t = param;
    const auto grad = t.grad();
    auto& m = state.m[index];
    auto& v = state.v[index];
    ++index;
    if (grad.empty()) continue;
    auto values = t.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i] * factor;
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      values[i] -= config.lr * (m[i] / correct1) / (std::sqrt(v[i] / correct2) + config.eps);
    }
  }
  return norm;
}

namespace {

void write_rows(std::ostream& out, std::span<const LossRecord> records) {
  char buf[64];
  for (const LossRecord& r : records) {
    std::snprintf(buf, sizeof buf, "%.17g", r.loss);
    out << r.epoch << ',' << r.step << ',' << buf << '\n';
  }
}

}  // namespace

void write_loss_csv(std::ostream& out, std::span<const LossRecord> records) {
  out << "epoch,step,loss\n";
  write_rows(out, records);
}

std::vector<LossRecord> train(model::Model& model, std::span<const text::SentencePair> corpus,
                              const TrainConfig& config, const TrainOptions& options) {
  if (corpus.empty()) throw EmptyInputError("train: empty corpus");
  std::ofstream csv;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    csv.open(options.out_dir / "loss.csv", std::ios::trunc);
    if (!csv) throw DataError("cannot write " + (options.out_dir / "loss.csv").string());
    csv << "epoch,step,loss\n";
  }

  text::BatchIterator batches(corpus, config.batch_size, config.seed);
  AdamState state(model.params());
  std::vector<LossRecord> log;
  nlohmann::json meta = options.meta.is_object() ? options.meta : nlohmann::json::object();
  meta["train"] = config.to_json();

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double total = 0.0;
    std::size_t count = 0;
    const std::size_t first = log.size();
    for (const text::Batch& batch : batches.next_epoch()) {
      model.params().zero_grad();
      Tape tape;
      const Tensor loss = model.loss(batch);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw DivergenceError("train: loss became " + std::to_string(value) + " at epoch " + std::to_string(epoch) +
                              ", step " + std::to_string(log.size() + 1) + "; try a lower learning rate");
      }
      tape.backward(loss);
      adam_update(model.params(), state, config);
      log.push_back({epoch, log.size() + 1, value});
      total += value;
      ++count;
    }

    if (!options.out_dir.empty()) {
      meta["epoch"] = epoch;
      model::save_checkpoint(options.out_dir / "last.ckpt", model, meta);
      if (options.save_every > 0 && epoch % options.save_every == 0) {
        char name[32];
        std::snprintf(name, sizeof name, "epoch-%04zu.ckpt", epoch);
        model::save_checkpoint(options.out_dir / name, model, meta);
      }
      write_rows(csv, std::span(log).subspan(first));
      csv.flush();
    }
    if (options.on_epoch && !options.on_epoch({epoch, total / static_cast<double>(count)}, model)) break;
  }
  model.params().zero_grad();
  return log;
}

}  // namespace catn::train
