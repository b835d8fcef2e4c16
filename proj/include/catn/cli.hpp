#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "catn/clusters.hpp"
#include "catn/model.hpp"
#include "catn/text.hpp"
#include "catn/train.hpp"

namespace catn::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2 };

struct DataConfig {
  std::string src;
  std::string tgt;
  bool lowercase = false;
  std::size_t bpe_merges = 0;  // 0 keeps word-level tokens
  std::size_t src_vocab = 30000;
  std::size_t tgt_vocab = 30000;
  std::size_t max_len = 60;    // longer training pairs are dropped

  nlohmann::json to_json() const;
  static DataConfig from_json(const nlohmann::json& j);
};

// Everything needed to rebuild a run from its corpus.
struct RunConfig {
  model::ModelConfig model;
  train::TrainConfig train;
  DataConfig data;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  // Unknown keys anywhere in the schema are a ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
};

// Tokenization, optional BPE and vocabularies, as frozen at training time.
class Preprocessor {
 public:
  static Preprocessor fit(const DataConfig& config, const text::ParallelText& corpus);
  static Preprocessor from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  text::Sentence segment_source(const std::string& line) const;
  text::Sentence segment_target(const std::string& line) const;
  std::vector<int> encode_source(const std::string& line) const;
  std::vector<int> encode_target(const std::string& line) const;
  std::string decode_target(std::span<const int> ids) const;

  const text::Vocabulary& src_vocab() const { return src_vocab_; }
  const text::Vocabulary& tgt_vocab() const { return tgt_vocab_; }

 private:
  bool lowercase_ = false;
  bool use_bpe_ = false;
  text::BpeModel src_bpe_, tgt_bpe_;
  text::Vocabulary src_vocab_, tgt_vocab_;
};

// A trained model together with its preprocessing and run configuration.
struct LoadedModel {
  model::Model model;
  Preprocessor prep;
  nlohmann::json run;
};

LoadedModel load_model(const std::filesystem::path& ckpt);

std::vector<std::string> translate_lines(const LoadedModel& m, std::span<const std::string> lines,
                                         std::size_t max_len, std::size_t batch_size = 32);

// Lines are "label<TAB>sentence" or a bare sentence, labeled by its 1-based
// line number. Throws UnsupportedArchitectureError for ATTN.
eval::EmbeddingSet embed_lines(const LoadedModel& m, std::span<const std::string> lines, std::size_t batch_size = 32);

// Parses argv (including the program name) and runs one command.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace catn::cli
