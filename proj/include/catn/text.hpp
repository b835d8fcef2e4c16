#pragma once

// Corpus loading, vocabularies, byte-pair encoding and padded mini-batches.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "catn/random.hpp"
#include "catn/tensor.hpp"

namespace catn::text {

inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;
inline constexpr int kNumReserved = 4;

inline constexpr std::string_view kEndOfWord = "</w>";

using Sentence = std::vector<std::string>;

// Whitespace tokenization; ASCII lowercasing when requested.
Sentence tokenize(std::string_view line, bool lowercase = false);
std::string join(std::span<const std::string> tokens);

// Reads one sentence per line (UTF-8). Throws DataError when unreadable.
std::vector<std::string> read_lines(const std::filesystem::path& path);

class Vocabulary {
 public:
  // Keeps the (max_size - 4) most frequent tokens, ties broken
  // lexicographically, after the four reserved ids.
  static Vocabulary build(std::span<const Sentence> corpus, std::size_t max_size);
  // Rebuilds from the full id-ordered token list (reserved entries included).
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  int id(std::string_view token) const;
  const std::string& token(int id) const;
  bool contains(std::string_view token) const;

  std::vector<int> encode(const Sentence& sentence) const;
  // Drops PAD/BOS and stops at the first EOS.
  Sentence decode(std::span<const int> ids) const;

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

struct MergeRule {
  std::string left;
  std::string right;
  bool operator==(const MergeRule&) const = default;
};

class BpeModel {
 public:
  BpeModel() = default;
  explicit BpeModel(std::vector<MergeRule> merges);

  // Greedy most-frequent-pair merging over word-internal symbols with an
  // end-of-word marker on the final symbol. Ties go to the lexicographically
  // smallest pair; learning stops early when no pair occurs twice.
  static BpeModel learn(std::span<const Sentence> corpus, std::size_t num_merges);

  // One merge per line, "left right".
  static BpeModel read(std::istream& in);
  static BpeModel load(const std::filesystem::path& path);
  void write(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;

  std::vector<std::string> segment(std::string_view word) const;
  Sentence apply(const Sentence& words) const;

  const std::vector<MergeRule>& merges() const { return merges_; }

 private:
  std::vector<MergeRule> merges_;
  std::map<std::pair<std::string, std::string>, std::size_t> rank_;
};

// Splits a word into UTF-8 code points, marking the last with "</w>".
std::vector<std::string> initial_symbols(std::string_view word);

// Concatenates subword tokens and turns end-of-word markers back into spaces.
std::string bpe_join(std::span<const std::string> tokens);

struct SentencePair {
  std::vector<int> source;  // ids without BOS/EOS
  std::vector<int> target;
};

// Rows are BOS tokens EOS followed by PAD; masks are 1 exactly on non-PAD.
struct Batch {
  std::size_t rows = 0;
  std::size_t source_len = 0;
  std::size_t target_len = 0;
  std::vector<int> source;  // rows x source_len
  std::vector<int> target;  // rows x target_len
  Tensor source_mask;       // rows x source_len
  Tensor target_mask;       // rows x target_len
  std::vector<std::size_t> origin;  // corpus index of each row

  int source_at(std::size_t r, std::size_t t) const { return source[r * source_len + t]; }
  int target_at(std::size_t r, std::size_t t) const { return target[r * target_len + t]; }
};

Batch make_batch(std::span<const SentencePair> corpus, std::span<const std::size_t> indices);
Batch make_batch(std::span<const SentencePair> corpus);
// Source-only batch for encoding/translation.
Batch make_source_batch(std::span<const std::vector<int>> sources);

// Deterministic epoch-wise iteration: every epoch visits each pair exactly
// once in an order drawn from the seeded generator.
class BatchIterator {
 public:
  BatchIterator(std::span<const SentencePair> corpus, std::size_t batch_size, std::uint64_t seed,
                bool shuffle = true);
  std::vector<Batch> next_epoch();

 private:
  std::span<const SentencePair> corpus_;
  std::size_t batch_size_;
  bool shuffle_;
  Rng rng_;
};

struct ParallelText {
  std::vector<Sentence> source;
  std::vector<Sentence> target;
};

ParallelText load_parallel(const std::filesystem::path& src, const std::filesystem::path& tgt, bool lowercase);

// Drops pairs where either side exceeds max_tokens.
ParallelText filter_by_length(const ParallelText& text, std::size_t max_tokens);

}  // namespace catn::text
