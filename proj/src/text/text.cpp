#include "catn/text.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace catn::text {

namespace {

const std::vector<std::string> kReservedTokens = {"<pad>", "<unk>", "<s>", "</s>"};

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;  // stray continuation byte: keep it as its own symbol
}

}  // namespace

Sentence tokenize(std::string_view line, bool lowercase) {
  Sentence out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    std::size_t j = i;
    while (j < line.size() && !is_space(line[j])) ++j;
    if (j > i) {
      std::string tok(line.substr(i, j - i));
      if (lowercase) {
        for (char& c : tok) {
          if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        }
      }
      out.push_back(std::move(tok));
    }
    i = j;
  }
  return out;
}

std::string join(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

// ---- Vocabulary -------------------------------------------------------------

Vocabulary Vocabulary::build(std::span<const Sentence> corpus, std::size_t max_size) {
  if (max_size < kNumReserved + 1) {
    throw std::invalid_argument("build_vocab: max_size must be at least 5, got " + std::to_string(max_size));
  }
  std::map<std::string, std::size_t> counts;
  for (const Sentence& s : corpus) {
    for (const std::string& t : s) ++counts[t];
  }
  if (counts.empty()) throw EmptyInputError("build_vocab: corpus has no tokens");

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

  std::vector<std::string> tokens = kReservedTokens;
  for (const auto& [tok, n] : ranked) {
    if (tokens.size() >= max_size) break;
    if (std::find(kReservedTokens.begin(), kReservedTokens.end(), tok) != kReservedTokens.end()) continue;
    tokens.push_back(tok);
  }
  return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kNumReserved ||
      !std::equal(kReservedTokens.begin(), kReservedTokens.end(), tokens.begin())) {
    throw DataError("vocabulary must start with the reserved tokens <pad> <unk> <s> </s>");
  }
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.ids_.emplace(v.tokens_[i], static_cast<int>(i)).second) {
      throw DataError("vocabulary lists token '" + v.tokens_[i] + "' twice");
    }
  }
  return v;
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) return tokens_[kUnk];
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const Sentence& sentence) const {
  std::vector<int> ids;
  ids.reserve(sentence.size());
  for (const std::string& t : sentence) ids.push_back(id(t));
  return ids;
}

Sentence Vocabulary::decode(std::span<const int> ids) const {
  Sentence out;
  for (int i : ids) {
    if (i == kEos) break;
    if (i == kPad || i == kBos) continue;
    out.push_back(token(i));
  }
  return out;
}

// ---- BPE ------------------------------------------------------------------

std::vector<std::string> initial_symbols(std::string_view word) {
  std::vector<std::string> symbols;
  std::size_t i = 0;
  while (i < word.size()) {
    const std::size_t n = std::min(utf8_length(static_cast<unsigned char>(word[i])), word.size() - i);
    symbols.emplace_back(word.substr(i, n));
    i += n;
  }
  if (!symbols.empty()) symbols.back() += kEndOfWord;
  return symbols;
}

std::string bpe_join(std::span<const std::string> tokens) {
  std::string joined;
  for (const std::string& t : tokens) joined += t;
  std::string out;
  std::size_t pos = 0;
  while (pos < joined.size()) {
    const std::size_t at = joined.find(kEndOfWord, pos);
    if (at == std::string::npos) {
      out += joined.substr(pos);
      break;
    }
    out += joined.substr(pos, at - pos);
    out += ' ';
    pos = at + kEndOfWord.size();
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

BpeModel::BpeModel(std::vector<MergeRule> merges) : merges_(std::move(merges)) {
  for (std::size_t i = 0; i < merges_.size(); ++i) rank_.emplace(std::make_pair(merges_[i].left, merges_[i].right), i);
}

namespace {

// Replaces every non-overlapping (left, right) occurrence, scanning left to right.
bool merge_pair(std::vector<std::string>& symbols, const std::string& left, const std::string& right) {
  bool changed = false;
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      out.push_back(left + right);
      ++i;
      changed = true;
    } else {
      out.push_back(std::move(symbols[i]));
    }
  }
  symbols = std::move(out);
  return changed;
}

}  // namespace

BpeModel BpeModel::learn(std::span<const Sentence> corpus, std::size_t num_merges) {
  std::map<std::string, std::size_t> word_counts;
  for (const Sentence& s : corpus) {
    for (const std::string& w : s) ++word_counts[w];
  }
  struct Word {
    std::vector<std::string> symbols;
    std::size_t count;
  };
  std::vector<Word> words;
  words.reserve(word_counts.size());
  for (const auto& [w, n] : word_counts) words.push_back({initial_symbols(w), n});

  std::vector<MergeRule> merges;
  while (merges.size() < num_merges) {
    std::map<std::pair<std::string, std::string>, std::size_t> pairs;
    for (const Word& w : words) {
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) pairs[{w.symbols[i], w.symbols[i + 1]}] += w.count;
    }
    auto best = pairs.end();
    for (auto it = pairs.begin(); it != pairs.end(); ++it) {
      if (best == pairs.end() || it->second > best->second) best = it;
    }
    if (best == pairs.end() || best->second < 2) break;
    const auto [left, right] = best->first;
    for (Word& w : words) merge_pair(w.symbols, left, right);
    merges.push_back({left, right});
  }
  return BpeModel(std::move(merges));
}

std::vector<std::string> BpeModel::segment(std::string_view word) const {
  std::vector<std::string> symbols = initial_symbols(word);
  while (symbols.size() > 1) {
    std::size_t best_rank = merges_.size();
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = rank_.find({symbols[i], symbols[i + 1]});
      if (it != rank_.end() && it->second < best_rank) best_rank = it->second;
    }
    if (best_rank == merges_.size()) break;
    merge_pair(symbols, merges_[best_rank].left, merges_[best_rank].right);
  }
  return symbols;
}

Sentence BpeModel::apply(const Sentence& words) const {
  Sentence out;
  for (const std::string& w : words) {
    for (std::string& s : segment(w)) out.push_back(std::move(s));
  }
  return out;
}

BpeModel BpeModel::read(std::istream& in) {
  std::vector<MergeRule> merges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t sp = line.find(' ');
    if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size() || line.find(' ', sp + 1) != std::string::npos) {
      throw DataError("BPE merge file line " + std::to_string(lineno) + ": expected \"left right\"");
    }
    merges.push_back({line.substr(0, sp), line.substr(sp + 1)});
  }
  return BpeModel(std::move(merges));
}

BpeModel BpeModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  return read(in);
}

void BpeModel::write(std::ostream& out) const {
  for (const MergeRule& m : merges_) out << m.left << ' ' << m.right << '\n';
}

void BpeModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write(out);
}

// ---- batching ----------------------------------------------------------------

namespace {

void fill_rows(std::span<const std::vector<int>*> seqs, std::vector<int>& ids, std::size_t& len, Tensor& mask) {
  len = 0;
  for (const auto* s : seqs) len = std::max(len, s->size() + 2);
  const std::size_t rows = seqs.size();
  ids.assign(rows * len, kPad);
  std::vector<double> m(rows * len, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& s = *seqs[r];
    ids[r * len] = kBos;
    for (std::size_t t = 0; t < s.size(); ++t) ids[r * len + 1 + t] = s[t];
    ids[r * len + 1 + s.size()] = kEos;
    for (std::size_t t = 0; t < s.size() + 2; ++t) m[r * len + t] = 1.0;
  }
  mask = Tensor::from({rows, len}, std::move(m));
}

}  // namespace

Batch make_batch(std::span<const SentencePair> corpus, std::span<const std::size_t> indices) {
  if (indices.empty()) throw EmptyInputError("make_batch: no rows");
  Batch b;
  b.rows = indices.size();
  b.origin.assign(indices.begin(), indices.end());
  std::vector<const std::vector<int>*> src, tgt;
  for (std::size_t i : indices) {
    if (i >= corpus.size()) throw DimensionError("make_batch: index out of range");
    src.push_back(&corpus[i].source);
    tgt.push_back(&corpus[i].target);
  }
  fill_rows(src, b.source, b.source_len, b.source_mask);
  fill_rows(tgt, b.target, b.target_len, b.target_mask);
  return b;
}

Batch make_batch(std::span<const SentencePair> corpus) {
  std::vector<std::size_t> all(corpus.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return make_batch(corpus, all);
}

Batch make_source_batch(std::span<const std::vector<int>> sources) {
  if (sources.empty()) throw EmptyInputError("make_source_batch: no rows");
  Batch b;
  b.rows = sources.size();
  std::vector<const std::vector<int>*> src;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    src.push_back(&sources[i]);
    b.origin.push_back(i);
  }
  fill_rows(src, b.source, b.source_len, b.source_mask);
  return b;
}

BatchIterator::BatchIterator(std::span<const SentencePair> corpus, std::size_t batch_size, std::uint64_t seed,
                             bool shuffle)
    : corpus_(corpus), batch_size_(batch_size), shuffle_(shuffle), rng_(seed) {
  if (batch_size == 0) throw std::invalid_argument("batch_iter: batch_size must be at least 1");
}

std::vector<Batch> BatchIterator::next_epoch() {
  std::vector<std::size_t> order(corpus_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (shuffle_) rng_.shuffle(std::span<std::size_t>(order));
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size_) {
    const std::size_t n = std::min(batch_size_, order.size() - start);
    batches.push_back(make_batch(corpus_, std::span<const std::size_t>(order).subspan(start, n)));
  }
  return batches;
}

ParallelText load_parallel(const std::filesystem::path& src, const std::filesystem::path& tgt, bool lowercase) {
  const auto src_lines = read_lines(src);
  const auto tgt_lines = read_lines(tgt);
  if (src_lines.size() != tgt_lines.size()) {
    throw DataError("parallel corpus is misaligned: " + std::to_string(src_lines.size()) + " source vs " +
                    std::to_string(tgt_lines.size()) + " target lines");
  }
  ParallelText text;
  for (std::size_t i = 0; i < src_lines.size(); ++i) {
    text.source.push_back(tokenize(src_lines[i], lowercase));
    text.target.push_back(tokenize(tgt_lines[i], lowercase));
  }
  return text;
}

ParallelText filter_by_length(const ParallelText& text, std::size_t max_tokens) {
  ParallelText out;
  for (std::size_t i = 0; i < text.source.size(); ++i) {
    if (text.source[i].empty() || text.target[i].empty()) continue;
    if (text.source[i].size() > max_tokens || text.target[i].size() > max_tokens) continue;
    out.source.push_back(text.source[i]);
    out.target.push_back(text.target[i]);
  }
  return out;
}

}  // namespace catn::text
