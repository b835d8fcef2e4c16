#include <fstream>
#include <set>

#include "catn/cli.hpp"
#include "catn/error.hpp"

namespace catn::cli {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read_field(const json& j, const char* key, T& field) {
  if (!j.contains(key)) return;
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!j.at(key).is_number_unsigned()) throw ConfigError(std::string("'") + key + "' must be a non-negative integer");
    }
    field = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("'") + key + "' has the wrong type");
  }
}

json merges_to_json(const text::BpeModel& bpe) {
  json out = json::array();
  for (const auto& m : bpe.merges()) out.push_back({m.left, m.right});
  return out;
}

text::BpeModel merges_from_json(const json& j) {
  std::vector<text::MergeRule> merges;
  for (const auto& m : j) merges.push_back({m.at(0).get<std::string>(), m.at(1).get<std::string>()});
  return text::BpeModel(std::move(merges));
}

}  // namespace

json DataConfig::to_json() const {
  return {{"src", src},
          {"tgt", tgt},
          {"lowercase", lowercase},
          {"bpe_merges", bpe_merges},
          {"src_vocab", src_vocab},
          {"tgt_vocab", tgt_vocab},
          {"max_len", max_len}};
}

DataConfig DataConfig::from_json(const json& j) {
  reject_unknown(j, {"src", "tgt", "lowercase", "bpe_merges", "src_vocab", "tgt_vocab", "max_len"}, "data config");
  DataConfig c;
  read_field(j, "src", c.src);
  read_field(j, "tgt", c.tgt);
  read_field(j, "lowercase", c.lowercase);
  read_field(j, "bpe_merges", c.bpe_merges);
  read_field(j, "src_vocab", c.src_vocab);
  read_field(j, "tgt_vocab", c.tgt_vocab);
  read_field(j, "max_len", c.max_len);
  if (c.src_vocab < 5 || c.tgt_vocab < 5) throw ConfigError("vocabulary limits must be at least 5");
  if (c.max_len == 0) throw ConfigError("max_len must be positive");
  return c;
}

json RunConfig::to_json() const {
  return {{"model", model.to_json()}, {"train", train.to_json()}, {"data", data.to_json()}, {"seed", seed}};
}

RunConfig RunConfig::from_json(const json& j) {
  reject_unknown(j, {"model", "train", "data", "seed"}, "run config");
  RunConfig c;
  if (j.contains("model")) c.model = model::ModelConfig::from_json(j.at("model"));
  if (j.contains("train")) c.train = train::TrainConfig::from_json(j.at("train"));
  if (j.contains("data")) c.data = DataConfig::from_json(j.at("data"));
  read_field(j, "seed", c.seed);
  c.train.seed = c.seed;
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

Preprocessor Preprocessor::fit(const DataConfig& config, const text::ParallelText& corpus) {
  Preprocessor p;
  p.lowercase_ = config.lowercase;
  p.use_bpe_ = config.bpe_merges > 0;
  std::vector<text::Sentence> src = corpus.source, tgt = corpus.target;
  if (p.use_bpe_) {
    p.src_bpe_ = text::BpeModel::learn(src, config.bpe_merges);
    p.tgt_bpe_ = text::BpeModel::learn(tgt, config.bpe_merges);
    for (auto& s : src) s = p.src_bpe_.apply(s);
    for (auto& s : tgt) s = p.tgt_bpe_.apply(s);
  }
  p.src_vocab_ = text::Vocabulary::build(src, config.src_vocab);
  p.tgt_vocab_ = text::Vocabulary::build(tgt, config.tgt_vocab);
  return p;
}

json Preprocessor::to_json() const {
  json j = {{"lowercase", lowercase_},
            {"bpe", use_bpe_},
            {"src_vocab", src_vocab_.tokens()},
            {"tgt_vocab", tgt_vocab_.tokens()}};
  if (use_bpe_) {
    j["src_merges"] = merges_to_json(src_bpe_);
    j["tgt_merges"] = merges_to_json(tgt_bpe_);
  }
  return j;
}

Preprocessor Preprocessor::from_json(const json& j) {
  try {
    Preprocessor p;
    p.lowercase_ = j.at("lowercase").get<bool>();
    p.use_bpe_ = j.at("bpe").get<bool>();
    p.src_vocab_ = text::Vocabulary::from_tokens(j.at("src_vocab").get<std::vector<std::string>>());
    p.tgt_vocab_ = text::Vocabulary::from_tokens(j.at("tgt_vocab").get<std::vector<std::string>>());
    if (p.use_bpe_) {
      p.src_bpe_ = merges_from_json(j.at("src_merges"));
      p.tgt_bpe_ = merges_from_json(j.at("tgt_merges"));
    }
    return p;
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint preprocessing metadata is malformed: ") + e.what());
  }
}

text::Sentence Preprocessor::segment_source(const std::string& line) const {
  const text::Sentence words = text::tokenize(line, lowercase_);
  return use_bpe_ ? src_bpe_.apply(words) : words;
}

text::Sentence Preprocessor::segment_target(const std::string& line) const {
  const text::Sentence words = text::tokenize(line, lowercase_);
  return use_bpe_ ? tgt_bpe_.apply(words) : words;
}

std::vector<int> Preprocessor::encode_source(const std::string& line) const {
  return src_vocab_.encode(segment_source(line));
}

std::vector<int> Preprocessor::encode_target(const std::string& line) const {
  return tgt_vocab_.encode(segment_target(line));
}

std::string Preprocessor::decode_target(std::span<const int> ids) const {
  const text::Sentence tokens = tgt_vocab_.decode(ids);
  return use_bpe_ ? text::bpe_join(tokens) : text::join(tokens);
}

LoadedModel load_model(const std::filesystem::path& ckpt) {
  const model::Checkpoint c = model::load_checkpoint(ckpt);
  if (!c.meta.contains("prep")) throw DataError(ckpt.string() + " carries no vocabulary; was it written by `catn train`?");
  return {model::model_from_checkpoint(c), Preprocessor::from_json(c.meta.at("prep")), c.meta.value("run", json::object())};
}

std::vector<std::string> translate_lines(const LoadedModel& m, std::span<const std::string> lines,
                                         std::size_t max_len, std::size_t batch_size) {
  std::vector<std::string> out;
  out.reserve(lines.size());
  NoGradGuard guard;
  for (std::size_t start = 0; start < lines.size(); start += batch_size) {
    std::vector<std::vector<int>> sources;
    for (std::size_t i = start; i < std::min(lines.size(), start + batch_size); ++i) {
      sources.push_back(m.prep.encode_source(lines[i]));
    }
    const model::Decoded d = m.model.greedy_decode(text::make_source_batch(sources), max_len);
    for (const auto& row : d.tokens) out.push_back(m.prep.decode_target(row));
  }
  return out;
}

}  // namespace catn::cli
