#include "catn/architecture.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "catn/error.hpp"

namespace catn::model {

std::string_view to_string(Architecture arch) {
  switch (arch) {
    case Architecture::Attn: return "attn";
    case Architecture::Final: return "final";
    case Architecture::FinalCtx: return "final-ctx";
    case Architecture::AvgPool: return "avgpool";
    case Architecture::MaxPool: return "maxpool";
    case Architecture::AvgPoolCtx: return "avgpool-ctx";
    case Architecture::MaxPoolCtx: return "maxpool-ctx";
    case Architecture::AttnCtx: return "attn-ctx";
    case Architecture::AttnAttn: return "attn-attn";
    case Architecture::TrfAttnAttn: return "trf-attn-attn";
  }
  return "?";
}

Architecture parse_architecture(std::string_view name) {
  std::string norm;
  for (char c : name) norm += c == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (Architecture a : kAllArchitectures) {
    if (to_string(a) == norm) return a;
  }
  throw ConfigError("unknown architecture '" + std::string(name) + "'");
}

bool uses_heads(Architecture arch) {
  return arch == Architecture::AttnCtx || arch == Architecture::AttnAttn || arch == Architecture::TrfAttnAttn;
}

bool exposes_embedding(Architecture arch) { return arch != Architecture::Attn; }

bool has_constant_context(Architecture arch) {
  return arch == Architecture::FinalCtx || arch == Architecture::AvgPoolCtx || arch == Architecture::MaxPoolCtx ||
         arch == Architecture::AttnCtx;
}

bool has_sentence_matrix(Architecture arch) { return uses_heads(arch); }

bool is_transformer(Architecture arch) { return arch == Architecture::TrfAttnAttn; }

namespace {

bool pools_or_final(Architecture arch) {
  return !uses_heads(arch) && arch != Architecture::Attn;
}

}  // namespace

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw ConfigError(std::string(what) + " must be positive");
  };
  positive(src_vocab, "src_vocab");
  positive(tgt_vocab, "tgt_vocab");
  positive(emb_dim, "emb_dim");
  positive(dec_hidden, "dec_hidden");
  positive(attn_hidden, "attn_hidden");
  if (uses_heads(arch)) {
    if (heads == 0) throw ConfigError(std::string(to_string(arch)) + " needs heads >= 1");
    if (size == 0 || size % heads != 0) {
      throw ConfigError("size " + std::to_string(size) + " is not divisible by " + std::to_string(heads) + " heads");
    }
  } else if (heads != 0) {
    throw ConfigError(std::string(to_string(arch)) + " has no attention heads; drop the heads setting");
  }
  if (pools_or_final(arch) && (size < 2 || size % 2 != 0)) {
    throw ConfigError(std::string(to_string(arch)) + " needs an even size (forward + backward units)");
  }
  if (!is_transformer(arch)) positive(encoder_hidden(), "enc_hidden");
  if (is_transformer(arch)) {
    positive(trf_layers, "trf_layers");
    positive(trf_width, "trf_width");
    positive(trf_heads, "trf_heads");
    positive(trf_ff, "trf_ff");
    if (trf_width % trf_heads != 0) {
      throw ConfigError("trf_width " + std::to_string(trf_width) + " is not divisible by " +
                        std::to_string(trf_heads) + " attention heads");
    }
  }
}

std::size_t ModelConfig::encoder_hidden() const { return pools_or_final(arch) ? size / 2 : enc_hidden; }

std::size_t ModelConfig::embedding_size() const { return exposes_embedding(arch) ? size : 0; }

nlohmann::json ModelConfig::to_json() const {
  return {
      {"arch", std::string(to_string(arch))},
      {"src_vocab", src_vocab},
      {"tgt_vocab", tgt_vocab},
      {"emb_dim", emb_dim},
      {"enc_hidden", enc_hidden},
      {"dec_hidden", dec_hidden},
      {"attn_hidden", attn_hidden},
      {"size", size},
      {"heads", heads},
      {"trf_layers", trf_layers},
      {"trf_width", trf_width},
      {"trf_heads", trf_heads},
      {"trf_ff", trf_ff},
  };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  static const std::set<std::string> known = {"arch",       "src_vocab", "tgt_vocab", "emb_dim",   "enc_hidden",
                                              "dec_hidden", "attn_hidden", "size",    "heads",     "trf_layers",
                                              "trf_width",  "trf_heads", "trf_ff"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown model config key '" + key + "'");
  }
  ModelConfig c;
  auto read = [&](const char* key, std::size_t& field) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(std::string("model config '") + key + "' must be a non-negative integer");
    field = v.get<std::size_t>();
  };
  if (j.contains("arch")) {
    if (!j.at("arch").is_string()) throw ConfigError("model config 'arch' must be a string");
    c.arch = parse_architecture(j.at("arch").get<std::string>());
  }
  read("src_vocab", c.src_vocab);
  read("tgt_vocab", c.tgt_vocab);
  read("emb_dim", c.emb_dim);
  read("enc_hidden", c.enc_hidden);
  read("dec_hidden", c.dec_hidden);
  read("attn_hidden", c.attn_hidden);
  read("size", c.size);
  read("heads", c.heads);
  read("trf_layers", c.trf_layers);
  read("trf_width", c.trf_width);
  read("trf_heads", c.trf_heads);
  read("trf_ff", c.trf_ff);
  return c;
}

}  // namespace catn::model
