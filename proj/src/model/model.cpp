#include "catn/model.hpp"

#include <bit>
#include <fstream>

#include "catn/error.hpp"

namespace catn::model {

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const ModelConfig& c = config_;
  if (is_transformer(c.arch)) {
    transformer_ = TransformerParams::create(params_, c, rng);
    return;
  }
  const std::size_t units = 2 * c.encoder_hidden();
  encoder_ = enc::EncoderParams::create(params_, c.src_vocab, c.emb_dim, c.encoder_hidden(), rng);
  if (uses_heads(c.arch)) {
    inner_ = enc::InnerAttentionParams::create(params_, "encoder.inner", units, c.attn_hidden, c.size, c.heads, rng);
  }

  std::size_t context_width = 0, init_width = c.size;
  switch (c.arch) {
    case Architecture::Attn:
      context_width = units;
      init_width = units;
      break;
    case Architecture::AttnAttn:
      context_width = inner_->head_size;
      init_width = 0;
      break;
    case Architecture::FinalCtx:
    case Architecture::AvgPoolCtx:
    case Architecture::MaxPoolCtx:
    case Architecture::AttnCtx:
      context_width = c.size;
      break;
    default:
      break;
  }
  if (init_width > 0) {
    init_w_ = params_.add("decoder.init_w", glorot_uniform(rng, init_width, c.dec_hidden));
    init_b_ = params_.add("decoder.init_b", Tensor::zeros({c.dec_hidden}));
  }
  decoder_ = CgruParams::create(params_, c.tgt_vocab, c.emb_dim, c.dec_hidden, context_width, rng);
  if (c.arch == Architecture::Attn || c.arch == Architecture::AttnAttn) {
    attention_ = AttentionParams::create(params_, "decoder.attention", context_width, c.dec_hidden, c.attn_hidden, rng);
  }
}

Encoded Model::encode(std::span<const int> ids, const Tensor& mask) const {
  Encoded e;
  e.mask = mask;
  if (transformer_) {
    TransformerEncoding t = transformer_encode(*transformer_, ids, mask);
    e.states = t.states;
    e.matrix = t.matrix;
    e.embedding = e.matrix.flat();
    e.layers = std::move(t.layers);
    return e;
  }
  const enc::EncoderStates h = enc::encode_bidirectional(ids, mask, encoder_);
  e.states = h.states;
  switch (config_.arch) {
    case Architecture::Attn:
      break;
    case Architecture::Final:
    case Architecture::FinalCtx:
      e.embedding = enc::final_concat(h);
      break;
    case Architecture::AvgPool:
    case Architecture::AvgPoolCtx:
      e.embedding = enc::pool(h, enc::PoolMode::Avg);
      break;
    case Architecture::MaxPool:
    case Architecture::MaxPoolCtx:
      e.embedding = enc::pool(h, enc::PoolMode::Max);
      break;
    default:
      e.matrix = enc::inner_attention(h, *inner_);
      e.embedding = e.matrix.flat();
      break;
  }
  return e;
}

Tensor Model::initial_state(const Encoded& e) const {
  const std::size_t rows = e.mask.dim(0);
  if (config_.arch == Architecture::AttnAttn) return Tensor::zeros({rows, config_.dec_hidden});
  const Tensor source = config_.arch == Architecture::Attn ? masked_mean(e.states, e.mask) : e.embedding;
  return tanh(add_bias(matmul(source, init_w_), init_b_));
}

std::optional<AttentionMemory> Model::memory(const Encoded& e) const {
  if (config_.arch == Architecture::Attn) return attention_memory(*attention_, e.states, e.mask);
  if (config_.arch == Architecture::AttnAttn) return attention_memory(*attention_, e.matrix.matrix);
  return std::nullopt;
}

ForwardResult Model::forward(const text::Batch& batch) const {
  if (batch.target_len < 2) throw EmptyInputError("forward: batch has no target tokens");
  const std::size_t rows = batch.rows, steps = batch.target_len - 1;
  ForwardResult out;
  out.encoded = encode(batch);

  if (transformer_) {
    std::vector<int> prefix(rows * steps);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t t = 0; t < steps; ++t) prefix[r * steps + t] = batch.target_at(r, t);
    }
    TransformerDecoding d = transformer_decode(*transformer_, prefix, rows, out.encoded.matrix.matrix);
    out.logits = d.logits;
    out.attention = d.cross_weights;
    return out;
  }

  // Step-major previous tokens so every step is a contiguous row block.
  std::vector<int> previous(steps * rows);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t r = 0; r < rows; ++r) previous[t * rows + r] = batch.target_at(r, t);
  }
  const Tensor projected = add_bias(matmul(gather_rows(decoder_.embedding, previous), decoder_.block1.w_input),
                                    decoder_.block1.bias);

  const std::optional<AttentionMemory> mem = memory(out.encoded);
  std::vector<Tensor> weights, contexts, states;
  ContextProvider provider;
  if (mem) {
    provider = [&](const Tensor& query) {
      Attended a = decoder_attention(*attention_, query, *mem);
      weights.push_back(a.weights);
      return a.context;
    };
  } else if (decoder_.has_context()) {
    provider = [&](const Tensor&) { return out.encoded.embedding; };
  }

  Tensor s = initial_state(out.encoded);
  for (std::size_t t = 0; t < steps; ++t) {
    CgruOutput step = cgru_step_projected(decoder_, slice(projected, 0, t * rows, rows), s, provider, false);
    s = step.state;
    states.push_back(s);
    if (step.context.defined()) contexts.push_back(step.context);
  }
  const std::size_t hidden = decoder_.hidden(), vocab = config_.tgt_vocab;
  out.logits = reshape(output_logits(decoder_, reshape(stack(states, 1), {rows * steps, hidden})), {rows, steps, vocab});

  NoGradGuard no_grad;
  if (!weights.empty()) out.attention = stack(weights, 1).detach();
  if (!contexts.empty()) out.contexts = stack(contexts, 1).detach();
  return out;
}

Tensor Model::loss(const ForwardResult& result, const text::Batch& batch) const {
  const std::size_t rows = batch.rows, steps = batch.target_len - 1;
  std::vector<int> labels(rows * steps);
  std::vector<double> weights(rows * steps);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t < steps; ++t) {
      labels[r * steps + t] = batch.target_at(r, t + 1);
      weights[r * steps + t] = batch.target_mask.at(r, t + 1);
    }
  }
  return cross_entropy(reshape(result.logits, {rows * steps, config_.tgt_vocab}), labels, weights);
}

Tensor Model::loss(const text::Batch& batch) const { return loss(forward(batch), batch); }

namespace {

int argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t vocab = logits.dim(1);
  const double* v = logits.values().data() + row * vocab;
  std::size_t best = 0;
  for (std::size_t j = 1; j < vocab; ++j) {
    if (v[j] > v[best]) best = j;
  }
  return static_cast<int>(best);
}

}  // namespace

Decoded Model::greedy_decode(const text::Batch& batch, std::size_t max_len) const {
  if (max_len == 0) throw std::invalid_argument("greedy_decode: max_len must be at least 1");
  NoGradGuard no_grad;
  const std::size_t rows = batch.rows;
  const Encoded e = encode(batch);
  Decoded out;
  out.tokens.resize(rows);
  std::vector<std::vector<double>> attention(rows);
  std::vector<bool> done(rows, false);
  std::size_t slots = 0, remaining = rows;

  auto emit = [&](std::size_t r, int token, const double* weights) {
    if (done[r]) return;
    out.tokens[r].push_back(token);
    if (weights) attention[r].insert(attention[r].end(), weights, weights + slots);
    if (token == text::kEos) {
      done[r] = true;
      --remaining;
    }
  };

  if (transformer_) {
    std::vector<std::vector<int>> prefixes(rows, std::vector<int>{text::kBos});
    for (std::size_t step = 0; step < max_len && remaining > 0; ++step) {
      std::vector<int> flat;
      for (const auto& p : prefixes) flat.insert(flat.end(), p.begin(), p.end());
      const TransformerDecoding d = transformer_decode(*transformer_, flat, rows, e.matrix.matrix);
      const std::size_t len = step + 1, vocab = config_.tgt_vocab;
      slots = d.cross_weights.dim(2);
      const Tensor last = Tensor::from({rows, vocab}, [&] {
        std::vector<double> v(rows * vocab);
        for (std::size_t r = 0; r < rows; ++r) {
          const auto src = d.logits.values().begin() + static_cast<std::ptrdiff_t>((r * len + step) * vocab);
          std::copy(src, src + static_cast<std::ptrdiff_t>(vocab), v.begin() + static_cast<std::ptrdiff_t>(r * vocab));
        }
        return v;
      }());
      for (std::size_t r = 0; r < rows; ++r) {
        const int token = argmax_row(last, r);
        emit(r, token, d.cross_weights.values().data() + (r * len + step) * slots);
        prefixes[r].push_back(token);
      }
    }
  } else {
    const std::optional<AttentionMemory> mem = memory(e);
    Tensor step_weights;
    ContextProvider provider;
    if (mem) {
      provider = [&](const Tensor& query) {
        Attended a = decoder_attention(*attention_, query, *mem);
        step_weights = a.weights;
        return a.context;
      };
      slots = mem->rows.dim(1);
    } else if (decoder_.has_context()) {
      provider = [&](const Tensor&) { return e.embedding; };
    }
    Tensor s = initial_state(e);
    std::vector<int> previous(rows, text::kBos);
    for (std::size_t step = 0; step < max_len && remaining > 0; ++step) {
      const CgruOutput o = cgru_step(decoder_, previous, s, provider, true);
      s = o.state;
      for (std::size_t r = 0; r < rows; ++r) {
        previous[r] = argmax_row(o.logits, r);
        emit(r, previous[r], mem ? step_weights.values().data() + r * slots : nullptr);
      }
    }
  }

  if (slots > 0) {
    for (std::size_t r = 0; r < rows; ++r) {
      out.attention.push_back(Tensor::from({out.tokens[r].size(), slots}, std::move(attention[r])));
    }
  }
  return out;
}

void Model::assign(const ParamStore& values) {
  for (const auto& [name, target] : params_.items()) {
    const Tensor& source = values.get(name);
    if (source.shape() != target.shape()) {
      throw DimensionError("parameter '" + name + "' has shape " + shape_str(source.shape()) + ", expected " +
                           shape_str(target.shape()));
    }
    target.impl()->value = source.values();
  }
}

Model Model::clone() const {
  Model copy(config_);
  copy.assign(params_);
  return copy;
}

Model build_model(const ModelConfig& config, std::uint64_t seed) { return Model(config, seed); }

std::vector<int> greedy_decode(const Model& model, std::span<const int> source, std::size_t max_len) {
  const std::vector<std::vector<int>> one{std::vector<int>(source.begin(), source.end())};
  return model.greedy_decode(text::make_source_batch(one), max_len).tokens.front();
}

// ---- checkpoints ------------------------------------------------------------

namespace {

constexpr char kMagic[] = "CATN1\n";

template <typename U>
void put_uint(std::ostream& out, U v) {
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes, sizeof(U));
}

template <typename U>
U get_uint(std::istream& in) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw DataError("checkpoint: unexpected end of file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}

std::string get_bytes(std::istream& in, std::uint64_t n, const char* what) {
  if (n > (1ULL << 32)) throw DataError(std::string("checkpoint: implausible ") + what + " length");
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw DataError("checkpoint: unexpected end of file");
  }
  return s;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Model& model, const nlohmann::json& extra) {
  nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
  meta["model"] = model.config().to_json();
  const std::string text = meta.dump();
  out.write(kMagic, sizeof(kMagic) - 1);
  put_uint<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_uint<std::uint64_t>(out, model.params().size());
  for (const auto& [name, t] : model.params().items()) {
    put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_uint<std::uint64_t>(out, d);
    for (double v : t.values()) put_uint<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const nlohmann::json& extra) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  write_checkpoint(out, model, extra);
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string magic(sizeof(kMagic) - 1, '\0');
  if (!in.read(magic.data(), static_cast<std::streamsize>(magic.size())) || magic != kMagic) {
    throw DataError("checkpoint: missing CATN1 header");
  }
  Checkpoint ckpt;
  const std::string text = get_bytes(in, get_uint<std::uint64_t>(in), "metadata");
  try {
    ckpt.meta = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad metadata: ") + e.what());
  }
  const std::uint64_t count = get_uint<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = get_bytes(in, get_uint<std::uint32_t>(in), "name");
    const std::uint32_t rank = get_uint<std::uint32_t>(in);
    if (rank > 8) throw DataError("checkpoint: tensor '" + name + "' has implausible rank");
    Shape shape(rank);
    std::uint64_t numel = 1;
    for (auto& d : shape) {
      d = get_uint<std::uint64_t>(in);
      numel *= d;
      if (numel > (1ULL << 32)) throw DataError("checkpoint: tensor '" + name + "' is implausibly large");
    }
    std::vector<double> values(numel);
    for (double& v : values) v = std::bit_cast<double>(get_uint<std::uint64_t>(in));
    try {
      ckpt.params.add(std::move(name), Tensor::from(std::move(shape), std::move(values)));
    } catch (const std::invalid_argument& e) {
      throw DataError(std::string("checkpoint: ") + e.what());
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw DataError("checkpoint: trailing bytes");
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("model")) throw DataError("checkpoint: metadata has no model config");
  Model model(ModelConfig::from_json(ckpt.meta.at("model")));
  if (ckpt.params.size() != model.params().size()) {
    throw DataError("checkpoint: expected " + std::to_string(model.params().size()) + " tensors, found " +
                    std::to_string(ckpt.params.size()));
  }
  try {
    model.assign(ckpt.params);
  } catch (const std::out_of_range& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  } catch (const DimensionError& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
  return model;
}

}  // namespace catn::model
