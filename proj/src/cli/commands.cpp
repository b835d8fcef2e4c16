#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "catn/analysis.hpp"
#include "catn/cli.hpp"
#include "catn/error.hpp"
#include "catn/metrics.hpp"

namespace catn::cli {

using nlohmann::json;

namespace {

struct Options {
  std::string config, arch, src, tgt, ckpt, out, name;
  std::string metric = "cosine";
  std::string holdout = "one";
  std::optional<std::size_t> size, heads, epochs, batch_size, train_max_len;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::size_t bins = 20;
  std::size_t max_len = 100;
  std::size_t save_every = 0;
  std::size_t index = 0;
  double threshold = 0.01;
  bool quiet = false;
  std::vector<std::string> reports;
};

class Output {
 public:
  Output(const std::string& path, std::ostream& fallback) : path_(path), stream_(&fallback) {
    if (!path.empty()) {
      if (const auto parent = std::filesystem::path(path).parent_path(); !parent.empty()) {
        std::filesystem::create_directories(parent);
      }
      file_.open(path, std::ios::binary | std::ios::trunc);
      if (!file_) throw DataError("cannot write " + path);
      stream_ = &file_;
    }
  }
  std::ostream& stream() { return *stream_; }
  void finish() {
    stream_->flush();
    if (!*stream_) throw DataError("write failed for " + (path_.empty() ? std::string("stdout") : path_));
  }

 private:
  std::string path_;
  std::ofstream file_;
  std::ostream* stream_;
};

void write_json_file(const std::filesystem::path& path, const json& j) {
  Output o(path.string(), std::cout);
  o.stream() << j.dump(2) << '\n';
  o.finish();
}

// Formats without room for a config block get a sibling "<out>.config.json".
void write_sidecar(const std::string& out, const json& config) {
  if (!out.empty()) write_json_file(out + ".config.json", config);
}

void require(const std::string& value, const char* flag, const char* command) {
  if (value.empty()) throw ConfigError(std::string(command) + " requires " + flag);
}

// "label<TAB>sentence", or a bare sentence labeled with its line number.
std::pair<std::string, std::string> split_labeled(const std::string& line, std::size_t number) {
  const auto tab = line.find('\t');
  if (tab == std::string::npos) return {std::to_string(number), line};
  return {line.substr(0, tab), line.substr(tab + 1)};
}

}  // namespace

eval::EmbeddingSet embed_lines(const LoadedModel& m, std::span<const std::string> lines, std::size_t batch_size) {
  if (!model::exposes_embedding(m.model.arch())) {
    throw UnsupportedArchitectureError(std::string(model::to_string(m.model.arch())) +
                                       " has no fixed-size sentence embedding; use another architecture");
  }
  eval::EmbeddingSet set;
  std::vector<std::string> sentences;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto [label, sentence] = split_labeled(lines[i], i + 1);
    set.items.push_back({std::to_string(i + 1), std::move(label), {}});
    sentences.push_back(std::move(sentence));
  }
  NoGradGuard guard;
  for (std::size_t start = 0; start < sentences.size(); start += batch_size) {
    std::vector<std::vector<int>> ids;
    for (std::size_t i = start; i < std::min(sentences.size(), start + batch_size); ++i) {
      ids.push_back(m.prep.encode_source(sentences[i]));
    }
    const model::Encoded e = m.model.encode(text::make_source_batch(ids));
    const std::size_t width = e.embedding.dim(1);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      const auto* row = e.embedding.values().data() + r * width;
      set.items[start + r].vec.assign(row, row + width);
    }
  }
  return set;
}

namespace {

std::optional<LoadedModel> maybe_load(const Options& o) {
  if (o.ckpt.empty()) return std::nullopt;
  return load_model(o.ckpt);
}

std::string report_name(const Options& o, const std::optional<LoadedModel>& m, const std::string& fallback) {
  if (!o.name.empty()) return o.name;
  if (m) return std::string(model::to_string(m->model.arch()));
  return std::filesystem::path(fallback).stem().string();
}

json base_config(const std::string& command, const Options& o, const std::optional<LoadedModel>& m) {
  json c = {{"command", command}};
  if (!o.src.empty()) c["src"] = o.src;
  if (!o.tgt.empty()) c["tgt"] = o.tgt;
  if (!o.ckpt.empty()) c["ckpt"] = o.ckpt;
  if (m) c["run"] = m->run;
  return c;
}

json base_config(const std::string& command, const Options& o, const LoadedModel& m) {
  json c = base_config(command, o, std::nullopt);
  c["run"] = m.run;
  return c;
}

void emit_report(const Options& o, const eval::MetricReport& report, std::ostream& stdout_stream) {
  Output out(o.out, stdout_stream);
  out.stream() << report.to_json().dump(2) << '\n';
  out.finish();
}

void print_warnings(const eval::Warnings& warnings, std::ostream& err) {
  for (const auto& w : warnings) err << "warning: " << w << '\n';
}

// ------------------------------------------------------------------ commands

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  RunConfig rc = o.config.empty() ? RunConfig{} : RunConfig::load(o.config);
  if (!o.arch.empty()) rc.model.arch = model::parse_architecture(o.arch);
  if (o.size) rc.model.size = *o.size;
  if (o.heads) rc.model.heads = *o.heads;
  if (!o.heads && model::uses_heads(rc.model.arch) && rc.model.heads == 0) rc.model.heads = 4;
  if (o.seed) rc.seed = *o.seed;
  rc.train.seed = rc.seed;
  if (o.epochs) rc.train.epochs = *o.epochs;
  if (o.batch_size) rc.train.batch_size = *o.batch_size;
  if (o.lr) rc.train.lr = *o.lr;
  if (o.train_max_len) rc.data.max_len = *o.train_max_len;
  if (!o.src.empty()) rc.data.src = o.src;
  if (!o.tgt.empty()) rc.data.tgt = o.tgt;

  // Reject bad combinations before touching any data.
  model::ModelConfig probe = rc.model;
  probe.src_vocab = probe.tgt_vocab = text::kNumReserved + 1;
  probe.validate();
  rc.train = train::TrainConfig::from_json(rc.train.to_json());
  rc.data = DataConfig::from_json(rc.data.to_json());
  require(rc.data.src, "--src (or data.src)", "train");
  require(rc.data.tgt, "--tgt (or data.tgt)", "train");
  require(o.out, "--out DIR", "train");

  const text::ParallelText raw = text::load_parallel(rc.data.src, rc.data.tgt, rc.data.lowercase);
  const text::ParallelText kept = text::filter_by_length(raw, rc.data.max_len);
  if (kept.source.empty()) throw EmptyInputError("no training pairs left after length filtering");
  if (kept.source.size() < raw.source.size() && !o.quiet) {
    err << "dropped " << raw.source.size() - kept.source.size() << " pairs longer than " << rc.data.max_len
        << " tokens or empty\n";
  }
  const Preprocessor prep = Preprocessor::fit(rc.data, kept);
  std::vector<text::SentencePair> pairs;
  for (std::size_t i = 0; i < kept.source.size(); ++i) {
    pairs.push_back({prep.encode_source(text::join(kept.source[i])), prep.encode_target(text::join(kept.target[i]))});
  }
  rc.model.src_vocab = prep.src_vocab().size();
  rc.model.tgt_vocab = prep.tgt_vocab().size();

  model::Model m(rc.model, rc.seed);
  train::TrainOptions options;
  options.out_dir = o.out;
  options.save_every = o.save_every;
  options.meta = {{"run", rc.to_json()}, {"prep", prep.to_json()}};
  options.on_epoch = [&](const train::EpochSummary& s, const model::Model&) {
    if (!o.quiet) {
      char line[96];
      std::snprintf(line, sizeof line, "epoch %zu loss %.6f\n", s.epoch, s.mean_loss);
      err << line << std::flush;
    }
    return true;
  };
  write_json_file(std::filesystem::path(o.out) / "config.json", rc.to_json());
  const auto log = train::train(m, pairs, rc.train, options);
  out << "trained " << model::to_string(rc.model.arch) << " on " << pairs.size() << " pairs; final loss "
      << log.back().loss << "; checkpoint " << (std::filesystem::path(o.out) / "last.ckpt").string() << '\n';
  return kOk;
}

int cmd_translate(const Options& o, std::ostream& out, std::ostream&) {
  const LoadedModel m = load_model(o.ckpt);
  if (o.max_len == 0) throw ConfigError("--max-len must be positive");
  const auto lines = text::read_lines(o.src);
  const auto translations = translate_lines(m, lines, o.max_len);
  Output file(o.out, out);
  for (const auto& t : translations) file.stream() << t << '\n';
  file.finish();
  json config = base_config("translate", o, m);
  config["max_len"] = o.max_len;
  write_sidecar(o.out, config);
  return kOk;
}

int cmd_embed(const Options& o, std::ostream& out, std::ostream&) {
  const LoadedModel m = load_model(o.ckpt);
  const eval::EmbeddingSet set = embed_lines(m, text::read_lines(o.src));
  Output file(o.out, out);
  eval::write_embeddings(file.stream(), set);
  file.finish();
  write_sidecar(o.out, base_config("embed", o, m));
  return kOk;
}

int cmd_eval_bleu(const Options& o, std::ostream& out, std::ostream&) {
  const auto m = maybe_load(o);
  const auto refs_raw = text::read_lines(o.tgt);
  const auto src_lines = text::read_lines(o.src);
  const auto hyps_raw = m ? translate_lines(*m, src_lines, o.max_len) : src_lines;
  std::vector<text::Sentence> hyps, refs;
  for (const auto& h : hyps_raw) hyps.push_back(text::tokenize(h));
  for (const auto& r : refs_raw) refs.push_back(text::tokenize(r));
  const eval::BleuResult b = eval::bleu(hyps, refs);
  eval::MetricReport report;
  report.model = report_name(o, m, o.src);
  report.metrics["bleu"] = b.score;
  report.config = base_config("eval-bleu", o, m);
  if (m) report.config["max_len"] = o.max_len;
  report.details = b.to_json();
  emit_report(o, report, out);
  return kOk;
}

eval::EmbeddingSet embeddings_from(const std::optional<LoadedModel>& m, const std::string& path) {
  return m ? embed_lines(*m, text::read_lines(path)) : eval::load_embeddings(path);
}

int cmd_eval_para(const Options& o, std::ostream& out, std::ostream& err) {
  const auto holdout = eval::parse_holdout(o.holdout);
  const auto distance = eval::parse_distance(o.metric);
  const auto m = maybe_load(o);
  const eval::EmbeddingSet set = embeddings_from(m, o.src);
  const std::uint64_t seed = o.seed.value_or(1);
  eval::MetricReport report;
  report.model = report_name(o, m, o.src);
  report.metrics["cl"] = eval::cluster_classification(set, holdout, seed);
  report.metrics["nn"] = eval::nn_retrieval(set, distance);
  eval::Warnings warnings;
  const double i = eval::idb(set, &warnings);
  if (std::isfinite(i)) report.metrics["idb"] = i;
  print_warnings(warnings, err);
  report.config = base_config("eval-para", o, m);
  report.config["holdout"] = o.holdout;
  report.config["metric"] = o.metric;
  report.config["seed"] = seed;
  report.details = {{"items", set.size()}, {"clusters", set.labels().size()}, {"warnings", warnings}};
  emit_report(o, report, out);
  return kOk;
}

int cmd_eval_probe(const Options& o, std::ostream& out, std::ostream& err) {
  const auto m = maybe_load(o);
  const eval::ProbeResult r = eval::probe_classify(embeddings_from(m, o.src), embeddings_from(m, o.tgt));
  print_warnings(r.warnings, err);
  eval::MetricReport report;
  report.model = report_name(o, m, o.src);
  report.metrics["probe_acc"] = r.accuracy;
  report.metrics["probe_baseline"] = r.baseline;
  report.config = base_config("eval-probe", o, m);
  report.details = {{"warnings", r.warnings}};
  emit_report(o, report, out);
  return kOk;
}

int cmd_eval_sim(const Options& o, std::ostream& out, std::ostream&) {
  const auto m = maybe_load(o);
  std::vector<eval::SimilarityPair> pairs;
  if (m) {
    // "sentence a<TAB>sentence b<TAB>score"
    std::vector<std::string> left, right;
    std::vector<double> scores;
    std::size_t number = 0;
    for (const auto& line : text::read_lines(o.src)) {
      ++number;
      if (line.empty()) continue;
      const auto t1 = line.find('\t');
      const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
      if (t2 == std::string::npos) throw DataError(o.src + ":" + std::to_string(number) + ": expected three tab-separated fields");
      left.push_back("a\t" + line.substr(0, t1));
      right.push_back("b\t" + line.substr(t1 + 1, t2 - t1 - 1));
      try {
        scores.push_back(std::stod(line.substr(t2 + 1)));
      } catch (const std::exception&) {
        throw DataError(o.src + ":" + std::to_string(number) + ": score is not a number");
      }
    }
    const auto a = embed_lines(*m, left), b = embed_lines(*m, right);
    for (std::size_t i = 0; i < scores.size(); ++i) pairs.push_back({a.items[i].vec, b.items[i].vec, scores[i]});
  } else {
    std::ifstream in(o.src);
    if (!in) throw DataError("cannot read " + o.src);
    pairs = eval::read_similarity_pairs(in);
  }
  const eval::SimilarityResult r = eval::similarity_eval(pairs);
  eval::MetricReport report;
  report.model = report_name(o, m, o.src);
  report.metrics["sim_pearson"] = r.pearson;
  report.metrics["sim_spearman"] = r.spearman;
  report.config = base_config("eval-sim", o, m);
  report.details = {{"pairs", r.pairs}};
  emit_report(o, report, out);
  return kOk;
}

int cmd_analyze(const Options& o, std::ostream& out, std::ostream&) {
  const LoadedModel m = load_model(o.ckpt);
  const auto src_lines = text::read_lines(o.src);
  std::vector<std::vector<int>> sources;
  for (const auto& line : src_lines) sources.push_back(m.prep.encode_source(line));

  json config = base_config("analyze-attention", o, m);
  config["bins"] = o.bins;
  config["threshold"] = o.threshold;
  if (!o.tgt.empty()) {
    const auto tgt_lines = text::read_lines(o.tgt);
    if (o.index >= std::min(src_lines.size(), tgt_lines.size())) {
      throw DataError("--index " + std::to_string(o.index) + " is beyond the corpus");
    }
    const text::SentencePair pair{sources[o.index], m.prep.encode_target(tgt_lines[o.index])};
    const eval::Alignment al = eval::alignment_export(m.model, pair, o.threshold);
    write_json_file(o.out + ".alignment.json", eval::alignment_to_json(al));
    config["index"] = o.index;
    out << "alignment: " << al.entries.size() << " entries above " << o.threshold << '\n';
  }
  const eval::PositionHistogram h = eval::position_histogram(m.model, sources, o.bins);
  Output csv(o.out + ".histogram.csv", std::cout);
  eval::write_histogram_csv(csv.stream(), h);
  csv.finish();
  config["sentences"] = h.sentences;
  config["excluded"] = h.excluded;
  write_json_file(o.out + ".config.json", config);
  out << "histogram: " << h.sentences << " sentences, " << h.excluded << " excluded as too short\n";
  return kOk;
}

int cmd_correlate(const Options& o, std::ostream& out, std::ostream&) {
  std::vector<eval::MetricReport> reports;
  for (const auto& path : o.reports) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path);
    try {
      reports.push_back(eval::MetricReport::from_json(json::parse(in)));
    } catch (const json::exception& e) {
      throw DataError(path + ": " + e.what());
    }
  }
  json j = eval::metric_correlation_matrix(reports).to_json();
  for (const auto& r : reports) j["models"].push_back(r.model);
  Output file(o.out, out);
  file.stream() << j.dump(2) << '\n';
  file.finish();
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"catn: compound-attention sentence representations and translation"};
  app.require_subcommand(1);
  Options o;

  auto ckpt = [&](CLI::App* c, bool required) {
    auto* opt = c->add_option("--ckpt", o.ckpt, "Checkpoint written by train");
    if (required) opt->required();
  };
  auto src = [&](CLI::App* c, const std::string& help, bool required = true) {
    auto* opt = c->add_option("--src", o.src, help);
    if (required) opt->required();
  };
  auto outp = [&](CLI::App* c, const std::string& help, bool required = false) {
    auto* opt = c->add_option("--out", o.out, help);
    if (required) opt->required();
  };
  auto name = [&](CLI::App* c) { c->add_option("--name", o.name, "Model name recorded in the report"); };

  CLI::App* train = app.add_subcommand("train", "Train a model on a parallel corpus");
  train->add_option("--config", o.config, "JSON run configuration");
  train->add_option("--arch", o.arch, "Architecture, e.g. attn-attn, final, trf-attn-attn");
  train->add_option("--size", o.size, "Sentence representation size");
  train->add_option("--heads", o.heads, "Inner-attention heads r");
  train->add_option("--seed", o.seed, "Run seed");
  train->add_option("--epochs", o.epochs);
  train->add_option("--batch-size", o.batch_size);
  train->add_option("--lr", o.lr, "Adam learning rate");
  train->add_option("--max-len", o.train_max_len, "Drop training pairs longer than this");
  train->add_option("--save-every", o.save_every, "Also keep epoch-NNNN.ckpt every N epochs");
  train->add_option("--tgt", o.tgt, "Target side of the corpus");
  train->add_flag("--quiet", o.quiet, "No per-epoch progress");
  src(train, "Source side of the corpus", false);
  outp(train, "Output directory", true);

  CLI::App* translate = app.add_subcommand("translate", "Greedy-decode one translation per input line");
  ckpt(translate, true);
  src(translate, "Source sentences");
  outp(translate, "Output file (default stdout)");
  translate->add_option("--max-len", o.max_len, "Maximum output tokens");

  CLI::App* embed = app.add_subcommand("embed", "Write sentence embeddings as JSON Lines");
  ckpt(embed, true);
  src(embed, "Sentences, optionally 'label<TAB>sentence'");
  outp(embed, "Output file (default stdout)");

  CLI::App* bleu = app.add_subcommand("eval-bleu", "Corpus BLEU of hypotheses (or of --ckpt translations of --src)");
  ckpt(bleu, false);
  src(bleu, "Hypotheses, or sources when --ckpt is given");
  bleu->add_option("--tgt", o.tgt, "References")->required();
  bleu->add_option("--max-len", o.max_len, "Maximum output tokens when translating");
  outp(bleu, "Report file (default stdout)");
  name(bleu);

  CLI::App* para = app.add_subcommand("eval-para", "Cluster classification, nearest-neighbour retrieval and iDB");
  ckpt(para, false);
  src(para, "EmbeddingSet JSONL, or labeled sentences when --ckpt is given");
  para->add_option("--metric", o.metric, "Retrieval distance")->check(CLI::IsMember({"cosine", "l2"}));
  para->add_option("--holdout", o.holdout, "Held-out items per cluster")->check(CLI::IsMember({"one", "half"}));
  para->add_option("--seed", o.seed, "Holdout seed");
  outp(para, "Report file (default stdout)");
  name(para);

  CLI::App* probe = app.add_subcommand("eval-probe", "Logistic-regression probe on frozen embeddings");
  ckpt(probe, false);
  src(probe, "Training embeddings (or labeled sentences with --ckpt)");
  probe->add_option("--tgt", o.tgt, "Test embeddings (or labeled sentences with --ckpt)")->required();
  outp(probe, "Report file (default stdout)");
  name(probe);

  CLI::App* sim = app.add_subcommand("eval-sim", "Cosine similarity against gold scores");
  ckpt(sim, false);
  src(sim, "JSONL {a, b, score}, or 'a<TAB>b<TAB>score' with --ckpt");
  outp(sim, "Report file (default stdout)");
  name(sim);

  CLI::App* analyze = app.add_subcommand("analyze-attention", "Alignment export and relative-position histograms");
  ckpt(analyze, true);
  src(analyze, "Source sentences");
  analyze->add_option("--tgt", o.tgt, "Target sentences; enables the alignment export");
  analyze->add_option("--index", o.index, "Pair exported as alignment");
  analyze->add_option("--threshold", o.threshold, "Drop alignment weights at or below this");
  analyze->add_option("--bins", o.bins, "Histogram bins")->check(CLI::Range(std::size_t{2}, std::size_t{100000}));
  outp(analyze, "Output prefix", true);

  CLI::App* correlate = app.add_subcommand("correlate", "Pearson correlation of metrics across model reports");
  correlate->add_option("reports", o.reports, "MetricReport files")->required()->expected(3, -1);
  outp(correlate, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    err << "error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (*train) return cmd_train(o, out, err);
    if (*translate) return cmd_translate(o, out, err);
    if (*embed) return cmd_embed(o, out, err);
    if (*bleu) return cmd_eval_bleu(o, out, err);
    if (*para) return cmd_eval_para(o, out, err);
    if (*probe) return cmd_eval_probe(o, out, err);
    if (*sim) return cmd_eval_sim(o, out, err);
    if (*analyze) return cmd_analyze(o, out, err);
    if (*correlate) return cmd_correlate(o, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const UnsupportedArchitectureError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace catn::cli
