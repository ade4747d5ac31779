#include "dmc/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "dmc/error.hpp"

namespace dmc::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void invalid(const std::string& msg) { throw Error(ErrorKind::ConfigInvalid, msg); }

// Strict object reader: each known key is consumed once, anything left over is rejected.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) invalid(where_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      invalid(where_ + "." + key + ": wrong type");
    }
  }

  template <typename T>
  void get_enum(const char* key, T& out, T (*parse)(std::string_view)) {
    std::optional<std::string> name;
    if (j_.contains(key)) {
      std::string s;
      get(key, s);
      name = s;
    } else {
      seen_.insert(key);
    }
    if (name) {
      try {
        out = parse(*name);
      } catch (const Error&) {
        invalid(where_ + "." + key + ": unknown value '" + *name + "'");
      }
    }
  }

  const json* section(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) invalid(where_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void validate_data(const DataConfig& d) {
  if (d.n_train < 1) invalid("data.n_train must be >= 1");
  if (d.n_validation < 1) invalid("data.n_validation must be >= 1");
  if (d.len_min < 3 || d.len_max > 20 || d.len_min > d.len_max) {
    invalid("data.len_min/len_max must satisfy 3 <= len_min <= len_max <= 20");
  }
  if (!(d.noise_rate >= 0.0 && d.noise_rate < 1.0)) invalid("data.noise_rate must lie in [0, 1)");
  if (d.concept_count < 2 * d.len_max) invalid("data.concept_count must be >= 2 * len_max");
  if (d.function_count < 1) invalid("data.function_count must be >= 1");
  if (d.n_sts < 2) invalid("data.n_sts must be >= 2");
  if (d.n_nli < 1) invalid("data.n_nli must be >= 1");
  if (d.mining_n_a < 1 || d.mining_n_b < 1) invalid("data.mining_n_a/mining_n_b must be >= 1");
  if (!(d.mining_parallel_fraction > 0.0 && d.mining_parallel_fraction < 1.0)) {
    invalid("data.mining_parallel_fraction must lie in (0, 1)");
  }
}

void validate(const RunConfig& c) {
  validate_data(c.data);
  c.train.validate();
  if (c.eval.k < 1) invalid("eval.k must be >= 1");
  if (c.eval.split != "train" && c.eval.split != "validation" && c.eval.split != "test") {
    invalid("eval.split must be train, validation or test");
  }
}

}  // namespace

json to_json(const RunConfig& c) {
  const auto& d = c.data;
  const auto& t = c.train;
  return json{
      {"seed", c.seed},
      {"use_nli", c.use_nli},
      {"data",
       {{"concept_count", d.concept_count},
        {"function_count", d.function_count},
        {"n_train", d.n_train},
        {"n_validation", d.n_validation},
        {"n_test", d.n_test},
        {"len_min", d.len_min},
        {"len_max", d.len_max},
        {"noise_rate", d.noise_rate},
        {"order_a", to_string(d.order_a)},
        {"order_b", to_string(d.order_b)},
        {"n_sts", d.n_sts},
        {"n_nli", d.n_nli},
        {"mining_n_a", d.mining_n_a},
        {"mining_n_b", d.mining_n_b},
        {"mining_parallel_fraction", d.mining_parallel_fraction}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"lr_max", t.lr_max},
        {"warmup_steps", t.warmup_steps},
        {"queue_size", t.queue_capacity},
        {"temperature", t.temperature},
        {"momentum", t.momentum},
        {"grad_clip", t.grad_clip},
        {"weight_decay", t.weight_decay},
        {"pooling", to_string(t.pooling)},
        {"nli_weight", t.nli_weight},
        {"nli_batch_size", t.nli_batch_size},
        {"nli_dropout", t.nli_dropout},
        {"no_momentum", t.ablation_no_momentum},
        {"d_emb", t.d_emb},
        {"d_out", t.d_out},
        {"threads", t.eval_threads}}},
      {"eval", {{"k", c.eval.k}, {"margin", to_string(c.eval.margin)}, {"split", c.eval.split}}},
  };
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  ObjectReader top(j, "config");
  top.get("seed", c.seed);
  top.get("use_nli", c.use_nli);
  if (const json* s = top.section("data")) {
    ObjectReader r(*s, "data");
    auto& d = c.data;
    r.get("concept_count", d.concept_count);
    r.get("function_count", d.function_count);
    r.get("n_train", d.n_train);
    r.get("n_validation", d.n_validation);
    r.get("n_test", d.n_test);
    r.get("len_min", d.len_min);
    r.get("len_max", d.len_max);
    r.get("noise_rate", d.noise_rate);
    r.get_enum("order_a", d.order_a, &parse_word_order);
    r.get_enum("order_b", d.order_b, &parse_word_order);
    r.get("n_sts", d.n_sts);
    r.get("n_nli", d.n_nli);
    r.get("mining_n_a", d.mining_n_a);
    r.get("mining_n_b", d.mining_n_b);
    r.get("mining_parallel_fraction", d.mining_parallel_fraction);
    r.finish();
  }
  if (const json* s = top.section("train")) {
    ObjectReader r(*s, "train");
    auto& t = c.train;
    r.get("epochs", t.epochs);
    r.get("batch_size", t.batch_size);
    r.get("lr_max", t.lr_max);
    r.get("warmup_steps", t.warmup_steps);
    r.get("queue_size", t.queue_capacity);
    r.get("temperature", t.temperature);
    r.get("momentum", t.momentum);
    r.get("grad_clip", t.grad_clip);
    r.get("weight_decay", t.weight_decay);
    r.get_enum("pooling", t.pooling, &parse_pooling);
    r.get("nli_weight", t.nli_weight);
    r.get("nli_batch_size", t.nli_batch_size);
    r.get("nli_dropout", t.nli_dropout);
    r.get("no_momentum", t.ablation_no_momentum);
    r.get("d_emb", t.d_emb);
    r.get("d_out", t.d_out);
    r.get("threads", t.eval_threads);
    r.finish();
  }
  if (const json* s = top.section("eval")) {
    ObjectReader r(*s, "eval");
    r.get("k", c.eval.k);
    r.get_enum("margin", c.eval.margin, &parse_margin_variant);
    r.get("split", c.eval.split);
    r.finish();
  }
  top.finish();
  c.train.seed = c.seed;
  validate(c);
  return c;
}

namespace {

// Command-line overrides applied on top of the config file.
struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> queue_size;
  std::optional<double> temperature;
  bool no_momentum = false;
  std::optional<std::string> pooling;
  bool nli = false;
  std::optional<std::size_t> epochs;
  std::optional<unsigned> threads;
  std::optional<std::size_t> k;
  std::optional<std::string> margin;
  std::optional<std::string> split;
};

RunConfig resolve(const Overrides& o) {
  json j = json::object();
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open config " + o.config_path);
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      invalid("config " + o.config_path + ": " + e.what());
    }
  }
  auto& train = j["train"];
  if (train.is_null()) train = json::object();
  auto& eval = j["eval"];
  if (eval.is_null()) eval = json::object();
  if (o.seed) j["seed"] = *o.seed;
  if (o.queue_size) train["queue_size"] = *o.queue_size;
  if (o.temperature) train["temperature"] = *o.temperature;
  if (o.no_momentum) train["no_momentum"] = true;
  if (o.pooling) train["pooling"] = *o.pooling;
  if (o.nli) j["use_nli"] = true;
  if (o.epochs) train["epochs"] = *o.epochs;
  if (o.threads) train["threads"] = *o.threads;
  if (o.k) eval["k"] = *o.k;
  if (o.margin) eval["margin"] = *o.margin;
  if (o.split) eval["split"] = *o.split;
  return run_config_from_json(j);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << text;
  out.flush();
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path prepare_out(const std::string& out) {
  if (out.empty()) invalid("--out is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + out + ": " + ec.message());
  return fs::path(out);
}

std::pair<std::size_t, std::size_t> vocab_sizes(const fs::path& data_dir) {
  const auto lex = load_lexicon_json(data_dir / "lexicon.json");
  return {lex.vocab_size(Language::A), lex.vocab_size(Language::B)};
}

DenseMatrix embed_rows(const EncoderParams& enc, const std::vector<TokenSequence>& seqs,
                       const RunConfig& c) {
  return stack_rows(encode_batch(enc, seqs, c.train.pooling, c.train.eval_threads));
}

void cmd_gen_data(const RunConfig& c, const fs::path& out) {
  const auto& d = c.data;
  const auto lex = ConceptLexicon::make(d.concept_count, d.function_count, c.seed, d.order_a, d.order_b);
  const SentenceShape shape{d.len_min, d.len_max, d.noise_rate};
  const auto corpus = gen_parallel_corpus(lex, {d.n_train, d.n_validation, d.n_test, shape}, c.seed + 1);
  std::set<ConceptSet> exclude;
  for (const auto& p : corpus.pairs) exclude.insert(concept_set(p.concepts));
  const auto mining_val =
      gen_mining_corpus(lex, d.mining_n_a, d.mining_n_b, d.mining_parallel_fraction, c.seed + 2, shape, &exclude);
  for (const auto& s : mining_val.concepts_a) exclude.insert(concept_set(s));
  for (const auto& s : mining_val.concepts_b) exclude.insert(concept_set(s));
  const auto mining_test =
      gen_mining_corpus(lex, d.mining_n_a, d.mining_n_b, d.mining_parallel_fraction, c.seed + 3, shape, &exclude);

  save_lexicon_json(lex, out / "lexicon.json");
  save_tsv(corpus, out / "parallel.tsv");
  save_mining_tsv(mining_val, out / "mining_validation.tsv");
  save_mining_tsv(mining_test, out / "mining_test.tsv");
  save_sts_tsv(gen_sts_pairs(lex, d.n_sts, c.seed + 4, shape), out / "sts_validation.tsv");
  save_sts_tsv(gen_sts_pairs(lex, d.n_sts, c.seed + 5, shape), out / "sts_test.tsv");
  save_nli_tsv(gen_nli_triples(lex, d.n_nli, c.seed + 6, shape), out / "nli.tsv");
  json gen = to_json(c)["data"];
  gen["seed"] = c.seed;
  write_json(out / "gen_config.json", gen);
  spdlog::info("gen-data: {} pairs, {} mining gold pairs per split -> {}", corpus.pairs.size(),
               mining_val.gold_pairs.size(), out.string());
}

void cmd_train(const RunConfig& c, const fs::path& data_dir, const fs::path& out) {
  const auto vocab = vocab_sizes(data_dir);
  const auto corpus = load_tsv(data_dir / "parallel.tsv", vocab);
  std::optional<std::vector<NliTriple>> nli;
  if (c.use_nli) nli = load_nli_tsv(data_dir / "nli.tsv");
  std::optional<std::vector<StsPair>> sts;
  if (fs::exists(data_dir / "sts_validation.tsv")) sts = load_sts_tsv(data_dir / "sts_validation.tsv");

  const TrainInputs inputs{&corpus, nli ? &*nli : nullptr, sts ? &*sts : nullptr};
  const auto result = train(c.train, inputs);

  std::string log;
  std::size_t step_idx = 0;
  const std::size_t per_epoch = result.steps.size() / std::max<std::size_t>(result.epochs.size(), 1);
  for (const auto& e : result.epochs) {
    for (std::size_t s = 0; s < per_epoch && step_idx < result.steps.size(); ++s) {
      log += to_jsonl(result.steps[step_idx++]) + "\n";
    }
    log += to_jsonl(e) + "\n";
    spdlog::info("epoch {}: retrieval {:.4f} / {:.4f}", e.epoch, e.retrieval_acc_ab, e.retrieval_acc_ba);
  }
  write_text(out / "metrics.jsonl", log);
  save_checkpoint(out / "checkpoint.bin", result.state.base_a, result.state.base_b);
  save_checkpoint(out / "momentum.bin", result.state.momentum_a.params, result.state.momentum_b.params);
  save_queue(out / "queue_a.bin", result.state.queue_a);
  save_queue(out / "queue_b.bin", result.state.queue_b);
}

Split split_of(const RunConfig& c) { return parse_split(c.eval.split); }

void cmd_embed(const RunConfig& c, const fs::path& checkpoint, const fs::path& data_dir, const fs::path& out) {
  const auto [enc_a, enc_b] = load_checkpoint(checkpoint);
  const auto corpus = load_tsv(data_dir / "parallel.tsv", std::make_pair(enc_a.vocab_size(), enc_b.vocab_size()));
  const Split split = split_of(c);
  const std::string source = (data_dir / "parallel.tsv").string() + ":" + std::string(to_string(split));
  save_embeddings(out / "embeddings_a.bin", embed_rows(enc_a, corpus.side(Language::A, split), c), source + ":a");
  save_embeddings(out / "embeddings_b.bin", embed_rows(enc_b, corpus.side(Language::B, split), c), source + ":b");
}

void cmd_eval_retrieval(const RunConfig& c, const fs::path& emb_a, const fs::path& emb_b, const fs::path& out) {
  const auto a = load_embeddings(emb_a);
  const auto b = load_embeddings(emb_b);
  const auto acc = retrieval_accuracy(a, b, c.train.eval_threads);
  write_json(out / "retrieval_metrics.json",
             {{"acc_forward", acc.forward}, {"acc_backward", acc.backward}, {"count", a.rows}});
  spdlog::info("retrieval: forward {:.4f} backward {:.4f}", acc.forward, acc.backward);
}

void cmd_mine(const RunConfig& c, const fs::path& checkpoint, const fs::path& data_dir, const fs::path& out) {
  const auto [enc_a, enc_b] = load_checkpoint(checkpoint);
  const auto vocab = std::make_pair(enc_a.vocab_size(), enc_b.vocab_size());
  const auto val = load_mining_tsv(data_dir / "mining_validation.tsv", vocab);
  const auto test = load_mining_tsv(data_dir / "mining_test.tsv", vocab);
  auto candidates = [&](const MiningCorpus& m) {
    return score_candidates(embed_rows(enc_a, m.side_a, c), embed_rows(enc_b, m.side_b, c), c.eval.k,
                            c.eval.margin, CandidateMode::UnionNearest, c.train.eval_threads);
  };
  const auto choice = search_threshold(candidates(val), val.gold_pairs);
  const auto test_candidates = candidates(test);
  const auto accepted = accept_above(test_candidates, choice.threshold);
  const auto m = f1_score(pairs_of(accepted), test.gold_pairs);
  json pairs = json::array();
  for (const auto& p : accepted) pairs.push_back({p.i, p.j, p.score});
  json lambda = std::isfinite(choice.threshold) ? json(choice.threshold) : json(choice.threshold > 0 ? "inf" : "-inf");
  write_json(out / "mining_report.json", {{"lambda", lambda},
                                          {"precision", m.precision},
                                          {"recall", m.recall},
                                          {"f1", m.f1},
                                          {"validation_f1", choice.metrics.f1},
                                          {"margin", to_string(c.eval.margin)},
                                          {"k", c.eval.k},
                                          {"pairs", pairs}});
  spdlog::info("mine: lambda {} test F1 {:.4f}", choice.threshold, m.f1);
}

void cmd_eval_sts(const RunConfig& c, const fs::path& checkpoint, const fs::path& data_dir, const fs::path& out) {
  const auto [enc_a, enc_b] = load_checkpoint(checkpoint);
  const auto pairs = load_sts_tsv(data_dir / "sts_test.tsv");
  const double rho = sts_eval(enc_a, pairs, c.train.pooling, c.train.eval_threads);
  write_json(out / "sts_metrics.json", {{"spearman", rho}, {"count", pairs.size()}});
  spdlog::info("eval-sts: spearman {:.4f}", rho);
}

void cmd_dump_embeddings(const RunConfig& c, const fs::path& checkpoint, const fs::path& data_dir,
                         const fs::path& out) {
  const auto [enc_a, enc_b] = load_checkpoint(checkpoint);
  const auto corpus = load_tsv(data_dir / "parallel.tsv", std::make_pair(enc_a.vocab_size(), enc_b.vocab_size()));
  const Split split = split_of(c);
  std::string text = "language\tindex\tvector\n";
  auto emit = [&](const char* lang, const DenseMatrix& m) {
    for (std::size_t i = 0; i < m.rows; ++i) {
      text += std::string(lang) + '\t' + std::to_string(i) + '\t';
      for (std::size_t k = 0; k < m.cols; ++k) {
        if (k) text += ' ';
        text += json(m(i, k)).dump();
      }
      text += '\n';
    }
  };
  emit("a", embed_rows(enc_a, corpus.side(Language::A, split), c));
  emit("b", embed_rows(enc_b, corpus.side(Language::B, split), c));
  write_text(out / "embeddings.tsv", text);
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigInvalid:
    case ErrorKind::NonPositiveTemperature:
      return kInvalidArgs;
    case ErrorKind::IoError:
    case ErrorKind::ParseError:
    case ErrorKind::EmptyCorpus:
    case ErrorKind::EmptySide:
    case ErrorKind::TokenOutOfRange:
      return kIoFailure;
    case ErrorKind::NumericalFailure:
      return kNumericalFailure;
    default:
      return kInternal;
  }
}

void configure_logging() {
  static const bool once = [] {
    auto logger = spdlog::stderr_color_mt("dmc");
    spdlog::set_default_logger(logger);
    return true;
  }();
  (void)once;
  const char* level = std::getenv("DMC_LOG_LEVEL");
  const std::string lv = level ? level : "info";
  if (lv == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (lv == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
  }
}

}  // namespace

int run_command(const std::vector<std::string>& argv) {
  configure_logging();
  CLI::App app{"Dual momentum contrast for bilingual sentence embeddings"};
  app.require_subcommand(1);
  Overrides o;
  std::string out, data_dir, checkpoint, emb_a, emb_b;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "Run configuration JSON");
    sub->add_option("--out", out, "Output directory")->required();
    sub->add_option("--seed", o.seed, "Random seed");
    sub->add_option("--threads", o.threads, "Evaluation threads");
  };
  auto add_model = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", checkpoint, "Encoder checkpoint")->required();
    sub->add_option("--data", data_dir, "Data directory from gen-data")->required();
    sub->add_option("--pooling", o.pooling, "mean | max | first");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate synthetic corpora");
  add_common(gen);

  auto* tr = app.add_subcommand("train", "Train both encoders");
  add_common(tr);
  tr->add_option("--data", data_dir, "Data directory from gen-data")->required();
  tr->add_option("--queue-size", o.queue_size, "Memory queue capacity K");
  tr->add_option("--temperature", o.temperature, "InfoNCE temperature");
  tr->add_flag("--no-momentum", o.no_momentum, "Share base and momentum parameters");
  tr->add_option("--pooling", o.pooling, "mean | max | first");
  tr->add_flag("--nli", o.nli, "Enable the NLI multitask head");
  tr->add_option("--epochs", o.epochs, "Training epochs");

  auto* emb = app.add_subcommand("embed", "Encode a corpus split into embedding dumps");
  add_common(emb);
  add_model(emb);
  emb->add_option("--split", o.split, "train | validation | test");

  auto* ret = app.add_subcommand("eval-retrieval", "Nearest-neighbor retrieval accuracy");
  add_common(ret);
  ret->add_option("--emb-a", emb_a, "Language A embeddings")->required();
  ret->add_option("--emb-b", emb_b, "Language B embeddings")->required();

  auto* mine = app.add_subcommand("mine", "Margin-based bitext mining");
  add_common(mine);
  add_model(mine);
  mine->add_option("--k", o.k, "Neighbors in the margin");
  mine->add_option("--margin", o.margin, "distance | ratio");

  auto* sts = app.add_subcommand("eval-sts", "Spearman correlation on STS pairs");
  add_common(sts);
  add_model(sts);

  auto* dump = app.add_subcommand("dump-embeddings", "Write embeddings as text for external plotting");
  add_common(dump);
  add_model(dump);
  dump->add_option("--split", o.split, "train | validation | test");

  std::vector<const char*> cargv;
  for (const auto& a : argv) cargv.push_back(a.c_str());
  if (cargv.empty()) cargv.push_back("dmc");
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalidArgs;
  }

  try {
    const RunConfig config = resolve(o);
    const fs::path out_dir = prepare_out(out);
    write_json(out_dir / "resolved_config.json", to_json(config));
    if (gen->parsed()) cmd_gen_data(config, out_dir);
    if (tr->parsed()) cmd_train(config, data_dir, out_dir);
    if (emb->parsed()) cmd_embed(config, checkpoint, data_dir, out_dir);
    if (ret->parsed()) cmd_eval_retrieval(config, emb_a, emb_b, out_dir);
    if (mine->parsed()) cmd_mine(config, checkpoint, data_dir, out_dir);
    if (sts->parsed()) cmd_eval_sts(config, checkpoint, data_dir, out_dir);
    if (dump->parsed()) cmd_dump_embeddings(config, checkpoint, data_dir, out_dir);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInternal;
  }
  return kOk;
}

}  // namespace dmc::cli
