// supportqa command-line entry point. Every subcommand returns 0 on success
// and 1 (with a message on stderr) on failure.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "supportqa/baselines.hpp"
#include "supportqa/corpus.hpp"
#include "supportqa/encoder.hpp"
#include "supportqa/evaluation.hpp"
#include "supportqa/serving.hpp"
#include "supportqa/tokenizer.hpp"
#include "supportqa/training.hpp"

namespace fs = std::filesystem;
using namespace supportqa;
using nlohmann::json;

namespace {

struct Common {
  std::uint64_t seed = 0;
};

struct DataArgs {
  fs::path corpus;
  fs::path split;
  bool raw = false;  // skip preprocessing on load
};

void add_data(CLI::App* app, DataArgs& d, bool need_split = true) {
  app->add_option("--corpus", d.corpus, "Corpus file (one JSON record per line)")->required()->check(CLI::ExistingFile);
  auto* s = app->add_option("--split", d.split, "Split manifest");
  if (need_split) s->required();
  s->check(CLI::ExistingFile);
  app->add_flag("--raw", d.raw, "Do not preprocess texts on load");
}

std::vector<QAPair> load_pairs(const DataArgs& d) {
  PreprocessConfig cfg = default_preprocess_config();
  if (d.raw) cfg = PreprocessConfig{{}, {}, false};
  auto result = load_corpus(d.corpus, cfg);
  for (const auto& issue : result.issues) {
    std::cerr << d.corpus.string() << ":" << issue.line << ": " << (issue.id.empty() ? "" : issue.id + ": ")
              << issue.message << "\n";
  }
  result.throw_if_issues();
  return result.pairs;
}

CorpusSplit load_split(const DataArgs& d) {
  return apply_split_manifest(load_pairs(d), load_split_manifest(d.split));
}

ClassCounts parse_counts(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw ConfigError("expected 'accepted,unaccepted', got '" + s + "'");
  return {std::stoul(s.substr(0, comma)), std::stoul(s.substr(comma + 1))};
}

void add_encoder_options(CLI::App* app, EncoderConfig& c) {
  app->add_option("--max-seq-len", c.max_seq_len, "Maximum encoded length")->capture_default_str();
  app->add_option("--hidden", c.hidden_dim, "Hidden width")->capture_default_str();
  app->add_option("--layers", c.n_layers, "Encoder blocks")->capture_default_str();
  app->add_option("--heads", c.n_heads, "Attention heads")->capture_default_str();
  app->add_option("--ffn", c.ffn_dim, "Feed-forward width")->capture_default_str();
  app->add_option("--dropout", c.dropout_rate, "Dropout rate")->capture_default_str();
}

void add_train_options(CLI::App* app, TrainConfig& c, std::string& mode) {
  app->add_option("--lr", c.learning_rate, "Peak learning rate")->capture_default_str();
  app->add_option("--batch-size", c.batch_size, "Examples per step")->capture_default_str();
  app->add_option("--epochs", c.epochs, "Passes over the training split")->capture_default_str();
  app->add_option("--mask-fraction", c.mask_fraction, "MLM selection probability")->capture_default_str();
  app->add_option("--weight-decay", c.weight_decay, "AdamW decoupled weight decay")->capture_default_str();
  app->add_option("--warmup", c.warmup_fraction, "Fraction of steps spent warming up")->capture_default_str();
  app->add_option("--checkpoint-every", c.checkpoint_every, "Steps between checkpoints (0 = end only)");
  app->add_option("--checkpoint-dir", c.checkpoint_dir, "Directory for training-state checkpoints");
  app->add_option("--run-id", c.run_id, "Run identifier used in file names")->capture_default_str();
  app->add_option("--max-steps", c.max_steps, "Stop after this many steps (0 = full schedule)");
  app->add_option("--pretrain-mode", mode, "qa-paragraph or sentence")->capture_default_str();
  app->add_flag("--keep-best", c.keep_best, "Keep the parameters with the best accuracy on a held-back tenth of the training split");
}

void print_json(const json& j) { std::cout << j.dump(2) << std::endl; }

json metrics_obj(const Evaluation& e) { return json::parse(metrics_json(e)); }

std::atomic<ScoringService*> g_service{nullptr};

extern "C" void on_signal(int) {
  if (auto* s = g_service.load()) s->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Q&A answer-quality pipeline: data synthesis, encoder training, evaluation and serving"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--seed", common.seed, "Random seed")->capture_default_str();

  // synth --------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Generate a planted-signal corpus");
  fs::path synth_out;
  std::size_t n_acc = 2500, n_unacc = 2500;
  double signal = 0.95;
  synth->add_option("--out", synth_out, "Output corpus file")->required();
  synth->add_option("--accepted", n_acc, "Accepted pairs")->capture_default_str();
  synth->add_option("--unaccepted", n_unacc, "Unaccepted pairs")->capture_default_str();
  synth->add_option("--signal", signal, "Signal strength in [0,1]")->capture_default_str();
  synth->add_option("--seed", common.seed, "Random seed");

  // split --------------------------------------------------------------------
  auto* split = app.add_subcommand("split", "Make a stratified train/test split manifest");
  DataArgs split_data;
  std::string train_ratio = "2000,2000", test_ratio = "500,500";
  fs::path split_out;
  add_data(split, split_data, false);
  split->add_option("--train", train_ratio, "Train counts 'accepted,unaccepted'")->capture_default_str();
  split->add_option("--test", test_ratio, "Test counts 'accepted,unaccepted'")->capture_default_str();
  split->add_option("--out", split_out, "Output manifest")->required();
  split->add_option("--seed", common.seed, "Random seed");

  // vocab --------------------------------------------------------------------
  auto* vocab_cmd = app.add_subcommand("vocab", "Induce a word-piece vocabulary from a split's training texts");
  DataArgs vocab_data;
  fs::path vocab_out;
  std::size_t vocab_max = 2000, vocab_min_freq = 2;
  add_data(vocab_cmd, vocab_data);
  vocab_cmd->add_option("--out", vocab_out, "Output vocabulary file")->required();
  vocab_cmd->add_option("--max-size", vocab_max, "Maximum vocabulary size")->capture_default_str();
  vocab_cmd->add_option("--min-freq", vocab_min_freq, "Minimum token frequency")->capture_default_str();

  // pretrain / finetune ------------------------------------------------------
  EncoderConfig enc_cfg;
  TrainConfig train_cfg;
  std::string pretrain_mode = "qa-paragraph";
  DataArgs train_data;
  fs::path train_vocab, train_init, train_out;
  auto* pretrain = app.add_subcommand("pretrain", "Masked-LM + pairing pre-training");
  auto* finetune = app.add_subcommand("finetune", "Accepted/unaccepted fine-tuning");
  for (auto* cmd : {pretrain, finetune}) {
    add_data(cmd, train_data);
    cmd->add_option("--vocab", train_vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--init", train_init, "Start from this checkpoint (random init otherwise)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--out", train_out, "Output model checkpoint")->required();
    cmd->add_option("--seed", common.seed, "Random seed");
    add_encoder_options(cmd, enc_cfg);
    add_train_options(cmd, train_cfg, pretrain_mode);
  }

  // eval ---------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split's test set");
  DataArgs eval_data;
  fs::path eval_ckpt, eval_vocab, out_dir = "results";
  std::optional<std::size_t> eval_layers;
  std::string run_id = "run";
  add_data(eval, eval_data);
  eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--vocab", eval_vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
  eval->add_option("--active-layers", eval_layers, "Blocks to run (default: all)");
  eval->add_option("--out-dir", out_dir, "Directory for result tables")->capture_default_str();
  eval->add_option("--run-id", run_id, "Result file prefix")->capture_default_str();

  // ablate -------------------------------------------------------------------
  auto* ablate = app.add_subcommand("ablate", "Layer-truncation accuracy and latency sweep");
  DataArgs ablate_data;
  TimingConfig timing;
  add_data(ablate, ablate_data);
  ablate->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  ablate->add_option("--vocab", eval_vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
  ablate->add_option("--warm", timing.warm_samples, "Samples in the amortized regime")->capture_default_str();
  ablate->add_option("--cold", timing.cold_samples, "Samples in the cold-start regime")->capture_default_str();
  ablate->add_option("--repeats", timing.repeats, "Timing repeats (median reported)")->capture_default_str();
  ablate->add_option("--out-dir", out_dir, "Directory for result tables")->capture_default_str();
  ablate->add_option("--run-id", run_id, "Result file prefix")->capture_default_str();

  // extend-vocab -------------------------------------------------------------
  auto* extend = app.add_subcommand("extend-vocab", "Append top TF-IDF corpus words to a vocabulary");
  DataArgs extend_data;
  fs::path extend_vocab_in, extend_out, extend_ckpt, extend_ckpt_out;
  std::size_t extend_k = 200;
  add_data(extend, extend_data);
  extend->add_option("--vocab", extend_vocab_in, "Vocabulary to extend")->required()->check(CLI::ExistingFile);
  extend->add_option("-k,--k", extend_k, "Number of words to add")->capture_default_str();
  extend->add_option("--out", extend_out, "Output vocabulary")->required();
  extend->add_option("--checkpoint", extend_ckpt, "Checkpoint whose embeddings to grow")->check(CLI::ExistingFile);
  extend->add_option("--out-checkpoint", extend_ckpt_out, "Where to write the grown checkpoint");
  extend->add_option("--seed", common.seed, "Seed for the new embedding rows");

  // baseline -----------------------------------------------------------------
  auto* baseline = app.add_subcommand("baseline", "Train and evaluate a context-naive baseline");
  DataArgs base_data;
  std::string base_kind = "tfidf";
  fs::path base_ckpt, base_vocab;
  std::size_t base_layer = 2;
  EmbeddingConfig emb_cfg;
  add_data(baseline, base_data);
  baseline->add_option("--kind", base_kind, "tfidf | embedding | frozen | frozen-random")
      ->check(CLI::IsMember({"tfidf", "embedding", "frozen", "frozen-random"}))
      ->capture_default_str();
  baseline->add_option("--checkpoint", base_ckpt, "Encoder for --kind frozen")->check(CLI::ExistingFile);
  baseline->add_option("--vocab", base_vocab, "Vocabulary for frozen kinds")->check(CLI::ExistingFile);
  baseline->add_option("--layer", base_layer, "Hidden layer to pool for frozen kinds")->capture_default_str();
  baseline->add_option("--embedding-dim", emb_cfg.dim, "Word-vector width")->capture_default_str();
  baseline->add_option("--out-dir", out_dir, "Directory for result tables")->capture_default_str();
  baseline->add_option("--run-id", run_id, "Result file prefix")->capture_default_str();
  baseline->add_option("--seed", common.seed, "Random seed");
  add_encoder_options(baseline, enc_cfg);

  // register -----------------------------------------------------------------
  auto* reg = app.add_subcommand("register", "Add a checkpoint + vocabulary to the model registry");
  fs::path registry_root = registry_root_from_env("registry");
  std::string model_name = "support-qa";
  fs::path reg_ckpt, reg_vocab;
  reg->add_option("--registry", registry_root, "Registry root (env SUPPORTQA_REGISTRY)")->capture_default_str();
  reg->add_option("--name", model_name, "Model name")->capture_default_str();
  reg->add_option("--checkpoint", reg_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  reg->add_option("--vocab", reg_vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);

  // serve --------------------------------------------------------------------
  auto* serve = app.add_subcommand("serve", "Run the HTTP scoring service");
  std::optional<std::uint64_t> serve_version;
  std::string bind_text;
  serve->add_option("--registry", registry_root, "Registry root (env SUPPORTQA_REGISTRY)")->capture_default_str();
  serve->add_option("--name", model_name, "Model name")->capture_default_str();
  serve->add_option("--version", serve_version, "Model version (default: latest)");
  serve->add_option("--bind", bind_text, "host:port (env SUPPORTQA_BIND, default 127.0.0.1:8080)");

  // bench --------------------------------------------------------------------
  auto* bench = app.add_subcommand("bench", "Load-test a running scoring service");
  std::size_t bench_n = 1000, bench_conc = 1;
  DataArgs bench_data;
  bench->add_option("--bind", bind_text, "host:port of the service (env SUPPORTQA_BIND)");
  bench->add_option("-n,--requests", bench_n, "Number of requests")->capture_default_str();
  bench->add_option("--concurrency", bench_conc, "Client threads")->capture_default_str();
  bench->add_option("--corpus", bench_data.corpus, "Corpus supplying request texts")
      ->required()
      ->check(CLI::ExistingFile);
  bench->add_flag("--raw", bench_data.raw, "Send texts without local preprocessing");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      const auto pairs = synthesize_corpus(common.seed, n_acc, n_unacc, signal);
      save_corpus(synth_out, pairs);
      print_json({{"out", synth_out.string()}, {"pairs", pairs.size()}, {"sha256", corpus_digest(pairs)}});
    } else if (split->parsed()) {
      const auto s = make_split(load_pairs(split_data), parse_counts(train_ratio), parse_counts(test_ratio), common.seed);
      save_split_manifest(split_out, manifest_of(s));
      print_json({{"out", split_out.string()}, {"train", s.train.size()}, {"test", s.test.size()}});
    } else if (vocab_cmd->parsed()) {
      const auto s = load_split(vocab_data);
      std::vector<std::string> texts;
      for (const auto& p : s.train) {
        texts.push_back(p.question);
        texts.push_back(p.answer);
      }
      const auto v = build_vocab(texts, vocab_max, vocab_min_freq);
      v.save(vocab_out);
      print_json({{"out", vocab_out.string()}, {"size", v.size()}, {"sha256", v.digest()}});
    } else if (pretrain->parsed() || finetune->parsed()) {
      const Phase phase = pretrain->parsed() ? Phase::Pretrain : Phase::Finetune;
      train_cfg.seed = common.seed;
      train_cfg.pretrain_mode = parse_pretrain_mode(pretrain_mode);
      auto data = load_split(train_data);
      // keep_best selects on the last tenth of the training split, never on test.
      std::vector<QAPair> validation;
      if (train_cfg.keep_best) {
        const std::size_t n_val = std::max<std::size_t>(1, data.train.size() / 10);
        if (n_val >= data.train.size()) throw ValidationError("--keep-best needs at least 2 training pairs");
        validation.assign(data.train.end() - static_cast<std::ptrdiff_t>(n_val), data.train.end());
        data.train.resize(data.train.size() - n_val);
      }
      const auto vocab = Vocabulary::load(train_vocab);
      EncoderParams init;
      if (!train_init.empty()) {
        init = load_checkpoint(train_init);
      } else {
        enc_cfg.vocab_size = vocab.size();
        init = init_params(enc_cfg, derive_seed(common.seed, {0x1417}));
      }
      const auto result = train(init, data, phase, train_cfg, vocab, train_cfg.keep_best ? &validation : nullptr);
      save_checkpoint(train_out, result.params, vocab.digest());

      RunManifest m;
      m.run_id = train_cfg.run_id;
      m.phase = to_string(phase);
      m.seed = common.seed;
      m.corpus_sha256 = corpus_digest(data.train);
      m.vocab_sha256 = vocab.digest();
      m.train_config_json = train_cfg.to_json();
      m.encoder_config_json = result.params.config.to_json();
      m.epoch_losses = result.report.epoch_losses;
      for (const auto& c : result.report.checkpoints) m.checkpoints.push_back(c.string());
      m.checkpoints.push_back(train_out.string());
      m.steps = result.report.steps;
      m.wall_time_s = result.report.wall_time_s;
      fs::path manifest = train_out;
      manifest += ".manifest";
      atomic_write_file(manifest, format_run_manifest(m));
      print_json({{"out", train_out.string()},
                  {"manifest", manifest.string()},
                  {"steps", result.report.steps},
                  {"epoch_losses", result.report.epoch_losses},
                  {"wall_time_s", result.report.wall_time_s}});
    } else if (eval->parsed()) {
      const auto data = load_split(eval_data);
      const auto params = load_checkpoint(eval_ckpt);
      const auto vocab = Vocabulary::load(eval_vocab);
      const std::size_t k = eval_layers.value_or(params.config.n_layers);
      const auto e = evaluate(params, data.test, vocab, k);
      write_metrics(out_dir, run_id, "encoder-" + std::to_string(k), e);
      json summary = {{"run_id", run_id}, {"active_layers", k}, {"metrics", metrics_obj(e)}};
      write_summary(out_dir, run_id, summary.dump(2));
      std::cout << format_metrics_tsv("encoder-" + std::to_string(k), e);
    } else if (ablate->parsed()) {
      const auto data = load_split(ablate_data);
      const auto params = load_checkpoint(eval_ckpt);
      const auto vocab = Vocabulary::load(eval_vocab);
      const auto rows = ablation_sweep(params, data.test, vocab, timing);
      write_ablation(out_dir, run_id, rows);
      json summary = {{"run_id", run_id}, {"rows", json::array()}};
      for (const auto& r : rows) {
        summary["rows"].push_back({{"layers_kept", r.layers_kept},
                                   {"accuracy", r.accuracy},
                                   {"amortized_ms_per_sample", r.amortized_ms_per_sample},
                                   {"coldstart_ms_per_sample", r.coldstart_ms_per_sample},
                                   {"metrics", metrics_obj(r.evaluation)}});
        if (r.timing_warning) std::cerr << "warning: " << *r.timing_warning << "\n";
      }
      write_summary(out_dir, run_id, summary.dump(2));
      std::cout << format_ablation_tsv(rows);
    } else if (extend->parsed()) {
      const auto pairs = extend_data.split.empty() ? load_pairs(extend_data) : load_split(extend_data).train;
      const auto base = Vocabulary::load(extend_vocab_in);
      const auto grown = extend_vocab(base, pairs, extend_k);
      grown.save(extend_out);
      if (!extend_ckpt.empty()) {
        if (extend_ckpt_out.empty()) throw ConfigError("--checkpoint needs --out-checkpoint");
        const auto params = resize_vocab(load_checkpoint(extend_ckpt), grown.size(), common.seed);
        save_checkpoint(extend_ckpt_out, params, grown.digest());
      }
      print_json({{"out", extend_out.string()}, {"added", grown.size() - base.size()}, {"size", grown.size()}});
    } else if (baseline->parsed()) {
      const auto data = load_split(base_data);
      std::function<RowVector(const QAPair&)> features;
      TfidfModel tfidf;
      EmbeddingTable table;
      EncoderParams frozen;
      Vocabulary vocab;
      std::vector<std::string> texts;
      for (const auto& p : data.train) {
        texts.push_back(p.question);
        texts.push_back(p.answer);
      }
      if (base_kind == "tfidf") {
        tfidf = tfidf_fit(texts);
        features = [&](const QAPair& p) { return tfidf_pair_features(tfidf, p); };
      } else if (base_kind == "embedding") {
        emb_cfg.seed = common.seed;
        table = embed_fit(texts, emb_cfg);
        features = [&](const QAPair& p) { return embedding_pair_features(table, p); };
      } else {
        if (base_vocab.empty()) throw ConfigError("--kind " + base_kind + " needs --vocab");
        vocab = Vocabulary::load(base_vocab);
        if (base_kind == "frozen") {
          if (base_ckpt.empty()) throw ConfigError("--kind frozen needs --checkpoint");
          frozen = load_checkpoint(base_ckpt);
        } else {
          enc_cfg.vocab_size = vocab.size();
          frozen = init_params(enc_cfg, derive_seed(common.seed, {0x1417}));
        }
        features = [&](const QAPair& p) { return frozen_encoder_features(frozen, vocab, p, base_layer); };
      }
      std::vector<RowVector> xs;
      std::vector<bool> ys;
      for (const auto& p : data.train) {
        xs.push_back(features(p));
        ys.push_back(p.accepted);
      }
      const auto clf = baseline_train(xs, ys);
      Evaluation e;
      for (const auto& p : data.test) e.matrix.add(baseline_classify(features(p), clf).accepted, p.accepted);
      e.metrics = metrics(e.matrix);
      write_metrics(out_dir, run_id, "baseline-" + base_kind, e);
      write_summary(out_dir, run_id, json{{"run_id", run_id}, {"baseline", base_kind}, {"metrics", metrics_obj(e)}}.dump(2));
      std::cout << format_metrics_tsv("baseline-" + base_kind, e);
    } else if (reg->parsed()) {
      ModelRegistry registry(registry_root);
      const auto v = registry.register_model(model_name, reg_ckpt, reg_vocab);
      const auto e = registry.entry(model_name, v);
      print_json({{"name", model_name}, {"version", v}, {"digest", e.digest}});
    } else if (serve->parsed()) {
      ModelRegistry registry(registry_root);
      ServiceOptions opts;
      opts.model_name = model_name;
      opts.version = serve_version;
      opts.bind = bind_text.empty() ? bind_from_env() : parse_bind(bind_text);
      ScoringService service(registry, opts);
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "serving " << model_name << " v" << service.model_version() << " on " << opts.bind.host << ":"
                << opts.bind.port << std::endl;
      service.run();
      g_service = nullptr;
    } else if (bench->parsed()) {
      const auto bind = bind_text.empty() ? bind_from_env() : parse_bind(bind_text);
      const auto pairs = load_pairs(bench_data);
      std::vector<ScoreRequest> reqs;
      for (const auto& p : pairs) reqs.push_back({p.question, p.answer});
      const auto r = bench_endpoint(bind.host, bind.port, bench_n, bench_conc, reqs);
      print_json({{"requests", r.requests},
                  {"concurrency", r.concurrency},
                  {"p50_ms", r.p50_ms},
                  {"p95_ms", r.p95_ms},
                  {"p99_ms", r.p99_ms},
                  {"server_p95_ms", r.server_p95_ms},
                  {"throughput_per_s", r.throughput_per_s}});
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
