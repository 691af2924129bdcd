#include "supportqa/training.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "supportqa/text.hpp"

namespace supportqa {

using nlohmann::json;

const char* to_string(PretrainMode m) noexcept {
  return m == PretrainMode::Sentence ? "sentence" : "qa-paragraph";
}

const char* to_string(Phase p) noexcept { return p == Phase::Pretrain ? "pretrain" : "finetune"; }

PretrainMode parse_pretrain_mode(const std::string& s) {
  if (s == "sentence") return PretrainMode::Sentence;
  if (s == "qa-paragraph") return PretrainMode::QaParagraph;
  throw ConfigError("unknown pretrain mode '" + s + "' (expected sentence or qa-paragraph)");
}

Phase parse_phase(const std::string& s) {
  if (s == "pretrain") return Phase::Pretrain;
  if (s == "finetune") return Phase::Finetune;
  throw ConfigError("unknown phase '" + s + "'");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (!(mask_fraction >= 0.0 && mask_fraction <= 1.0)) fail("mask_fraction must lie in [0, 1]");
  const auto& s = mask_split;
  if (s.replace_with_mask < 0 || s.replace_with_random < 0 || s.keep < 0 ||
      std::abs(s.replace_with_mask + s.replace_with_random + s.keep - 1.0) > 1e-9) {
    fail("mask_split must be nonnegative and sum to 1");
  }
  if (!(weight_decay >= 0.0)) fail("weight_decay must be nonnegative");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) fail("warmup_fraction must lie in [0, 1]");
}

std::string TrainConfig::to_json() const {
  json j = {{"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"epochs", epochs},
            {"mask_fraction", mask_fraction},
            {"mask_split", {mask_split.replace_with_mask, mask_split.replace_with_random, mask_split.keep}},
            {"checkpoint_every", checkpoint_every},
            {"seed", seed},
            {"weight_decay", weight_decay},
            {"warmup_fraction", warmup_fraction},
            {"pretrain_mode", to_string(pretrain_mode)},
            {"max_steps", max_steps},
            {"keep_best", keep_best}};
  return j.dump();
}

// ---------------------------------------------------------------------------
// Batches

std::vector<std::string> split_sentences(std::string_view t) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const char c = t[i];
    if ((c == '.' || c == '?' || c == '!') && (i + 1 == t.size() || text::is_ascii_space(t[i + 1]))) {
      auto s = t.substr(start, i + 1 - start);
      while (!s.empty() && text::is_ascii_space(s.front())) s.remove_prefix(1);
      if (!s.empty()) out.emplace_back(s);
      start = i + 1;
    }
  }
  auto rest = t.substr(std::min(start, t.size()));
  while (!rest.empty() && text::is_ascii_space(rest.front())) rest.remove_prefix(1);
  while (!rest.empty() && text::is_ascii_space(rest.back())) rest.remove_suffix(1);
  if (!rest.empty()) out.emplace_back(rest);
  return out;
}

void apply_masking(MaskedBatch& batch, std::size_t vocab_size, const TrainConfig& config, Rng& rng) {
  const auto n_regular = vocab_size > Vocabulary::kReserved ? vocab_size - Vocabulary::kReserved : 0;
  const double p_mask = config.mask_split.replace_with_mask;
  const double p_random = p_mask + config.mask_split.replace_with_random;
  batch.mlm_targets.resize(batch.inputs.size());
  for (std::size_t e = 0; e < batch.inputs.size(); ++e) {
    auto& in = batch.inputs[e];
    auto& targets = batch.mlm_targets[e];
    targets.assign(in.ids.size(), kNotPredicted);
    for (std::size_t i = 0; i < in.ids.size(); ++i) {
      if (!in.mask[i] || (Vocabulary::is_special(in.ids[i]) && in.ids[i] != Vocabulary::kUnk)) continue;
      if (!rng.bernoulli(config.mask_fraction)) continue;
      targets[i] = in.ids[i];
      const double u = rng.uniform();
      if (u < p_mask) {
        in.ids[i] = Vocabulary::kMask;
      } else if (u < p_random && n_regular > 0) {
        in.ids[i] = static_cast<TokenId>(Vocabulary::kReserved + rng.below(n_regular));
      }
    }
  }
}

MaskedBatch make_finetune_batch(const std::vector<QAPair>& pairs, const Vocabulary& vocab,
                                std::size_t max_seq_len) {
  MaskedBatch b;
  b.inputs.reserve(pairs.size());
  for (const auto& p : pairs) {
    b.inputs.push_back(encode_qa(p, vocab, max_seq_len));
    b.mlm_targets.emplace_back(max_seq_len, kNotPredicted);
    b.nsp_labels.push_back(true);
    b.example_ids.push_back(p.id);
  }
  return b;
}

MaskedBatch make_pretrain_batch(const std::vector<QAPair>& pairs, const Vocabulary& vocab,
                                const TrainConfig& config, PretrainMode mode,
                                std::size_t max_seq_len, Rng& rng,
                                const std::vector<QAPair>* negative_pool) {
  if (pairs.empty()) throw ValidationError("make_pretrain_batch: no pairs");
  const auto& pool = negative_pool && !negative_pool->empty() ? *negative_pool : pairs;
  MaskedBatch b;

  if (mode == PretrainMode::QaParagraph) {
    for (const auto& p : pairs) {
      const bool genuine = rng.bernoulli(0.5);
      std::string_view answer = p.answer;
      if (!genuine) {
        // Resample accidental matches; give up (and keep a genuine pair) only
        // when the pool has nothing else to offer.
        bool found = false;
        for (int tries = 0; tries < 64 && !found; ++tries) {
          const auto& other = pool[rng.below(pool.size())];
          if (other.id != p.id && other.answer != p.answer) {
            answer = other.answer;
            found = true;
          }
        }
        if (!found) answer = p.answer;
        b.nsp_labels.push_back(!found);
      } else {
        b.nsp_labels.push_back(true);
      }
      b.inputs.push_back(encode_pair(p.question, answer, vocab, max_seq_len));
      b.example_ids.push_back(p.id);
    }
  } else {
    for (const auto& p : pairs) {
      const auto sentences = split_sentences(p.question + " " + p.answer);
      if (sentences.size() < 2) {
        ++b.skipped;
        continue;
      }
      const auto j = rng.below(sentences.size() - 1);
      const bool genuine = rng.bernoulli(0.5);
      std::string next = sentences[j + 1];
      bool label = true;
      if (!genuine) {
        for (int tries = 0; tries < 64; ++tries) {
          const auto& other = pool[rng.below(pool.size())];
          if (other.id == p.id) continue;
          const auto os = split_sentences(other.question + " " + other.answer);
          if (os.empty()) continue;
          const auto& cand = os[rng.below(os.size())];
          if (cand == sentences[j + 1]) continue;
          next = cand;
          label = false;
          break;
        }
      }
      b.nsp_labels.push_back(label);
      b.inputs.push_back(encode_pair(sentences[j], next, vocab, max_seq_len));
      b.example_ids.push_back(p.id);
    }
  }
  apply_masking(b, vocab.size(), config, rng);
  return b;
}

// ---------------------------------------------------------------------------
// Loss and gradients

namespace {

// Softmax cross-entropy on one logit row; writes d(loss)/d(logits) * weight.
double softmax_xent(const RowVector& logits, Eigen::Index target, double weight, RowVector& d_logits) {
  const double m = logits.maxCoeff();
  RowVector e = (logits.array() - m).exp().matrix();
  const double z = e.sum();
  const double loss = -(logits(target) - m - std::log(z));
  d_logits = e / z;
  d_logits(target) -= 1.0;
  d_logits *= weight;
  return loss;
}

struct Accum {
  double mlm = 0, nsp = 0, cls = 0;
  std::size_t mlm_n = 0;
};

LossAndGrads run_batch(const EncoderParams& params, const MaskedBatch& batch, const Objectives& obj,
                       std::optional<std::uint64_t> dropout_seed, bool want_grads) {
  if (batch.inputs.empty()) throw ValidationError("loss_and_grads: empty batch");
  if (obj.count() == 0) throw ValidationError("loss_and_grads: no objectives requested");
  const std::size_t n = batch.size();
  const double obj_weight = 1.0 / static_cast<double>(obj.count());

  std::size_t mlm_total = 0;
  if (obj.mlm) {
    for (const auto& t : batch.mlm_targets) {
      for (auto id : t) mlm_total += id != kNotPredicted;
    }
  }
  for (std::size_t e = 0; obj.cls && e < n; ++e) {
    if (!batch.inputs[e].label) {
      throw ValidationError("loss_and_grads: example '" + batch.example_ids.at(e) + "' has no label");
    }
  }

  LossAndGrads out;
  if (want_grads) out.grads = params.zeros_like();
  Accum acc;
  const auto d = static_cast<Eigen::Index>(params.config.hidden_dim);

  for (std::size_t e = 0; e < n; ++e) {
    const auto& in = batch.inputs[e];
    std::optional<Rng> rng;
    ForwardOptions fo;
    if (dropout_seed) {
      rng.emplace(derive_seed(*dropout_seed, {e}));
      fo.training = true;
      fo.dropout_rng = &*rng;
    }
    const auto cache = forward_cached(params, in, params.layers.size(), fo);
    const auto L = static_cast<Eigen::Index>(cache.length);
    Matrix d_out = Matrix::Zero(L, d);
    RowVector d_pooled = RowVector::Zero(d);
    double example_loss = 0.0;

    if (obj.mlm && mlm_total > 0) {
      const double w = obj_weight / static_cast<double>(mlm_total);
      const auto& targets = batch.mlm_targets[e];
      for (Eigen::Index i = 0; i < L; ++i) {
        const auto t = targets[static_cast<std::size_t>(i)];
        if (t == kNotPredicted) continue;
        const RowVector logits = cache.output.row(i) * params.mlm_w + params.mlm_b.row(0);
        RowVector dl;
        const double l = softmax_xent(logits, t, w, dl);
        acc.mlm += l;
        ++acc.mlm_n;
        example_loss += l;
        if (want_grads) {
          out.grads.mlm_w.noalias() += cache.output.row(i).transpose() * dl;
          out.grads.mlm_b.row(0) += dl;
          d_out.row(i).noalias() += dl * params.mlm_w.transpose();
        }
      }
    }
    auto pooled_head = [&](bool label, double& sink) {
      const RowVector logits = cls_logits(params, cache.pooled);
      RowVector dl;
      const double l = softmax_xent(logits, label ? 0 : 1, obj_weight / static_cast<double>(n), dl);
      sink += l;
      example_loss += l;
      if (want_grads) {
        out.grads.cls_w.noalias() += cache.pooled.transpose() * dl;
        out.grads.cls_b.row(0) += dl;
        d_pooled.noalias() += dl * params.cls_w.transpose();
      }
    };
    if (obj.nsp) pooled_head(batch.nsp_labels.at(e), acc.nsp);
    if (obj.cls) pooled_head(*in.label, acc.cls);

    if (!std::isfinite(example_loss)) {
      throw NumericError("non-finite loss", batch.example_ids.empty() ? "" : batch.example_ids[e]);
    }
    if (want_grads) backward(params, cache, d_out, d_pooled, out.grads);
  }

  out.mlm_targets = acc.mlm_n;
  out.mlm_loss = acc.mlm_n ? acc.mlm / static_cast<double>(acc.mlm_n) : 0.0;
  out.nsp_loss = obj.nsp ? acc.nsp / static_cast<double>(n) : 0.0;
  out.cls_loss = obj.cls ? acc.cls / static_cast<double>(n) : 0.0;
  out.loss = obj_weight * ((obj.mlm ? out.mlm_loss : 0.0) + out.nsp_loss + out.cls_loss);
  if (!std::isfinite(out.loss)) throw NumericError("non-finite batch loss", "");
  return out;
}

}  // namespace

LossAndGrads loss_and_grads(const EncoderParams& params, const MaskedBatch& batch,
                            const Objectives& objectives, std::optional<std::uint64_t> dropout_seed) {
  return run_batch(params, batch, objectives, dropout_seed, true);
}

double batch_loss(const EncoderParams& params, const MaskedBatch& batch, const Objectives& objectives) {
  return run_batch(params, batch, objectives, std::nullopt, false).loss;
}

// ---------------------------------------------------------------------------
// Optimizer

TrainState TrainState::fresh(const EncoderParams& params) {
  TrainState s;
  s.params = params;
  s.adam_m = params.zeros_like();
  s.adam_v = params.zeros_like();
  return s;
}

double learning_rate_at(std::size_t step, std::size_t total_steps, const TrainConfig& config) {
  if (total_steps == 0) return 0.0;
  const auto warmup = static_cast<std::size_t>(
      std::max(1.0, std::round(config.warmup_fraction * static_cast<double>(total_steps))));
  if (step < warmup) {
    return config.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
  if (total_steps <= warmup) return config.learning_rate;
  const double remaining = static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
  return config.learning_rate * std::max(0.0, remaining);
}

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

bool decays(const std::string& name) {
  return name.ends_with(".w") || name == "embeddings.token" || name == "embeddings.position" ||
         name == "embeddings.segment";
}

void adamw_step(TrainState& s, const EncoderParams& grads, double lr, double weight_decay) {
  const double t = static_cast<double>(s.step + 1);
  const double c1 = 1.0 - std::pow(kBeta1, t);
  const double c2 = 1.0 - std::pow(kBeta2, t);
  auto p = s.params.named_tensors();
  auto m = s.adam_m.named_tensors();
  auto v = s.adam_v.named_tensors();
  const auto g = grads.named_tensors();
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& P = *p[i].second;
    auto& M = *m[i].second;
    auto& V = *v[i].second;
    const auto& G = *g[i].second;
    M = kBeta1 * M + (1.0 - kBeta1) * G;
    V.array() = kBeta2 * V.array() + (1.0 - kBeta2) * G.array().square();
    const double wd = decays(p[i].first) ? weight_decay : 0.0;
    P.array() -= lr * ((M.array() / c1) / ((V.array() / c2).sqrt() + kAdamEps) + wd * P.array());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Train state persistence

void save_train_state(const std::filesystem::path& path, const TrainState& s,
                      const std::string& vocab_digest) {
  Container c = encoder_to_container(s.params, vocab_digest);
  c.kind = kTrainStateKind;
  json meta = json::parse(c.metadata);
  meta["step"] = s.step;
  meta["epoch_losses"] = s.epoch_losses;
  meta["epoch_batches"] = s.epoch_batches;
  // Exact bit pattern so resumption reproduces the same running sum.
  meta["epoch_loss_sum_bits"] = std::bit_cast<std::uint64_t>(s.epoch_loss_sum);
  c.metadata = meta.dump();
  for (const auto& [name, t] : s.adam_m.named_tensors()) {
    c.tensors.push_back(ContainerTensor::from_matrix("adam.m." + name, *t));
  }
  for (const auto& [name, t] : s.adam_v.named_tensors()) {
    c.tensors.push_back(ContainerTensor::from_matrix("adam.v." + name, *t));
  }
  write_container(path, c);
}

TrainState load_train_state(const std::filesystem::path& path, std::string* vocab_digest) {
  Container c = read_container(path);
  if (c.kind != kTrainStateKind) throw FormatError("expected a train-state container, found '" + c.kind + "'");
  Container enc = c;
  enc.kind = kEncoderKind;
  TrainState s;
  s.params = encoder_from_container(enc, vocab_digest);
  s.adam_m = s.params.zeros_like();
  s.adam_v = s.params.zeros_like();
  for (auto& [name, t] : s.adam_m.named_tensors()) *t = c.tensor("adam.m." + name).to_matrix();
  for (auto& [name, t] : s.adam_v.named_tensors()) *t = c.tensor("adam.v." + name).to_matrix();
  try {
    const auto meta = json::parse(c.metadata);
    s.step = meta.at("step").get<std::size_t>();
    s.epoch_losses = meta.at("epoch_losses").get<std::vector<double>>();
    s.epoch_batches = meta.at("epoch_batches").get<std::size_t>();
    s.epoch_loss_sum = std::bit_cast<double>(meta.at("epoch_loss_sum_bits").get<std::uint64_t>());
  } catch (const json::exception& e) {
    throw FormatError(std::string("train-state metadata: ") + e.what());
  }
  return s;
}

std::string checkpoint_name(const std::string& run_id, std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "-step%04zu.ckpt", step);
  return run_id + buf;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

double accuracy_on(const EncoderParams& params, const std::vector<QAPair>& pairs, const Vocabulary& vocab) {
  if (pairs.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& p : pairs) {
    const auto e = encode_pair(p.question, p.answer, vocab, params.config.max_seq_len);
    correct += predict_quality(params, e, params.layers.size()).accepted == p.accepted;
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

}  // namespace

TrainResult resume(TrainState state, const CorpusSplit& data, Phase phase, const TrainConfig& config,
                   const Vocabulary& vocab, const std::vector<QAPair>* validation) {
  config.validate();
  state.params.check_shapes();
  if (data.train.empty()) throw ValidationError("train: data.train is empty");
  if (vocab.size() != state.params.config.vocab_size) {
    throw ConfigError("train: vocabulary size " + std::to_string(vocab.size()) +
                      " does not match model vocab_size " + std::to_string(state.params.config.vocab_size));
  }
  const auto start_time = std::chrono::steady_clock::now();
  const auto& train = data.train;
  const std::size_t n = train.size();
  const std::size_t per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total = per_epoch * config.epochs;
  const std::size_t max_seq_len = state.params.config.max_seq_len;
  const std::string vocab_digest = vocab.digest();
  const Objectives objectives = phase == Phase::Pretrain ? Objectives{true, true, false}
                                                         : Objectives{false, false, true};
  const bool dropout = state.params.config.dropout_rate > 0.0;

  TrainResult result;
  std::optional<EncoderParams> best;
  double best_acc = -1.0;
  std::size_t order_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> order;

  auto write_checkpoint = [&](const TrainState& s) {
    if (config.checkpoint_dir.empty()) return;
    const auto path = config.checkpoint_dir / checkpoint_name(config.run_id, s.step);
    try {
      std::filesystem::create_directories(config.checkpoint_dir);
      save_train_state(path, s, vocab_digest);
    } catch (const std::exception& e) {
      throw TrainingHalted(std::string("checkpoint write failed at step ") + std::to_string(s.step) +
                               ": " + e.what(),
                           s);
    }
    result.report.checkpoints.push_back(path);
    result.report.final_checkpoint = path;
  };

  while (state.step < total && (config.max_steps == 0 || state.step < config.max_steps)) {
    const std::size_t epoch = state.step / per_epoch;
    const std::size_t b = state.step % per_epoch;
    if (epoch != order_epoch) {
      order.resize(n);
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
      Rng(derive_seed(config.seed, {0xe90c, epoch})).shuffle(order);
      order_epoch = epoch;
    }
    std::vector<QAPair> chunk;
    for (std::size_t i = b * config.batch_size; i < std::min(n, (b + 1) * config.batch_size); ++i) {
      chunk.push_back(train[order[i]]);
    }
    MaskedBatch batch;
    if (phase == Phase::Pretrain) {
      Rng rng(derive_seed(config.seed, {0xba7c4, state.step}));
      batch = make_pretrain_batch(chunk, vocab, config, config.pretrain_mode, max_seq_len, rng, &train);
      if (batch.size() == 0) {
        ++state.step;
        continue;
      }
    } else {
      batch = make_finetune_batch(chunk, vocab, max_seq_len);
    }

    LossAndGrads lg;
    try {
      std::optional<std::uint64_t> dseed;
      if (dropout) dseed = derive_seed(config.seed, {0xd209, state.step});
      lg = loss_and_grads(state.params, batch, objectives, dseed);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at step " + std::to_string(state.step), e.example_id(),
                         static_cast<long>(state.step));
    }
    adamw_step(state, lg.grads, learning_rate_at(state.step, total, config), config.weight_decay);
    ++state.step;
    state.epoch_loss_sum += lg.loss;
    ++state.epoch_batches;

    const bool epoch_end = state.step % per_epoch == 0;
    if (epoch_end) {
      state.epoch_losses.push_back(state.epoch_loss_sum / static_cast<double>(state.epoch_batches));
      state.epoch_loss_sum = 0.0;
      state.epoch_batches = 0;
      if (config.keep_best && validation && !validation->empty()) {
        const double acc = accuracy_on(state.params, *validation, vocab);
        if (acc > best_acc) {
          best_acc = acc;
          best = state.params;
        }
      }
    }
    if (config.checkpoint_every && state.step % config.checkpoint_every == 0) write_checkpoint(state);
  }
  if (!config.checkpoint_dir.empty() &&
      (result.report.checkpoints.empty() ||
       result.report.final_checkpoint != config.checkpoint_dir / checkpoint_name(config.run_id, state.step))) {
    write_checkpoint(state);
  }

  result.report.epoch_losses = state.epoch_losses;
  result.report.steps = state.step;
  result.report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  if (best) {
    result.params = *best;
    result.report.best_validation_accuracy = best_acc;
  } else {
    result.params = state.params;
  }
  result.state = std::move(state);
  return result;
}

TrainResult train(const EncoderParams& params, const CorpusSplit& data, Phase phase,
                  const TrainConfig& config, const Vocabulary& vocab, const std::vector<QAPair>* validation) {
  return resume(TrainState::fresh(params), data, phase, config, vocab, validation);
}

// ---------------------------------------------------------------------------
// Run manifest

std::string format_run_manifest(const RunManifest& m) {
  std::ostringstream out;
  out.precision(17);
  out << "# supportqa run manifest v1\n";
  out << "run_id " << m.run_id << "\n";
  out << "phase " << m.phase << "\n";
  out << "seed " << m.seed << "\n";
  out << "corpus_sha256 " << m.corpus_sha256 << "\n";
  out << "vocab_sha256 " << m.vocab_sha256 << "\n";
  out << "train_config " << m.train_config_json << "\n";
  out << "encoder_config " << m.encoder_config_json << "\n";
  out << "steps " << m.steps << "\n";
  out << "wall_time_s " << m.wall_time_s << "\n";
  for (std::size_t i = 0; i < m.epoch_losses.size(); ++i) {
    out << "epoch " << i + 1 << " loss " << m.epoch_losses[i] << "\n";
  }
  for (const auto& c : m.checkpoints) out << "checkpoint " << c << "\n";
  return out.str();
}

RunManifest parse_run_manifest(std::string_view contents) {
  RunManifest m;
  std::istringstream in{std::string(contents)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto sp = line.find(' ');
    const std::string key = line.substr(0, sp);
    const std::string rest = sp == std::string::npos ? "" : line.substr(sp + 1);
    std::istringstream rs(rest);
    if (key == "run_id") m.run_id = rest;
    else if (key == "phase") m.phase = rest;
    else if (key == "seed") rs >> m.seed;
    else if (key == "corpus_sha256") m.corpus_sha256 = rest;
    else if (key == "vocab_sha256") m.vocab_sha256 = rest;
    else if (key == "train_config") m.train_config_json = rest;
    else if (key == "encoder_config") m.encoder_config_json = rest;
    else if (key == "steps") rs >> m.steps;
    else if (key == "wall_time_s") rs >> m.wall_time_s;
    else if (key == "checkpoint") m.checkpoints.push_back(rest);
    else if (key == "epoch") {
      std::size_t idx;
      std::string loss_kw;
      double loss;
      if (!(rs >> idx >> loss_kw >> loss) || loss_kw != "loss") throw ParseError("bad epoch line", line_no);
      m.epoch_losses.push_back(loss);
    } else {
      throw ParseError("unknown manifest key '" + key + "'", line_no);
    }
  }
  return m;
}

}  // namespace supportqa
