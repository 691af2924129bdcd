#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "supportqa/corpus.hpp"
#include "supportqa/encoder.hpp"
#include "supportqa/errors.hpp"
#include "supportqa/tokenizer.hpp"

namespace supportqa {

enum class PretrainMode { Sentence, QaParagraph };
enum class Phase { Pretrain, Finetune };

const char* to_string(PretrainMode m) noexcept;
const char* to_string(Phase p) noexcept;
PretrainMode parse_pretrain_mode(const std::string& s);
Phase parse_phase(const std::string& s);

struct MaskSplit {
  double replace_with_mask = 0.8;
  double replace_with_random = 0.1;
  double keep = 0.1;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  std::size_t epochs = 3;
  double mask_fraction = 0.15;
  MaskSplit mask_split;
  std::size_t checkpoint_every = 0;  // steps; 0 disables periodic checkpoints
  std::uint64_t seed = 0;
  double weight_decay = 0.01;
  double warmup_fraction = 0.1;
  PretrainMode pretrain_mode = PretrainMode::QaParagraph;
  // Stop after this many optimizer steps (0 = run the whole schedule). The
  // learning-rate schedule still spans the full epochs, so a stopped run can
  // be resumed to the same result as an uninterrupted one.
  std::size_t max_steps = 0;
  std::filesystem::path checkpoint_dir;  // empty: no files written
  std::string run_id = "run";
  // Keep the parameters with the best validation accuracy (evaluated at each
  // epoch end) instead of the last ones. Needs validation pairs.
  bool keep_best = false;

  void validate() const;
  std::string to_json() const;
};

inline constexpr TokenId kNotPredicted = -1;

struct MaskedBatch {
  std::vector<EncodedPair> inputs;
  std::vector<std::vector<TokenId>> mlm_targets;  // kNotPredicted where no loss
  std::vector<bool> nsp_labels;                   // true = genuine continuation / pairing
  std::vector<std::string> example_ids;
  std::size_t skipped = 0;  // sentence mode: documents with < 2 sentences

  std::size_t size() const noexcept { return inputs.size(); }
};

// Sentence boundaries: '.', '?' or '!' followed by whitespace or end of text.
std::vector<std::string> split_sentences(std::string_view text);

MaskedBatch make_pretrain_batch(const std::vector<QAPair>& pairs, const Vocabulary& vocab,
                                const TrainConfig& config, PretrainMode mode,
                                std::size_t max_seq_len, Rng& rng,
                                const std::vector<QAPair>* negative_pool = nullptr);

// Plain encoding with the accepted label attached; no masking.
MaskedBatch make_finetune_batch(const std::vector<QAPair>& pairs, const Vocabulary& vocab,
                                std::size_t max_seq_len);

// Selects each eligible position (real, non-special) with probability
// mask_fraction, then applies the MASK/random/keep split.
void apply_masking(MaskedBatch& batch, std::size_t vocab_size, const TrainConfig& config, Rng& rng);

struct Objectives {
  bool mlm = false;
  bool nsp = false;
  bool cls = false;
  std::size_t count() const noexcept { return mlm + nsp + cls; }
};

struct LossAndGrads {
  double loss = 0.0;  // mean of the requested objectives' mean cross-entropies
  double mlm_loss = 0.0;
  double nsp_loss = 0.0;
  double cls_loss = 0.0;
  std::size_t mlm_targets = 0;
  EncoderParams grads;
};

// Dropout is active iff `dropout_seed` is set (each example gets its own
// stream derived from it).
LossAndGrads loss_and_grads(const EncoderParams& params, const MaskedBatch& batch,
                            const Objectives& objectives,
                            std::optional<std::uint64_t> dropout_seed = std::nullopt);

// Scalar loss only (same definition), used by the finite-difference oracle.
double batch_loss(const EncoderParams& params, const MaskedBatch& batch, const Objectives& objectives);

struct TrainState {
  EncoderParams params;
  EncoderParams adam_m;
  EncoderParams adam_v;
  std::size_t step = 0;
  std::vector<double> epoch_losses;
  double epoch_loss_sum = 0.0;
  std::size_t epoch_batches = 0;

  static TrainState fresh(const EncoderParams& params);
};

inline constexpr const char* kTrainStateKind = "train-state";

void save_train_state(const std::filesystem::path& path, const TrainState& state,
                      const std::string& vocab_digest);
TrainState load_train_state(const std::filesystem::path& path, std::string* vocab_digest = nullptr);

struct TrainReport {
  std::vector<double> epoch_losses;
  std::size_t steps = 0;
  double wall_time_s = 0.0;
  std::filesystem::path final_checkpoint;
  std::vector<std::filesystem::path> checkpoints;
  std::optional<double> best_validation_accuracy;
};

struct TrainResult {
  EncoderParams params;
  TrainReport report;
  TrainState state;
};

// Checkpoint write failed; `state` is the last consistent state and can be
// passed to resume().
class TrainingHalted : public Error {
 public:
  TrainingHalted(const std::string& message, TrainState state)
      : Error(message), state_(std::move(state)) {}
  const TrainState& state() const noexcept { return state_; }

 private:
  TrainState state_;
};

// Pretrain optimizes {mlm, nsp}; finetune optimizes {cls}. Only data.train is
// used for optimization; `validation` feeds keep_best.
TrainResult train(const EncoderParams& params, const CorpusSplit& data, Phase phase,
                  const TrainConfig& config, const Vocabulary& vocab,
                  const std::vector<QAPair>* validation = nullptr);

TrainResult resume(TrainState state, const CorpusSplit& data, Phase phase, const TrainConfig& config,
                   const Vocabulary& vocab, const std::vector<QAPair>* validation = nullptr);

double learning_rate_at(std::size_t step, std::size_t total_steps, const TrainConfig& config);

std::string checkpoint_name(const std::string& run_id, std::size_t step);

// Line-oriented run log: "key value" lines, one "epoch <i> loss <x>" line per
// epoch and one "checkpoint <path>" line per file written.
struct RunManifest {
  std::string run_id;
  std::string phase;
  std::uint64_t seed = 0;
  std::string corpus_sha256;
  std::string vocab_sha256;
  std::string train_config_json;
  std::string encoder_config_json;
  std::vector<double> epoch_losses;
  std::vector<std::string> checkpoints;
  std::size_t steps = 0;
  double wall_time_s = 0.0;
};

std::string format_run_manifest(const RunManifest& m);
RunManifest parse_run_manifest(std::string_view contents);

}  // namespace supportqa
