#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "supportqa/corpus.hpp"
#include "supportqa/encoder.hpp"
#include "supportqa/tokenizer.hpp"

namespace supportqa {

// Positive class = accepted.
struct ConfusionMatrix {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::size_t total() const noexcept { return tp + fp + fn + tn; }
  void add(bool predicted_accepted, bool actually_accepted) noexcept;
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct EvalMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double specificity = 0.0;
  double f1 = 0.0;
  // Set when some ratio had a zero denominator and was reported as 0.
  bool degenerate = false;
  std::vector<std::string> degenerate_fields;
};

// Throws ValidationError on an empty matrix.
EvalMetrics metrics(const ConfusionMatrix& cm);

// Harmonic mean of precision and recall; 0 when both are 0.
double f1_score(double precision, double recall) noexcept;

struct ExcludedExample {
  std::string id;
  std::string reason;
};

struct Evaluation {
  ConfusionMatrix matrix;
  EvalMetrics metrics;
  std::vector<ExcludedExample> excluded;
};

// Classifies every pair with predict_quality. Pairs that fail to encode or
// produce a non-finite probability are listed in `excluded` instead.
Evaluation evaluate(const EncoderParams& params, const std::vector<QAPair>& test, const Vocabulary& vocab,
                    std::size_t n_active_layers);

struct TimingConfig {
  std::size_t warm_samples = 5000;
  std::size_t cold_samples = 300;
  std::size_t repeats = 5;
  bool include_load = true;

  void validate() const;
};

struct TimingResult {
  // Per-sample figures. Each is the mean over its leading samples of the
  // per-position median across repeats; cold-start adds the median load and
  // initialization time spread over cold_samples.
  double amortized_ms = 0.0;
  double coldstart_ms = 0.0;
  double load_ms = 0.0;       // median load + initialization time
  std::optional<std::string> warning;
};

// Each repeat deserializes the model from its checkpoint bytes (load and
// initialization), then times single-example inference on the leading inputs.
// Measured sections run on the calling thread only, pinned to its current CPU
// where the platform allows it. Reported figures are medians over repeats.
TimingResult timing_harness(const EncoderParams& params, const std::vector<EncodedPair>& inputs,
                            const TimingConfig& config);

struct AblationRow {
  std::size_t layers_kept = 0;
  double accuracy = 0.0;
  double amortized_ms_per_sample = 0.0;
  double coldstart_ms_per_sample = 0.0;
  Evaluation evaluation;
  std::optional<std::string> timing_warning;
};

// One row per depth from the full model down to a single block. Timing inputs
// are a fixed shuffled pool of at most 100 encoded test pairs, cycled to the
// sample counts the config asks for.
std::vector<AblationRow> ablation_sweep(const EncoderParams& params, const std::vector<QAPair>& test,
                                        const Vocabulary& vocab, const TimingConfig& timing = {});

// Tab-separated outputs and a JSON run summary, named after the run id:
//   <dir>/<run_id>.metrics.tsv, <dir>/<run_id>.ablation.tsv, <dir>/<run_id>.summary.json
std::string format_metrics_tsv(const std::string& label, const Evaluation& e);
std::string format_ablation_tsv(const std::vector<AblationRow>& rows);
std::filesystem::path write_metrics(const std::filesystem::path& dir, const std::string& run_id,
                                    const std::string& label, const Evaluation& e);
std::filesystem::path write_ablation(const std::filesystem::path& dir, const std::string& run_id,
                                     const std::vector<AblationRow>& rows);
std::filesystem::path write_summary(const std::filesystem::path& dir, const std::string& run_id,
                                    const std::string& summary_json);

std::string metrics_json(const Evaluation& e);

}  // namespace supportqa
