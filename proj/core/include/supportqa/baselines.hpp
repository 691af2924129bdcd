#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "supportqa/container.hpp"
#include "supportqa/corpus.hpp"
#include "supportqa/encoder.hpp"
#include "supportqa/tensor.hpp"

namespace supportqa {

// Unigram TF-IDF with tf = count / document length and the smoothed
// idf = ln((1 + N) / (1 + df)) + 1.
class TfidfModel {
 public:
  TfidfModel() = default;
  TfidfModel(std::vector<std::string> terms, std::vector<double> idf, std::size_t documents);

  std::size_t size() const noexcept { return terms_.size(); }
  std::size_t documents() const noexcept { return documents_; }
  const std::vector<std::string>& terms() const noexcept { return terms_; }
  const std::vector<double>& idf() const noexcept { return idf_; }
  // -1 when the term is unknown.
  long index_of(const std::string& term) const;

  // Dense tf-idf vector of length size().
  RowVector transform(std::string_view text) const;

  friend bool operator==(const TfidfModel& a, const TfidfModel& b) {
    return a.terms_ == b.terms_ && a.idf_ == b.idf_ && a.documents_ == b.documents_;
  }

 private:
  std::vector<std::string> terms_;  // sorted; position == dimension
  std::vector<double> idf_;
  std::size_t documents_ = 0;
  std::map<std::string, std::size_t> index_;
};

TfidfModel tfidf_fit(const std::vector<std::string>& texts);

// Term frequencies of one document (count / length), keyed by term.
std::map<std::string, double> term_frequencies(std::string_view text);

// Top-k terms by their maximum tf-idf over the corpus documents (question and
// answer joined), ties broken lexicographically.
std::vector<std::pair<std::string, double>> tfidf_rank(const TfidfModel& model,
                                                       const std::vector<QAPair>& corpus, std::size_t k);

struct EmbeddingTable {
  std::vector<std::string> terms;  // sorted
  Matrix vectors;                  // terms x dim
  std::map<std::string, std::size_t> index;

  std::size_t dim() const noexcept { return static_cast<std::size_t>(vectors.cols()); }
  const Matrix::ConstRowXpr vector(const std::string& term) const;
  bool contains(const std::string& term) const { return index.contains(term); }
  double cosine(const std::string& a, const std::string& b) const;
  // Mean of in-vocabulary word vectors (zero vector when none).
  RowVector mean_vector(std::string_view text) const;
};

struct EmbeddingConfig {
  std::size_t dim = 32;
  std::size_t window = 2;
  std::size_t epochs = 5;
  std::size_t negatives = 5;
  double learning_rate = 0.025;
  std::uint64_t seed = 0;
};

// Skip-gram with negative sampling (unigram^0.75 noise distribution).
EmbeddingTable embed_fit(const std::vector<std::string>& texts, const EmbeddingConfig& config);

struct LinearClassifier {
  Matrix weights;  // feature_dim x 2; column 0 = accepted
  Matrix bias;     // 1 x 2

  std::size_t feature_dim() const noexcept { return static_cast<std::size_t>(weights.rows()); }
  static LinearClassifier zeros(std::size_t feature_dim);
};

struct BaselinePrediction {
  double p_accepted = 0.5;
  double p_unaccepted = 0.5;
  bool accepted = false;
};

BaselinePrediction baseline_classify(const RowVector& features, const LinearClassifier& clf);

struct LinearTrainConfig {
  double learning_rate = 0.5;
  std::size_t max_epochs = 2000;
  double tolerance = 1e-6;  // stop when |loss change| < tolerance
  double l2 = 1e-4;
};

// Full-batch gradient descent on softmax cross-entropy over standardized
// features; the standardization is folded back into the returned weights.
LinearClassifier baseline_train(const std::vector<RowVector>& features, const std::vector<bool>& labels,
                                const LinearTrainConfig& config = {});

// Feature pipelines, each with a fixed declared dimension.
RowVector tfidf_pair_features(const TfidfModel& model, const QAPair& pair);     // 2 x |terms|
RowVector embedding_pair_features(const EmbeddingTable& table, const QAPair& pair);  // 2 x dim
RowVector frozen_encoder_features(const EncoderParams& params, const Vocabulary& vocab, const QAPair& pair,
                                  std::size_t at_layer, FeaturePooling pooling = FeaturePooling::Mean);

// Serialization into the shared container format, distinguished by kind tag.
inline constexpr const char* kTfidfKind = "baseline-tfidf";
inline constexpr const char* kEmbeddingKind = "baseline-embedding";
inline constexpr const char* kLinearKind = "baseline-linear";

Container to_container(const TfidfModel& m);
Container to_container(const EmbeddingTable& t);
Container to_container(const LinearClassifier& c);
TfidfModel tfidf_from_container(const Container& c);
EmbeddingTable embedding_from_container(const Container& c);
LinearClassifier linear_from_container(const Container& c);

}  // namespace supportqa
