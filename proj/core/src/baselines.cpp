#include "supportqa/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "supportqa/errors.hpp"
#include "supportqa/rng.hpp"
#include "supportqa/text.hpp"

namespace supportqa {

using nlohmann::json;

// ---------------------------------------------------------------------------
// TF-IDF

TfidfModel::TfidfModel(std::vector<std::string> terms, std::vector<double> idf, std::size_t documents)
    : terms_(std::move(terms)), idf_(std::move(idf)), documents_(documents) {
  if (terms_.size() != idf_.size()) throw ShapeError("tfidf: terms and idf lengths differ");
  for (std::size_t i = 0; i < terms_.size(); ++i) {
    if (!index_.emplace(terms_[i], i).second) throw ValidationError("tfidf: duplicate term '" + terms_[i] + "'");
  }
}

long TfidfModel::index_of(const std::string& term) const {
  auto it = index_.find(term);
  return it == index_.end() ? -1 : static_cast<long>(it->second);
}

std::map<std::string, double> term_frequencies(std::string_view t) {
  const auto w = text::words(t);
  std::map<std::string, double> tf;
  for (const auto& x : w) tf[x] += 1.0;
  for (auto& [term, c] : tf) c /= static_cast<double>(w.size());
  return tf;
}

RowVector TfidfModel::transform(std::string_view t) const {
  RowVector v = RowVector::Zero(static_cast<Eigen::Index>(terms_.size()));
  for (const auto& [term, tf] : term_frequencies(t)) {
    const long i = index_of(term);
    if (i >= 0) v(i) = tf * idf_[static_cast<std::size_t>(i)];
  }
  return v;
}

TfidfModel tfidf_fit(const std::vector<std::string>& texts) {
  if (texts.empty()) throw ValidationError("tfidf_fit: no documents");
  std::map<std::string, std::size_t> df;
  for (const auto& t : texts) {
    auto w = text::words(t);
    std::sort(w.begin(), w.end());
    w.erase(std::unique(w.begin(), w.end()), w.end());
    for (const auto& x : w) ++df[x];
  }
  if (df.empty()) throw ValidationError("tfidf_fit: every document is empty");
  const double n = static_cast<double>(texts.size());
  std::vector<std::string> terms;
  std::vector<double> idf;
  for (const auto& [term, count] : df) {
    terms.push_back(term);
    idf.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(count))) + 1.0);
  }
  return TfidfModel(std::move(terms), std::move(idf), texts.size());
}

std::vector<std::pair<std::string, double>> tfidf_rank(const TfidfModel& model,
                                                       const std::vector<QAPair>& corpus, std::size_t k) {
  std::map<std::string, double> best;
  for (const auto& p : corpus) {
    for (const auto& [term, tf] : term_frequencies(p.question + " " + p.answer)) {
      const long i = model.index_of(term);
      if (i < 0) continue;
      const double s = tf * model.idf()[static_cast<std::size_t>(i)];
      auto [it, inserted] = best.emplace(term, s);
      if (!inserted && s > it->second) it->second = s;
    }
  }
  std::vector<std::pair<std::string, double>> ranked(best.begin(), best.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > k) ranked.resize(k);
  return ranked;
}

// ---------------------------------------------------------------------------
// Skip-gram embeddings

const Matrix::ConstRowXpr EmbeddingTable::vector(const std::string& term) const {
  auto it = index.find(term);
  if (it == index.end()) throw RangeError("embedding: unknown term '" + term + "'");
  return vectors.row(static_cast<Eigen::Index>(it->second));
}

double EmbeddingTable::cosine(const std::string& a, const std::string& b) const {
  const RowVector va = vector(a);
  const RowVector vb = vector(b);
  const double denom = va.norm() * vb.norm();
  return denom > 0 ? va.dot(vb) / denom : 0.0;
}

RowVector EmbeddingTable::mean_vector(std::string_view t) const {
  RowVector sum = RowVector::Zero(vectors.cols());
  std::size_t n = 0;
  for (const auto& w : text::words(t)) {
    auto it = index.find(w);
    if (it == index.end()) continue;
    sum += vectors.row(static_cast<Eigen::Index>(it->second));
    ++n;
  }
  return n ? RowVector(sum / static_cast<double>(n)) : sum;
}

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

EmbeddingTable make_table(std::vector<std::string> terms, Matrix vectors) {
  EmbeddingTable t;
  t.terms = std::move(terms);
  t.vectors = std::move(vectors);
  for (std::size_t i = 0; i < t.terms.size(); ++i) t.index.emplace(t.terms[i], i);
  return t;
}

}  // namespace

EmbeddingTable embed_fit(const std::vector<std::string>& texts, const EmbeddingConfig& config) {
  if (config.dim < 1) throw ConfigError("embed_fit: dim must be >= 1");
  std::vector<std::vector<std::string>> docs;
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts) {
    docs.push_back(text::words(t));
    for (const auto& w : docs.back()) ++counts[w];
  }
  if (counts.size() < 2) throw ValidationError("embed_fit: need at least 2 distinct terms");

  std::vector<std::string> terms;
  std::map<std::string, std::size_t> idx;
  std::vector<double> noise_cdf;
  double z = 0.0;
  for (const auto& [term, c] : counts) {
    idx.emplace(term, terms.size());
    terms.push_back(term);
    z += std::pow(static_cast<double>(c), 0.75);
    noise_cdf.push_back(z);
  }
  for (auto& c : noise_cdf) c /= z;

  std::vector<std::vector<std::size_t>> ids(docs.size());
  std::size_t total_tokens = 0;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    for (const auto& w : docs[d]) ids[d].push_back(idx.at(w));
    total_tokens += ids[d].size();
  }

  const auto V = static_cast<Eigen::Index>(terms.size());
  const auto D = static_cast<Eigen::Index>(config.dim);
  Rng rng(derive_seed(config.seed, {0xe3b}));
  Matrix in(V, D), out = Matrix::Zero(V, D);
  for (Eigen::Index i = 0; i < in.size(); ++i) in.data()[i] = (rng.uniform() - 0.5) / static_cast<double>(D);

  auto sample_noise = [&]() {
    const double u = rng.uniform();
    const auto it = std::upper_bound(noise_cdf.begin(), noise_cdf.end(), u);
    return static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - noise_cdf.begin(), V - 1));
  };

  const double total_work = static_cast<double>(std::max<std::size_t>(1, total_tokens * config.epochs));
  double done = 0.0;
  RowVector grad_in(D);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& doc : ids) {
      for (std::size_t i = 0; i < doc.size(); ++i, done += 1.0) {
        const double lr = config.learning_rate * std::max(1e-4, 1.0 - done / total_work);
        const std::size_t shrink = config.window > 0 ? rng.below(config.window) : 0;
        const std::size_t win = config.window - shrink;
        const std::size_t lo = i >= win ? i - win : 0;
        const std::size_t hi = std::min(doc.size() - 1, i + win);
        const auto center = static_cast<Eigen::Index>(doc[i]);
        for (std::size_t j = lo; j <= hi; ++j) {
          if (j == i) continue;
          grad_in.setZero();
          for (std::size_t s = 0; s <= config.negatives; ++s) {
            const auto target = static_cast<Eigen::Index>(s == 0 ? doc[j] : sample_noise());
            if (s > 0 && target == static_cast<Eigen::Index>(doc[j])) continue;
            const double label = s == 0 ? 1.0 : 0.0;
            const double g = (label - sigmoid(in.row(center).dot(out.row(target)))) * lr;
            grad_in += g * out.row(target);
            out.row(target) += g * in.row(center);
          }
          in.row(center) += grad_in;
        }
      }
    }
  }
  return make_table(std::move(terms), std::move(in));
}

// ---------------------------------------------------------------------------
// Linear softmax classifier

LinearClassifier LinearClassifier::zeros(std::size_t feature_dim) {
  return {Matrix::Zero(static_cast<Eigen::Index>(feature_dim), 2), Matrix::Zero(1, 2)};
}

BaselinePrediction baseline_classify(const RowVector& features, const LinearClassifier& clf) {
  if (static_cast<std::size_t>(features.size()) != clf.feature_dim()) {
    throw ShapeError("baseline_classify: feature dimension " + std::to_string(features.size()) +
                     " but classifier expects " + std::to_string(clf.feature_dim()));
  }
  const RowVector logits = features * clf.weights + clf.bias.row(0);
  const double diff = logits(1) - logits(0);
  BaselinePrediction p;
  if (diff > 0) {
    const double e = std::exp(-diff);
    p.p_unaccepted = 1.0 / (1.0 + e);
    p.p_accepted = e / (1.0 + e);
  } else {
    const double e = std::exp(diff);
    p.p_accepted = 1.0 / (1.0 + e);
    p.p_unaccepted = e / (1.0 + e);
  }
  p.accepted = p.p_accepted >= 0.5;
  return p;
}

LinearClassifier baseline_train(const std::vector<RowVector>& features, const std::vector<bool>& labels,
                                const LinearTrainConfig& config) {
  if (features.empty()) throw ValidationError("baseline_train: no examples");
  if (features.size() != labels.size()) throw ShapeError("baseline_train: features/labels length mismatch");
  const auto n = static_cast<Eigen::Index>(features.size());
  const auto D = features[0].size();
  Matrix X(n, D);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (features[static_cast<std::size_t>(i)].size() != D) {
      throw ShapeError("baseline_train: inconsistent feature dimensions");
    }
    X.row(i) = features[static_cast<std::size_t>(i)];
  }
  const RowVector mu = X.colwise().mean();
  RowVector sigma = ((X.rowwise() - mu).array().square().colwise().sum() / static_cast<double>(n)).sqrt().matrix();
  for (Eigen::Index j = 0; j < D; ++j) {
    if (!(sigma(j) > 1e-12)) sigma(j) = 1.0;
  }
  Matrix Xs = (X.rowwise() - mu).array().rowwise() / sigma.array();

  Matrix Y = Matrix::Zero(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) Y(i, labels[static_cast<std::size_t>(i)] ? 0 : 1) = 1.0;

  Matrix W = Matrix::Zero(D, 2);
  RowVector b = RowVector::Zero(2);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    Matrix logits = Xs * W;
    logits.rowwise() += b;
    Matrix P(n, 2);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double m = logits.row(i).maxCoeff();
      const double e0 = std::exp(logits(i, 0) - m), e1 = std::exp(logits(i, 1) - m);
      P(i, 0) = e0 / (e0 + e1);
      P(i, 1) = e1 / (e0 + e1);
      loss -= std::log(std::max(1e-300, Y(i, 0) ? P(i, 0) : P(i, 1)));
    }
    loss = loss / static_cast<double>(n) + 0.5 * config.l2 * W.squaredNorm();
    if (std::abs(prev - loss) < config.tolerance) break;
    prev = loss;
    const Matrix G = (P - Y) / static_cast<double>(n);
    W -= config.learning_rate * (Xs.transpose() * G + config.l2 * W);
    b -= config.learning_rate * G.colwise().sum();
  }

  LinearClassifier clf;
  clf.weights = W.array().colwise() / sigma.transpose().array();
  clf.bias = (b - mu * clf.weights);
  return clf;
}

RowVector tfidf_pair_features(const TfidfModel& model, const QAPair& pair) {
  RowVector v(2 * static_cast<Eigen::Index>(model.size()));
  v << model.transform(pair.question), model.transform(pair.answer);
  return v;
}

RowVector embedding_pair_features(const EmbeddingTable& table, const QAPair& pair) {
  RowVector v(2 * static_cast<Eigen::Index>(table.dim()));
  v << table.mean_vector(pair.question), table.mean_vector(pair.answer);
  return v;
}

RowVector frozen_encoder_features(const EncoderParams& params, const Vocabulary& vocab, const QAPair& pair,
                                  std::size_t at_layer, FeaturePooling pooling) {
  const auto e = encode_pair(pair.question, pair.answer, vocab, params.config.max_seq_len);
  return extract_features(params, e, at_layer, pooling);
}

// ---------------------------------------------------------------------------
// Serialization

Container to_container(const TfidfModel& m) {
  Container c;
  c.kind = kTfidfKind;
  c.metadata = json{{"terms", m.terms()}, {"documents", m.documents()}}.dump();
  Matrix idf(1, static_cast<Eigen::Index>(m.size()));
  for (std::size_t i = 0; i < m.size(); ++i) idf(0, static_cast<Eigen::Index>(i)) = m.idf()[i];
  c.tensors.push_back(ContainerTensor::from_matrix("idf", idf));
  return c;
}

Container to_container(const EmbeddingTable& t) {
  Container c;
  c.kind = kEmbeddingKind;
  c.metadata = json{{"terms", t.terms}}.dump();
  c.tensors.push_back(ContainerTensor::from_matrix("vectors", t.vectors));
  return c;
}

Container to_container(const LinearClassifier& clf) {
  Container c;
  c.kind = kLinearKind;
  c.metadata = "{}";
  c.tensors.push_back(ContainerTensor::from_matrix("weights", clf.weights));
  c.tensors.push_back(ContainerTensor::from_matrix("bias", clf.bias));
  return c;
}

namespace {

json parse_meta(const Container& c, const char* kind) {
  if (c.kind != kind) throw FormatError(std::string("expected ") + kind + " container, found '" + c.kind + "'");
  try {
    return json::parse(c.metadata);
  } catch (const json::exception& e) {
    throw FormatError(std::string(kind) + " metadata: " + e.what());
  }
}

}  // namespace

TfidfModel tfidf_from_container(const Container& c) {
  const auto meta = parse_meta(c, kTfidfKind);
  const auto idf = c.tensor("idf").values;
  return TfidfModel(meta.at("terms").get<std::vector<std::string>>(), idf,
                    meta.at("documents").get<std::size_t>());
}

EmbeddingTable embedding_from_container(const Container& c) {
  const auto meta = parse_meta(c, kEmbeddingKind);
  auto terms = meta.at("terms").get<std::vector<std::string>>();
  Matrix v = c.tensor("vectors").to_matrix();
  if (static_cast<std::size_t>(v.rows()) != terms.size()) throw ShapeError("embedding: row/term count mismatch");
  return make_table(std::move(terms), std::move(v));
}

LinearClassifier linear_from_container(const Container& c) {
  parse_meta(c, kLinearKind);
  LinearClassifier clf{c.tensor("weights").to_matrix(), c.tensor("bias").to_matrix()};
  if (clf.weights.cols() != 2 || clf.bias.rows() != 1 || clf.bias.cols() != 2) {
    throw ShapeError("linear classifier: unexpected shapes");
  }
  return clf;
}

}  // namespace supportqa
