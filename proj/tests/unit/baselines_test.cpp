#include <gtest/gtest.h>

#include <cmath>

#include "supportqa/baselines.hpp"
#include "supportqa/errors.hpp"
#include "supportqa/tokenizer.hpp"
#include "test_support.hpp"

using namespace supportqa;

TEST(Tfidf, HandComputedWeights) {
  // N = 2; df(a) = 2, df(b) = df(c) = 1.
  const auto m = tfidf_fit({"a b", "a c"});
  ASSERT_EQ(m.terms(), (std::vector<std::string>{"a", "b", "c"}));
  const double idf_rare = std::log(3.0 / 2.0) + 1.0;
  EXPECT_DOUBLE_EQ(m.idf()[0], 1.0);
  EXPECT_DOUBLE_EQ(m.idf()[1], idf_rare);
  const RowVector v = m.transform("a b b z");  // z unknown but counts toward length
  EXPECT_DOUBLE_EQ(v(0), 0.25);
  EXPECT_DOUBLE_EQ(v(1), 0.5 * idf_rare);
  EXPECT_DOUBLE_EQ(v(2), 0.0);
  EXPECT_EQ(m.index_of("zz"), -1);
}

TEST(Tfidf, EmptyInputsRejected) {
  EXPECT_THROW(tfidf_fit({}), ValidationError);
  EXPECT_THROW(tfidf_fit({"", "  "}), ValidationError);
  EXPECT_EQ(tfidf_fit({"a"}).transform("").size(), 1);
}

TEST(Tfidf, TermFrequencies) {
  const auto tf = term_frequencies("x y x w");
  EXPECT_DOUBLE_EQ(tf.at("x"), 0.5);
  EXPECT_DOUBLE_EQ(tf.at("y"), 0.25);
  EXPECT_TRUE(term_frequencies("").empty());
}

TEST(Tfidf, RankUsesMaximumAndLexicographicTies) {
  const std::vector<QAPair> corpus = {{"1", "b a", "a", true}, {"2", "c", "d", false}};
  const auto m = tfidf_fit({"b a a", "c d"});
  // Doc 1: a = 2/3, b = 1/3; doc 2: c = d = 1/2. All idf equal (df = 1).
  const auto top = tfidf_rank(m, corpus, 4);
  ASSERT_EQ(top.size(), 4u);
  EXPECT_EQ(top[0].first, "a");
  EXPECT_EQ(top[1].first, "c");
  EXPECT_EQ(top[2].first, "d");
  EXPECT_EQ(top[3].first, "b");
  EXPECT_NEAR(top[0].second, 2.0 / 3.0 * (std::log(1.5) + 1.0), 1e-12);
  EXPECT_EQ(tfidf_rank(m, corpus, 1).size(), 1u);
}

TEST(TfidfProperty, NonNegativeAndZeroOutsideDocument) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> docs;
    for (int d = 0; d < 5; ++d) docs.push_back(sqa_test::random_sentence(rng, 8, "abc"));
    const auto m = tfidf_fit(docs);
    const auto text = sqa_test::random_sentence(rng, 8, "abcd");
    const auto tf = term_frequencies(text);
    const RowVector v = m.transform(text);
    for (std::size_t i = 0; i < m.size(); ++i) {
      EXPECT_GE(v(static_cast<Eigen::Index>(i)), 0.0);
      if (!tf.contains(m.terms()[i])) EXPECT_EQ(v(static_cast<Eigen::Index>(i)), 0.0);
      EXPECT_GE(m.idf()[i], 1.0);
    }
  }
}

TEST(Embedding, DeterministicAndNormalizedCosine) {
  const std::vector<std::string> texts = {"disk full clean logs", "login token expired renew token",
                                          "disk slow clean cache"};
  EmbeddingConfig c;
  c.dim = 8;
  c.seed = 3;
  const auto a = embed_fit(texts, c);
  const auto b = embed_fit(texts, c);
  EXPECT_EQ(a.vectors, b.vectors);
  EXPECT_EQ(a.terms, b.terms);
  EXPECT_TRUE(std::is_sorted(a.terms.begin(), a.terms.end()));
  EXPECT_NEAR(a.cosine("disk", "disk"), 1.0, 1e-12);
  const double cs = a.cosine("disk", "token");
  EXPECT_GE(cs, -1.0);
  EXPECT_LE(cs, 1.0);
  EXPECT_THROW(a.vector("absent"), RangeError);
  EXPECT_TRUE((a.mean_vector("absent words").array() == 0.0).all());
  RowVector avg = (a.vector("disk") + a.vector("full")) / 2.0;
  EXPECT_LT((a.mean_vector("disk full nope") - avg).norm(), 1e-12);
  c.seed = 4;
  EXPECT_NE(embed_fit(texts, c).vectors, a.vectors);
}

TEST(Embedding, CooccurringWordsAreCloser) {
  // Two disjoint topics; words within a topic share contexts.
  std::vector<std::string> texts;
  for (int i = 0; i < 200; ++i) {
    texts.push_back("disk cache storage volume quota");
    texts.push_back("login token password session auth");
  }
  EmbeddingConfig c;
  c.dim = 16;
  c.epochs = 3;
  const auto t = embed_fit(texts, c);
  EXPECT_GT(t.cosine("disk", "storage"), t.cosine("disk", "token"));
  EXPECT_GT(t.cosine("login", "session"), t.cosine("login", "quota"));
}

TEST(Embedding, NeedsTwoTerms) {
  EXPECT_THROW(embed_fit({"only only"}, {}), ValidationError);
  EmbeddingConfig c;
  c.dim = 0;
  EXPECT_THROW(embed_fit({"a b"}, c), ConfigError);
}

TEST(Classifier, ZeroWeightsGiveHalf) {
  const auto clf = LinearClassifier::zeros(3);
  RowVector x(3);
  x << 1, 2, 3;
  const auto p = baseline_classify(x, clf);
  EXPECT_EQ(p.p_accepted, 0.5);
  EXPECT_THROW(baseline_classify(RowVector::Zero(2), clf), ShapeError);
}

TEST(ClassifierProperty, StableProbabilities) {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    auto clf = LinearClassifier::zeros(4);
    for (Eigen::Index i = 0; i < clf.weights.size(); ++i) clf.weights.data()[i] = rng.normal(0.0, 1e3);
    RowVector x(4);
    for (Eigen::Index i = 0; i < 4; ++i) x(i) = rng.normal(0.0, 10.0);
    const auto p = baseline_classify(x, clf);
    EXPECT_TRUE(std::isfinite(p.p_accepted));
    EXPECT_NEAR(p.p_accepted + p.p_unaccepted, 1.0, 1e-12);
    EXPECT_EQ(p.accepted, p.p_accepted >= 0.5);
  }
}

TEST(Classifier, TrainSeparatesSeparableData) {
  // One informative feature (offset and scaled, to exercise standardization)
  // plus a constant one whose spread is zero.
  Rng rng(2);
  std::vector<RowVector> xs;
  std::vector<bool> ys;
  for (int i = 0; i < 200; ++i) {
    const bool y = i % 2 == 0;
    RowVector x(2);
    x << 1000.0 + (y ? 50.0 : -50.0) + rng.normal(0.0, 10.0), 7.0;
    xs.push_back(x);
    ys.push_back(y);
  }
  const auto clf = baseline_train(xs, ys);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) correct += baseline_classify(xs[i], clf).accepted == ys[i];
  EXPECT_EQ(correct, xs.size());
  EXPECT_TRUE(clf.weights.allFinite());
  RowVector mid(2);
  mid << 1060.0, 7.0;
  EXPECT_TRUE(baseline_classify(mid, clf).accepted);
  mid << 940.0, 7.0;
  EXPECT_FALSE(baseline_classify(mid, clf).accepted);
}

TEST(Classifier, TrainRejectsBadInput) {
  EXPECT_THROW(baseline_train({}, {}), ValidationError);
  EXPECT_THROW(baseline_train({RowVector::Zero(2)}, {true, false}), ShapeError);
  EXPECT_THROW(baseline_train({RowVector::Zero(2), RowVector::Zero(3)}, {true, false}), ShapeError);
}

TEST(Features, DeclaredDimensions) {
  const QAPair pair{"x", "disk full", "clean logs", true};
  const auto m = tfidf_fit({"disk full", "clean logs now"});
  EXPECT_EQ(tfidf_pair_features(m, pair).size(), static_cast<Eigen::Index>(2 * m.size()));
  EmbeddingConfig c;
  c.dim = 6;
  const auto t = embed_fit({"disk full", "clean logs now"}, c);
  EXPECT_EQ(embedding_pair_features(t, pair).size(), 12);
  const auto vocab = build_vocab({"disk full clean logs"}, 100, 1);
  EncoderConfig ec;
  ec.vocab_size = vocab.size();
  ec.max_seq_len = 16;
  ec.hidden_dim = 8;
  ec.n_heads = 2;
  ec.n_layers = 2;
  ec.ffn_dim = 16;
  const auto p = init_params(ec, 1);
  EXPECT_EQ(frozen_encoder_features(p, vocab, pair, 2).size(), 8);
  EXPECT_EQ(frozen_encoder_features(p, vocab, pair, 1, FeaturePooling::Cls),
            extract_features(p, encode_pair(pair.question, pair.answer, vocab, 16), 1, FeaturePooling::Cls));
}

TEST(Serialization, RoundTrips) {
  const auto m = tfidf_fit({"a b", "a c"});
  EXPECT_EQ(tfidf_from_container(decode_container(encode_container(to_container(m)))), m);
  EmbeddingConfig c;
  c.dim = 4;
  const auto t = embed_fit({"a b c", "b c d"}, c);
  const auto t2 = embedding_from_container(decode_container(encode_container(to_container(t))));
  EXPECT_EQ(t2.terms, t.terms);
  EXPECT_EQ(t2.vectors, t.vectors);
  auto clf = LinearClassifier::zeros(3);
  clf.weights(1, 0) = 0.25;
  clf.bias(0, 1) = -1.5;
  const auto clf2 = linear_from_container(decode_container(encode_container(to_container(clf))));
  EXPECT_EQ(clf2.weights, clf.weights);
  EXPECT_EQ(clf2.bias, clf.bias);
  EXPECT_THROW(linear_from_container(to_container(m)), FormatError);
}
