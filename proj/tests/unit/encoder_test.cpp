#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "supportqa/container.hpp"
#include "supportqa/encoder.hpp"
#include "supportqa/errors.hpp"
#include "test_support.hpp"

using namespace supportqa;

namespace {

EncoderConfig tiny(std::size_t layers = 2, std::size_t hidden = 8, std::size_t heads = 2, std::size_t vocab = 20) {
  EncoderConfig c;
  c.vocab_size = vocab;
  c.max_seq_len = 16;
  c.hidden_dim = hidden;
  c.n_layers = layers;
  c.n_heads = heads;
  c.ffn_dim = 2 * hidden;
  c.dropout_rate = 0.0;
  return c;
}

EncodedPair random_input(Rng& rng, const EncoderConfig& c, std::size_t len) {
  EncodedPair e;
  const std::size_t real = 2 + rng.below(len - 1);
  for (std::size_t i = 0; i < len; ++i) {
    e.ids.push_back(i < real ? static_cast<TokenId>(5 + rng.below(c.vocab_size - 5)) : Vocabulary::kPad);
    e.segments.push_back(i < real && i > real / 2 ? 1 : 0);
    e.mask.push_back(i < real ? 1 : 0);
  }
  e.ids[0] = Vocabulary::kCls;
  return e;
}

// Plain-loop reference forward pass, independent of the Eigen implementation.
using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

Mat to_mat(const Matrix& m) {
  Mat out(static_cast<std::size_t>(m.rows()), Vec(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
  return out;
}

Vec affine(const Vec& x, const Matrix& w, const Matrix& b) {
  Vec y(static_cast<std::size_t>(w.cols()));
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    double s = b(0, j);
    for (Eigen::Index i = 0; i < w.rows(); ++i) s += x[i] * w(i, j);
    y[j] = s;
  }
  return y;
}

Vec norm(const Vec& x, const Matrix& g, const Matrix& b, double eps) {
  double mu = 0, var = 0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(x.size());
  for (double v : x) var += (v - mu) * (v - mu);
  var /= static_cast<double>(x.size());
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mu) / std::sqrt(var + eps) * g(0, i) + b(0, i);
  return y;
}

struct Reference {
  std::vector<Mat> hidden;
  Vec pooled;
};

Reference reference_forward(const EncoderParams& p, const EncodedPair& in, std::size_t n_active) {
  const auto& c = p.config;
  std::size_t L = 0;
  for (std::size_t i = 0; i < in.mask.size(); ++i)
    if (in.mask[i]) L = i + 1;
  const std::size_t d = c.hidden_dim, H = c.n_heads, dh = d / H;
  Mat x(L, Vec(d));
  for (std::size_t i = 0; i < L; ++i) {
    Vec e(d);
    for (std::size_t k = 0; k < d; ++k)
      e[k] = p.token_embeddings(in.ids[i], k) + p.position_embeddings(i, k) + p.segment_embeddings(in.segments[i], k);
    x[i] = norm(e, p.embedding_ln_gamma, p.embedding_ln_beta, c.layer_norm_epsilon);
  }
  Reference ref;
  for (std::size_t l = 0; l < n_active; ++l) {
    const auto& P = p.layers[l];
    Mat q(L), k(L), v(L);
    for (std::size_t i = 0; i < L; ++i) {
      q[i] = affine(x[i], P.query_w, P.query_b);
      k[i] = affine(x[i], P.key_w, P.key_b);
      v[i] = affine(x[i], P.value_w, P.value_b);
    }
    Mat ctx(L, Vec(d, 0.0));
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < L; ++i) {
        Vec s(L);
        double mx = -1e300;
        for (std::size_t j = 0; j < L; ++j) {
          if (!in.mask[j]) continue;
          double dot = 0;
          for (std::size_t t = 0; t < dh; ++t) dot += q[i][h * dh + t] * k[j][h * dh + t];
          s[j] = dot / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, s[j]);
        }
        double z = 0;
        for (std::size_t j = 0; j < L; ++j) {
          s[j] = in.mask[j] ? std::exp(s[j] - mx) : 0.0;
          z += s[j];
        }
        for (std::size_t j = 0; j < L; ++j)
          for (std::size_t t = 0; t < dh; ++t) ctx[i][h * dh + t] += s[j] / z * v[j][h * dh + t];
      }
    }
    for (std::size_t i = 0; i < L; ++i) {
      Vec a = affine(ctx[i], P.attn_out_w, P.attn_out_b);
      for (std::size_t t = 0; t < d; ++t) a[t] += x[i][t];
      Vec y = norm(a, P.attn_ln_gamma, P.attn_ln_beta, c.layer_norm_epsilon);
      Vec f = affine(y, P.ffn_in_w, P.ffn_in_b);
      for (double& u : f) u = 0.5 * u * (1.0 + std::erf(u / std::sqrt(2.0)));
      Vec o = affine(f, P.ffn_out_w, P.ffn_out_b);
      for (std::size_t t = 0; t < d; ++t) o[t] += y[t];
      x[i] = norm(o, P.ffn_ln_gamma, P.ffn_ln_beta, c.layer_norm_epsilon);
    }
    ref.hidden.push_back(x);
  }
  ref.pooled = affine(x[0], p.pooler_w, p.pooler_b);
  for (double& u : ref.pooled) u = std::tanh(u);
  return ref;
}

}  // namespace

TEST(EncoderConfig, Validation) {
  auto c = tiny();
  EXPECT_NO_THROW(c.validate());
  c.n_heads = 3;  // 8 not divisible by 3
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.n_layers = 0;
  EXPECT_THROW(init_params(c, 1), ConfigError);
  c = tiny();
  c.dropout_rate = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(EncoderConfig::from_json(tiny().to_json()), tiny());
}

TEST(InitParams, DeterministicPerSeed) {
  EXPECT_TRUE(init_params(tiny(), 3) == init_params(tiny(), 3));
  EXPECT_FALSE(init_params(tiny(), 3) == init_params(tiny(), 4));
}

TEST(InitParams, LayerNormScalesOneShiftsAndBiasesZero) {
  const auto p = init_params(tiny(), 1);
  EXPECT_TRUE((p.embedding_ln_gamma.array() == 1.0).all());
  EXPECT_TRUE((p.embedding_ln_beta.array() == 0.0).all());
  for (const auto& l : p.layers) {
    EXPECT_TRUE((l.attn_ln_gamma.array() == 1.0).all());
    EXPECT_TRUE((l.ffn_ln_gamma.array() == 1.0).all());
    EXPECT_TRUE((l.query_b.array() == 0.0).all());
    EXPECT_TRUE((l.ffn_in_b.array() == 0.0).all());
  }
  EXPECT_TRUE((p.cls_b.array() == 0.0).all());
}

TEST(InitParams, TokenEmbeddingScale) {
  EncoderConfig c;  // 2000 x 64 = 128000 draws
  const auto p = init_params(c, 7);
  const auto& t = p.token_embeddings;
  const double mean = t.mean();
  const double sd = std::sqrt((t.array() - mean).square().sum() / static_cast<double>(t.size() - 1));
  EXPECT_GE(sd, 0.018);
  EXPECT_LE(sd, 0.022);
  EXPECT_NEAR(mean, 0.0, 0.001);
}

TEST(InitParams, ShapesAndCount) {
  const auto c = tiny();
  const auto p = init_params(c, 1);
  EXPECT_NO_THROW(p.check_shapes());
  const std::size_t d = c.hidden_dim, f = c.ffn_dim, V = c.vocab_size;
  const std::size_t per_layer = 4 * (d * d + d) + 2 * 2 * d + (d * f + f) + (f * d + d);
  const std::size_t expected = V * d + c.max_seq_len * d + 2 * d + 2 * d + c.n_layers * per_layer + (d * d + d) +
                               (d * V + V) + (d * 2 + 2);
  EXPECT_EQ(p.parameter_count(), expected);
}

TEST(Forward, MatchesLoopReference) {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = init_params(tiny(2, 8, 2), rng.next());
    // Larger weights than the init scale so every nonlinearity is exercised.
    auto q = p;
    Rng w(rng.next());
    for (auto& [name, t] : q.named_tensors())
      for (Eigen::Index i = 0; i < t->size(); ++i) t->data()[i] += w.normal(0.0, 0.3);
    const auto in = random_input(rng, q.config, 10);
    const auto trace = forward(q, in, 2);
    const auto ref = reference_forward(q, in, 2);
    for (std::size_t l = 0; l < 2; ++l) {
      const auto got = to_mat(trace.hidden[l]);
      ASSERT_EQ(got.size(), ref.hidden[l].size());
      for (std::size_t i = 0; i < got.size(); ++i)
        for (std::size_t k = 0; k < got[i].size(); ++k) EXPECT_NEAR(got[i][k], ref.hidden[l][i][k], 1e-10);
    }
    for (std::size_t k = 0; k < ref.pooled.size(); ++k) EXPECT_NEAR(trace.pooled(k), ref.pooled[k], 1e-10);
  }
}

TEST(Forward, HandWorkedTwoDimensionalModel) {
  // hidden 2, one head, one block, sequence of 2 tokens. Every matrix is the
  // identity and every vector zero, so each step can be followed by hand:
  //   embeddings e0 = (1, 0), e1 = (0, 1) -> layer norm -> (1,-1), (-1,1)
  //   q = k = v = x; scores x_i.x_j / sqrt(2) = +-sqrt(2); softmax weights
  //   s = 1/(1+e^{-2 sqrt 2}) on the own row. context_0 = (2s-1)(1,-1).
  //   y_0 = LN(x_0 + context_0) = (1,-1) (any positive multiple of (1,-1)).
  //   ffn: gelu(1)=0.841345, gelu(-1)=-0.158655 -> y + f = (1.841345,-1.158655)
  //   -> LN -> (1,-1).
  EncoderConfig c;
  c.vocab_size = 7;
  c.max_seq_len = 5;
  c.hidden_dim = 2;
  c.n_heads = 1;
  c.n_layers = 1;
  c.ffn_dim = 2;
  c.dropout_rate = 0.0;
  auto p = init_params(c, 0);
  for (auto& [name, t] : p.named_tensors()) {
    if (name.ends_with(".gamma")) continue;
    t->setZero();
    if (name.ends_with(".w") && t->rows() == t->cols()) t->setIdentity();
  }
  p.token_embeddings(5, 0) = 1.0;
  p.token_embeddings(6, 1) = 1.0;
  EncodedPair in{{5, 6, 0, 0, 0}, {0, 0, 0, 0, 0}, {1, 1, 0, 0, 0}, std::nullopt};
  const auto trace = forward(p, in, 1, {false, true, nullptr});
  const double s = 1.0 / (1.0 + std::exp(-2.0 * std::sqrt(2.0)));
  EXPECT_NEAR(trace.attention[0][0](0, 0), s, 1e-12);
  EXPECT_NEAR(trace.attention[0][0](0, 1), 1.0 - s, 1e-12);
  const double tol = 1e-9;  // epsilon in the layer norm
  EXPECT_NEAR(trace.hidden[0](0, 0), 1.0, tol);
  EXPECT_NEAR(trace.hidden[0](0, 1), -1.0, tol);
  EXPECT_NEAR(trace.hidden[0](1, 0), -1.0, tol);
  EXPECT_NEAR(trace.hidden[0](1, 1), 1.0, tol);
  EXPECT_NEAR(trace.pooled(0), std::tanh(1.0), tol);
  EXPECT_NEAR(trace.pooled(1), std::tanh(-1.0), tol);
}

TEST(Forward, FullDepthIsDefault) {
  Rng rng(3);
  const auto p = init_params(tiny(3), 2);
  const auto in = random_input(rng, p.config, 12);
  const auto a = forward(p, in, 3);
  const auto b = forward(truncate(p, 3), in, 3);
  EXPECT_EQ(a.pooled, b.pooled);
  EXPECT_EQ(a.hidden.size(), 3u);
}

TEST(Forward, IdenticalEmbeddingsGiveUniformAttention) {
  auto c = tiny(1, 8, 2);
  auto p = init_params(c, 5);
  p.position_embeddings.setZero();
  p.segment_embeddings.setZero();
  EncodedPair in{{7, 7, 7, 7, 7, 0}, {0, 0, 0, 0, 0, 0}, {1, 1, 1, 1, 0, 0}, std::nullopt};
  const auto t = forward(p, in, 1, {false, true, nullptr});
  for (const auto& head : t.attention[0])
    for (Eigen::Index i = 0; i < head.rows(); ++i)
      for (Eigen::Index j = 0; j < head.cols(); ++j) EXPECT_NEAR(head(i, j), j < 4 ? 0.25 : 0.0, 1e-12);
}

TEST(Forward, RangeAndShapeErrors) {
  Rng rng(1);
  const auto p = init_params(tiny(), 1);
  const auto in = random_input(rng, p.config, 8);
  EXPECT_THROW(forward(p, in, 0), RangeError);
  EXPECT_THROW(forward(p, in, 3), RangeError);
  auto bad = in;
  bad.ids[1] = 20;
  EXPECT_THROW(forward(p, bad, 1), RangeError);
  bad = in;
  bad.mask.pop_back();
  EXPECT_THROW(forward(p, bad, 1), ShapeError);
  auto c = tiny();
  c.dropout_rate = 0.1;
  EXPECT_THROW(forward(init_params(c, 1), in, 1, {true, false, nullptr}), ConfigError);
}

TEST(ForwardProperty, AttentionRowsAndMaskedWeights) {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const auto p = init_params(tiny(2, 8, 2), rng.next());
    auto in = random_input(rng, p.config, 14);
    in.mask[1] = 0;  // a masked position inside the active range
    const auto t = forward(p, in, 2, {false, true, nullptr});
    for (const auto& layer : t.attention)
      for (const auto& head : layer)
        for (Eigen::Index i = 0; i < head.rows(); ++i) {
          double sum = 0;
          for (Eigen::Index j = 0; j < head.cols(); ++j) {
            if (in.mask[j]) sum += head(i, j);
            else EXPECT_LE(head(i, j), 1e-9);
          }
          EXPECT_NEAR(sum, 1.0, 1e-6);
        }
  }
}

TEST(ForwardProperty, LayerNormOutputsNormalized) {
  Rng rng(4);
  const auto p = init_params(tiny(2, 16, 4), 9);  // gamma 1, beta 0
  for (int trial = 0; trial < 20; ++trial) {
    const auto in = random_input(rng, p.config, 12);
    const auto t = forward(p, in, 2);
    for (const auto& h : t.hidden)
      for (Eigen::Index i = 0; i < h.rows(); ++i) {
        const double mu = h.row(i).mean();
        const double var = (h.row(i).array() - mu).square().mean();
        EXPECT_LE(std::abs(mu), 1e-6);
        EXPECT_NEAR(var, 1.0, 1e-4);
      }
  }
}

TEST(ForwardProperty, PaddingInvariance) {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const auto p = init_params(tiny(), rng.next());
    auto in = random_input(rng, p.config, 6);
    const auto short_pred = predict_quality(p, in, 2);
    const auto short_trace = forward(p, in, 2);
    const std::size_t extra = 1 + rng.below(10);
    for (std::size_t i = 0; i < extra; ++i) {
      in.ids.push_back(Vocabulary::kPad);
      in.segments.push_back(0);
      in.mask.push_back(0);
    }
    EXPECT_NEAR(predict_quality(p, in, 2).p_accepted, short_pred.p_accepted, 1e-6);
    EXPECT_EQ(forward(p, in, 2).pooled, short_trace.pooled);
  }
}

TEST(ForwardProperty, BitReproducible) {
  Rng rng(2);
  const auto p = init_params(tiny(), 3);
  const auto in = random_input(rng, p.config, 12);
  const auto a = forward(p, in, 2);
  const auto b = forward(p, in, 2);
  EXPECT_EQ(a.pooled, b.pooled);
  EXPECT_EQ(a.hidden.back(), b.hidden.back());
}

TEST(Forward, DropoutOnlyWhenTraining) {
  auto c = tiny();
  c.dropout_rate = 0.5;
  const auto p = init_params(c, 1);
  Rng rng(0);
  const auto in = random_input(rng, c, 12);
  Rng d1(5), d2(5);
  const auto eval = forward(p, in, 2);
  const auto t1 = forward(p, in, 2, {true, false, &d1});
  const auto t2 = forward(p, in, 2, {true, false, &d2});
  EXPECT_EQ(t1.pooled, t2.pooled);
  EXPECT_NE(t1.pooled, eval.pooled);
  EXPECT_EQ(forward(p, in, 2, {false, false, &d1}).pooled, eval.pooled);
}

TEST(PredictQuality, ZeroHeadGivesHalf) {
  Rng rng(1);
  auto p = init_params(tiny(), 1);
  p.cls_w.setZero();
  p.cls_b.setZero();
  const auto q = predict_quality(p, random_input(rng, p.config, 8), 2);
  EXPECT_EQ(q.p_accepted, 0.5);
  EXPECT_EQ(q.p_unaccepted, 0.5);
  EXPECT_TRUE(q.accepted);
}

TEST(PredictQuality, SaturatedBias) {
  Rng rng(1);
  auto p = init_params(tiny(), 1);
  p.cls_w.setZero();
  p.cls_b << 10.0, -10.0;
  const auto q = predict_quality(p, random_input(rng, p.config, 8), 2);
  EXPECT_GT(q.p_accepted, 0.9999);
  EXPECT_TRUE(q.accepted);
}

TEST(PredictQualityProperty, ProbabilitiesSumToOne) {
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    auto p = init_params(tiny(), rng.next());
    p.cls_w *= 1.0 + 200.0 * rng.uniform();
    const auto q = predict_quality(p, random_input(rng, p.config, 10), 1 + rng.below(2));
    EXPECT_NEAR(q.p_accepted + q.p_unaccepted, 1.0, 1e-9);
    EXPECT_GE(q.p_accepted, 0.0);
    EXPECT_LE(q.p_accepted, 1.0);
    EXPECT_EQ(q.accepted, q.p_accepted >= 0.5);
  }
}

TEST(ExtractFeatures, SingleTokenEqualsItsHiddenState) {
  const auto p = init_params(tiny(), 4);
  EncodedPair in{{2, 0, 0}, {0, 0, 0}, {1, 0, 0}, std::nullopt};
  const auto f = extract_features(p, in, 1);
  EXPECT_EQ(f, RowVector(forward(p, in, 1).hidden[0].row(0)));
}

TEST(ExtractFeatures, ClsVariantAtFullDepth) {
  Rng rng(6);
  const auto p = init_params(tiny(), 4);
  const auto in = random_input(rng, p.config, 10);
  EXPECT_EQ(extract_features(p, in, 2, FeaturePooling::Cls), RowVector(forward(p, in, 2).hidden.back().row(0)));
}

TEST(ExtractFeatures, MeanMatchesBruteForceAverage) {
  Rng rng(7);
  const auto p = init_params(tiny(), 4);
  for (int trial = 0; trial < 10; ++trial) {
    auto in = random_input(rng, p.config, 12);
    in.mask[1] = 0;
    const auto t = forward(p, in, 1);
    RowVector sum = RowVector::Zero(8);
    double n = 0;
    for (std::size_t i = 0; i < in.mask.size(); ++i)
      if (in.mask[i]) {
        sum += t.hidden[0].row(static_cast<Eigen::Index>(i));
        n += 1;
      }
    const RowVector f = extract_features(p, in, 1);
    EXPECT_EQ(f.size(), 8);
    EXPECT_LT((f - sum / n).norm(), 1e-12);
  }
  EXPECT_THROW(extract_features(p, random_input(rng, p.config, 8), 0), RangeError);
  EXPECT_THROW(extract_features(p, random_input(rng, p.config, 8), 3), RangeError);
}

TEST(Truncate, IdentityAndCounting) {
  const auto p = init_params(tiny(4), 1);
  EXPECT_TRUE(truncate(p, 4) == p);
  const auto one = truncate(p, 1);
  EXPECT_EQ(one.layers.size(), 1u);
  EXPECT_EQ(one.config.n_layers, 1u);
  EXPECT_EQ(p.layers.size(), 4u);  // original untouched
  EXPECT_EQ(one.pooler_w, p.pooler_w);
  EXPECT_THROW(truncate(p, 0), RangeError);
  EXPECT_THROW(truncate(p, 5), RangeError);
}

TEST(TruncateProperty, EquivalentToActiveLayers) {
  Rng rng(44);
  const auto p = init_params(tiny(4), 8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto in = random_input(rng, p.config, 12);
    for (std::size_t k = 1; k <= 4; ++k) {
      const auto a = predict_quality(truncate(p, k), in, k);
      const auto b = predict_quality(p, in, k);
      EXPECT_EQ(a.p_accepted, b.p_accepted);
      EXPECT_EQ(a.accepted, b.accepted);
    }
  }
}

TEST(ResizeVocab, PreservesExistingRows) {
  const auto p = init_params(tiny(), 1);
  const auto q = resize_vocab(p, 30, 2);
  EXPECT_EQ(q.config.vocab_size, 30u);
  EXPECT_EQ(q.token_embeddings.topRows(20), p.token_embeddings);
  EXPECT_EQ(q.mlm_w.leftCols(20), p.mlm_w);
  EXPECT_NO_THROW(q.check_shapes());
  EXPECT_THROW(resize_vocab(p, 10, 2), ConfigError);
}

TEST(Checkpoint, SaveLoadIsBitExact) {
  sqa_test::TempDir dir;
  const auto p = init_params(tiny(), 11);
  save_checkpoint(dir / "m.ckpt", p, "abc");
  std::string digest;
  const auto q = load_checkpoint(dir / "m.ckpt", &digest);
  EXPECT_TRUE(q == p);
  EXPECT_EQ(digest, "abc");
  EXPECT_EQ(encode_container(encoder_to_container(q, "abc")), read_file(dir / "m.ckpt"));
}

TEST(Checkpoint, CorruptionIsFormatError) {
  sqa_test::TempDir dir;
  save_checkpoint(dir / "m.ckpt", init_params(tiny(), 11), "");
  auto bytes = read_file(dir / "m.ckpt");
  EXPECT_THROW(decode_container(bytes.substr(0, bytes.size() / 2)), FormatError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_container(bad_magic), FormatError);
  Container other = decode_container(bytes);
  other.kind = "something-else";
  EXPECT_THROW(encoder_from_container(other), FormatError);
}
