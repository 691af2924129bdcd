#include "supportqa/encoder.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>

#include "json.hpp"
#include "supportqa/errors.hpp"

namespace supportqa {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void EncoderConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("encoder config: " + m); };
  if (vocab_size < Vocabulary::kReserved) fail("vocab_size must cover the reserved tokens");
  if (max_seq_len < 5) fail("max_seq_len must be at least 5");
  if (hidden_dim == 0 || n_layers == 0 || n_heads == 0 || ffn_dim == 0) fail("all counts must be >= 1");
  if (hidden_dim % n_heads != 0) fail("hidden_dim must be divisible by n_heads");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must lie in [0, 1)");
  if (!(layer_norm_epsilon > 0.0)) fail("layer_norm_epsilon must be positive");
}

std::string EncoderConfig::to_json() const {
  json j = {{"vocab_size", vocab_size}, {"max_seq_len", max_seq_len}, {"hidden_dim", hidden_dim},
            {"n_layers", n_layers},     {"n_heads", n_heads},         {"ffn_dim", ffn_dim},
            {"dropout_rate", dropout_rate}, {"layer_norm_epsilon", layer_norm_epsilon}};
  return j.dump();
}

EncoderConfig EncoderConfig::from_json(const std::string& text) {
  try {
    const auto j = json::parse(text);
    EncoderConfig c;
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
    c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.layer_norm_epsilon = j.at("layer_norm_epsilon").get<double>();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("encoder config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Parameter bookkeeping

namespace {

template <class P, class Ptr>
std::vector<std::pair<std::string, Ptr>> collect(P& p) {
  std::vector<std::pair<std::string, Ptr>> out;
  out.emplace_back("embeddings.token", &p.token_embeddings);
  out.emplace_back("embeddings.position", &p.position_embeddings);
  out.emplace_back("embeddings.segment", &p.segment_embeddings);
  out.emplace_back("embeddings.ln.gamma", &p.embedding_ln_gamma);
  out.emplace_back("embeddings.ln.beta", &p.embedding_ln_beta);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    out.emplace_back(pre + "attn.query.w", &L.query_w);
    out.emplace_back(pre + "attn.query.b", &L.query_b);
    out.emplace_back(pre + "attn.key.w", &L.key_w);
    out.emplace_back(pre + "attn.key.b", &L.key_b);
    out.emplace_back(pre + "attn.value.w", &L.value_w);
    out.emplace_back(pre + "attn.value.b", &L.value_b);
    out.emplace_back(pre + "attn.out.w", &L.attn_out_w);
    out.emplace_back(pre + "attn.out.b", &L.attn_out_b);
    out.emplace_back(pre + "attn.ln.gamma", &L.attn_ln_gamma);
    out.emplace_back(pre + "attn.ln.beta", &L.attn_ln_beta);
    out.emplace_back(pre + "ffn.in.w", &L.ffn_in_w);
    out.emplace_back(pre + "ffn.in.b", &L.ffn_in_b);
    out.emplace_back(pre + "ffn.out.w", &L.ffn_out_w);
    out.emplace_back(pre + "ffn.out.b", &L.ffn_out_b);
    out.emplace_back(pre + "ffn.ln.gamma", &L.ffn_ln_gamma);
    out.emplace_back(pre + "ffn.ln.beta", &L.ffn_ln_beta);
  }
  out.emplace_back("pooler.w", &p.pooler_w);
  out.emplace_back("pooler.b", &p.pooler_b);
  out.emplace_back("mlm.w", &p.mlm_w);
  out.emplace_back("mlm.b", &p.mlm_b);
  out.emplace_back("cls.w", &p.cls_w);
  out.emplace_back("cls.b", &p.cls_b);
  return out;
}

struct Shape {
  Eigen::Index rows, cols;
};

std::vector<Shape> expected_shapes(const EncoderConfig& c, std::size_t n_layers) {
  const auto d = static_cast<Eigen::Index>(c.hidden_dim);
  const auto f = static_cast<Eigen::Index>(c.ffn_dim);
  const auto v = static_cast<Eigen::Index>(c.vocab_size);
  std::vector<Shape> s = {{v, d}, {static_cast<Eigen::Index>(c.max_seq_len), d}, {2, d}, {1, d}, {1, d}};
  for (std::size_t l = 0; l < n_layers; ++l) {
    for (int i = 0; i < 4; ++i) {
      s.push_back({d, d});
      s.push_back({1, d});
    }
    s.push_back({1, d});
    s.push_back({1, d});
    s.push_back({d, f});
    s.push_back({1, f});
    s.push_back({f, d});
    s.push_back({1, d});
    s.push_back({1, d});
    s.push_back({1, d});
  }
  s.push_back({d, d});
  s.push_back({1, d});
  s.push_back({d, v});
  s.push_back({1, v});
  s.push_back({d, 2});
  s.push_back({1, 2});
  return s;
}

bool is_layer_norm_gamma(const std::string& name) { return name.ends_with("ln.gamma"); }
bool is_matrix_weight(const std::string& name) {
  return name.ends_with(".w") || name.starts_with("embeddings.token") ||
         name.starts_with("embeddings.position") || name.starts_with("embeddings.segment");
}

}  // namespace

std::vector<std::pair<std::string, Matrix*>> EncoderParams::named_tensors() {
  return collect<EncoderParams, Matrix*>(*this);
}

std::vector<std::pair<std::string, const Matrix*>> EncoderParams::named_tensors() const {
  return collect<const EncoderParams, const Matrix*>(*this);
}

EncoderParams EncoderParams::zeros_like() const {
  EncoderParams z = *this;
  for (auto& [name, t] : z.named_tensors()) t->setZero();
  return z;
}

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_tensors()) n += static_cast<std::size_t>(t->size());
  return n;
}

bool EncoderParams::all_finite() const {
  for (const auto& [name, t] : named_tensors()) {
    if (!t->allFinite()) return false;
  }
  return true;
}

void EncoderParams::check_shapes() const {
  config.validate();
  if (layers.size() != config.n_layers) {
    throw ShapeError("encoder params: " + std::to_string(layers.size()) +
                     " layers but config says " + std::to_string(config.n_layers));
  }
  const auto shapes = expected_shapes(config, layers.size());
  const auto tensors = named_tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = *tensors[i].second;
    if (t.rows() != shapes[i].rows || t.cols() != shapes[i].cols) {
      throw ShapeError("tensor " + tensors[i].first + " has shape " + std::to_string(t.rows()) +
                       "x" + std::to_string(t.cols()) + ", expected " +
                       std::to_string(shapes[i].rows) + "x" + std::to_string(shapes[i].cols));
    }
  }
}

bool operator==(const EncoderParams& a, const EncoderParams& b) {
  if (!(a.config == b.config) || a.layers.size() != b.layers.size()) return false;
  const auto ta = a.named_tensors();
  const auto tb = b.named_tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    const auto& x = *ta[i].second;
    const auto& y = *tb[i].second;
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    // Bitwise comparison so -0.0 / NaN payloads count as differences.
    if (std::memcmp(x.data(), y.data(), sizeof(double) * static_cast<std::size_t>(x.size())) != 0) {
      return false;
    }
  }
  return true;
}

EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  EncoderParams p;
  p.config = config;
  p.layers.resize(config.n_layers);
  const auto shapes = expected_shapes(config, config.n_layers);
  auto tensors = p.named_tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& [name, t] = tensors[i];
    t->resize(shapes[i].rows, shapes[i].cols);
    if (is_layer_norm_gamma(name)) {
      t->setOnes();
    } else if (is_matrix_weight(name)) {
      Rng rng(derive_seed(seed, {0x1417, i}));
      for (Eigen::Index k = 0; k < t->size(); ++k) t->data()[k] = rng.normal(0.0, 0.02);
    } else {
      t->setZero();
    }
  }
  return p;
}

EncoderParams resize_vocab(const EncoderParams& params, std::size_t new_vocab_size,
                           std::uint64_t seed) {
  const auto old_v = params.config.vocab_size;
  if (new_vocab_size < old_v) throw ConfigError("resize_vocab: vocabulary can only grow");
  EncoderParams p = params;
  p.config.vocab_size = new_vocab_size;
  const auto d = static_cast<Eigen::Index>(params.config.hidden_dim);
  const auto nv = static_cast<Eigen::Index>(new_vocab_size);
  const auto ov = static_cast<Eigen::Index>(old_v);
  Rng rng(derive_seed(seed, {0x7e51e, old_v, new_vocab_size}));

  p.token_embeddings.conservativeResize(nv, d);
  for (Eigen::Index r = ov; r < nv; ++r) {
    for (Eigen::Index c = 0; c < d; ++c) p.token_embeddings(r, c) = rng.normal(0.0, 0.02);
  }
  p.mlm_w.conservativeResize(d, nv);
  for (Eigen::Index r = 0; r < d; ++r) {
    for (Eigen::Index c = ov; c < nv; ++c) p.mlm_w(r, c) = rng.normal(0.0, 0.02);
  }
  p.mlm_b.conservativeResize(1, nv);
  for (Eigen::Index c = ov; c < nv; ++c) p.mlm_b(0, c) = 0.0;
  return p;
}

EncoderParams truncate(const EncoderParams& params, std::size_t keep_layers) {
  if (keep_layers < 1 || keep_layers > params.layers.size()) {
    throw RangeError("truncate: keep_layers " + std::to_string(keep_layers) + " outside [1, " +
                     std::to_string(params.layers.size()) + "]");
  }
  EncoderParams p = params;
  p.layers.resize(keep_layers);
  p.config.n_layers = keep_layers;
  return p;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps,
                  detail::LayerNormCache* cache) {
  const auto n = x.rows();
  const auto d = static_cast<double>(x.cols());
  Matrix xhat(n, x.cols());
  Eigen::VectorXd inv(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = x.row(r).sum() / d;
    const double var = (x.row(r).array() - mu).square().sum() / d;
    inv(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mu) * inv(r);
  }
  Matrix y = xhat;
  y.array().rowwise() *= gamma.row(0).array();
  y.rowwise() += beta.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
  return y;
}

// d_in given d_out; accumulates gamma/beta gradients.
Matrix layer_norm_backward(const Matrix& d_out, const detail::LayerNormCache& cache,
                           const Matrix& gamma, Matrix& d_gamma, Matrix& d_beta) {
  d_gamma.row(0) += (d_out.array() * cache.xhat.array()).colwise().sum().matrix();
  d_beta.row(0) += d_out.colwise().sum();
  Matrix dxhat = d_out;
  dxhat.array().rowwise() *= gamma.row(0).array();
  const auto n = d_out.rows();
  const double d = static_cast<double>(d_out.cols());
  Matrix dx(n, d_out.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean_d = dxhat.row(r).sum() / d;
    const double mean_dx = dxhat.row(r).dot(cache.xhat.row(r)) / d;
    dx.row(r) = cache.inv_std(r) *
                (dxhat.row(r).array() - mean_d - cache.xhat.row(r).array() * mean_dx).matrix();
  }
  return dx;
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Matrix m(rows, cols);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < rate ? 0.0 : keep_scale;
  return m;
}

std::size_t active_length(const EncodedPair& input) {
  std::size_t last = 0;
  bool any = false;
  for (std::size_t i = 0; i < input.mask.size(); ++i) {
    if (input.mask[i]) {
      last = i;
      any = true;
    }
  }
  return any ? last + 1 : 1;
}

void check_input(const EncoderParams& params, const EncodedPair& input, std::size_t n_active) {
  if (n_active < 1 || n_active > params.layers.size()) {
    throw RangeError("n_active_layers " + std::to_string(n_active) + " outside [1, " +
                     std::to_string(params.layers.size()) + "]");
  }
  if (input.ids.size() != input.segments.size() || input.ids.size() != input.mask.size()) {
    throw ShapeError("encoded pair: ids/segments/mask lengths differ");
  }
  if (input.ids.empty() || input.ids.size() > params.config.max_seq_len) {
    throw ShapeError("encoded pair length " + std::to_string(input.ids.size()) +
                     " outside [1, max_seq_len=" + std::to_string(params.config.max_seq_len) + "]");
  }
  for (std::size_t i = 0; i < input.ids.size(); ++i) {
    const auto id = input.ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= params.config.vocab_size) {
      throw RangeError("token id " + std::to_string(id) + " outside model vocabulary of size " +
                       std::to_string(params.config.vocab_size));
    }
    if (input.segments[i] > 1) throw RangeError("segment id must be 0 or 1");
  }
}

bool use_dropout(const EncoderParams& p, const ForwardOptions& o) {
  if (!o.training || p.config.dropout_rate <= 0.0) return false;
  if (!o.dropout_rng) throw ConfigError("forward: training with dropout requires a dropout_rng");
  return true;
}

}  // namespace

detail::ForwardCache forward_cached(const EncoderParams& params, const EncodedPair& input,
                                    std::size_t n_active_layers, const ForwardOptions& options) {
  check_input(params, input, n_active_layers);
  const auto& cfg = params.config;
  const bool dropout = use_dropout(params, options);
  const double rate = cfg.dropout_rate;
  const auto L = static_cast<Eigen::Index>(active_length(input));
  const auto d = static_cast<Eigen::Index>(cfg.hidden_dim);
  const auto H = cfg.n_heads;
  const auto dh = static_cast<Eigen::Index>(cfg.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  detail::ForwardCache c;
  c.ids.assign(input.ids.begin(), input.ids.begin() + L);
  c.segments.assign(input.segments.begin(), input.segments.begin() + L);
  c.mask.assign(input.mask.begin(), input.mask.begin() + L);
  c.length = static_cast<std::size_t>(L);
  c.n_active = n_active_layers;

  Matrix emb(L, d);
  for (Eigen::Index i = 0; i < L; ++i) {
    emb.row(i) = params.token_embeddings.row(c.ids[i]) + params.position_embeddings.row(i) +
                 params.segment_embeddings.row(c.segments[i]);
  }
  Matrix x = layer_norm(emb, params.embedding_ln_gamma, params.embedding_ln_beta,
                        cfg.layer_norm_epsilon, &c.emb_ln);
  if (dropout) {
    c.emb_drop = dropout_mask(L, d, rate, *options.dropout_rng);
    x.array() *= c.emb_drop.array();
  }

  c.layers.resize(n_active_layers);
  for (std::size_t l = 0; l < n_active_layers; ++l) {
    const auto& P = params.layers[l];
    auto& lc = c.layers[l];
    lc.input = x;
    lc.q = x * P.query_w;
    lc.q.rowwise() += P.query_b.row(0);
    lc.k = x * P.key_w;
    lc.k.rowwise() += P.key_b.row(0);
    lc.v = x * P.value_w;
    lc.v.rowwise() += P.value_b.row(0);

    lc.context.resize(L, d);
    lc.probs.resize(H);
    for (std::size_t h = 0; h < H; ++h) {
      const auto off = static_cast<Eigen::Index>(h) * dh;
      Matrix s = (lc.q.middleCols(off, dh) * lc.k.middleCols(off, dh).transpose()) * scale;
      for (Eigen::Index j = 0; j < L; ++j) {
        if (!c.mask[j]) s.col(j).setConstant(-std::numeric_limits<double>::infinity());
      }
      for (Eigen::Index i = 0; i < L; ++i) {
        const double m = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - m).exp().matrix();
        s.row(i) /= s.row(i).sum();
      }
      lc.context.middleCols(off, dh).noalias() = s * lc.v.middleCols(off, dh);
      lc.probs[h] = std::move(s);
    }
    Matrix attn = lc.context * P.attn_out_w;
    attn.rowwise() += P.attn_out_b.row(0);
    if (dropout) {
      lc.attn_drop = dropout_mask(L, d, rate, *options.dropout_rng);
      attn.array() *= lc.attn_drop.array();
    }
    lc.y = layer_norm(x + attn, P.attn_ln_gamma, P.attn_ln_beta, cfg.layer_norm_epsilon, &lc.ln1);

    lc.ffn_pre = lc.y * P.ffn_in_w;
    lc.ffn_pre.rowwise() += P.ffn_in_b.row(0);
    lc.ffn_act = lc.ffn_pre.unaryExpr([](double v) { return gelu(v); });
    Matrix f = lc.ffn_act * P.ffn_out_w;
    f.rowwise() += P.ffn_out_b.row(0);
    if (dropout) {
      lc.ffn_drop = dropout_mask(L, d, rate, *options.dropout_rng);
      f.array() *= lc.ffn_drop.array();
    }
    x = layer_norm(lc.y + f, P.ffn_ln_gamma, P.ffn_ln_beta, cfg.layer_norm_epsilon, &lc.ln2);
  }
  c.output = x;
  c.pooled = (x.row(0) * params.pooler_w + params.pooler_b.row(0)).array().tanh().matrix();
  return c;
}

ForwardTrace forward(const EncoderParams& params, const EncodedPair& input,
                     std::size_t n_active_layers, const ForwardOptions& options) {
  auto cache = forward_cached(params, input, n_active_layers, options);
  ForwardTrace t;
  t.length = cache.length;
  t.pooled = cache.pooled;
  t.hidden.reserve(n_active_layers);
  for (std::size_t l = 0; l + 1 < cache.layers.size(); ++l) t.hidden.push_back(cache.layers[l + 1].input);
  t.hidden.push_back(cache.output);
  if (options.keep_attention) {
    for (auto& lc : cache.layers) t.attention.push_back(std::move(lc.probs));
  }
  return t;
}

RowVector cls_logits(const EncoderParams& params, const RowVector& pooled) {
  return pooled * params.cls_w + params.cls_b.row(0);
}

QualityPrediction predict_quality(const EncoderParams& params, const EncodedPair& input,
                                  std::size_t n_active_layers) {
  const auto trace = forward(params, input, n_active_layers);
  const RowVector logits = cls_logits(params, trace.pooled);
  // Two-class softmax written so that p_accepted + p_unaccepted rounds to 1.
  const double diff = logits(1) - logits(0);
  QualityPrediction out;
  if (diff > 0) {
    const double e = std::exp(-diff);
    out.p_unaccepted = 1.0 / (1.0 + e);
    out.p_accepted = e / (1.0 + e);
  } else {
    const double e = std::exp(diff);
    out.p_accepted = 1.0 / (1.0 + e);
    out.p_unaccepted = e / (1.0 + e);
  }
  out.accepted = out.p_accepted >= 0.5;
  return out;
}

RowVector extract_features(const EncoderParams& params, const EncodedPair& input,
                           std::size_t at_layer, FeaturePooling pooling) {
  if (at_layer < 1 || at_layer > params.layers.size()) {
    throw RangeError("extract_features: at_layer " + std::to_string(at_layer) + " outside [1, " +
                     std::to_string(params.layers.size()) + "]");
  }
  const auto trace = forward(params, input, at_layer);
  const Matrix& h = trace.hidden.back();
  if (pooling == FeaturePooling::Cls) return h.row(0);
  RowVector sum = RowVector::Zero(h.cols());
  std::size_t n = 0;
  for (std::size_t i = 0; i < trace.length; ++i) {
    if (input.mask[i]) {
      sum += h.row(static_cast<Eigen::Index>(i));
      ++n;
    }
  }
  return n ? RowVector(sum / static_cast<double>(n)) : sum;
}

// ---------------------------------------------------------------------------
// Backward

void backward(const EncoderParams& params, const detail::ForwardCache& c, const Matrix& d_output,
              const RowVector& d_pooled, EncoderParams& g) {
  const auto& cfg = params.config;
  const auto L = static_cast<Eigen::Index>(c.length);
  const auto d = static_cast<Eigen::Index>(cfg.hidden_dim);
  const auto H = cfg.n_heads;
  const auto dh = static_cast<Eigen::Index>(cfg.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (d_output.rows() != L || d_output.cols() != d) throw ShapeError("backward: d_output shape");

  Matrix dx = d_output;
  {
    // pooled = tanh(h0 Wp + bp)
    const RowVector d_pre = (d_pooled.array() * (1.0 - c.pooled.array().square())).matrix();
    g.pooler_w.noalias() += c.output.row(0).transpose() * d_pre;
    g.pooler_b.row(0) += d_pre;
    dx.row(0).noalias() += d_pre * params.pooler_w.transpose();
  }

  for (std::size_t li = c.n_active; li-- > 0;) {
    const auto& P = params.layers[li];
    auto& G = g.layers[li];
    const auto& lc = c.layers[li];

    Matrix d_r2 = layer_norm_backward(dx, lc.ln2, P.ffn_ln_gamma, G.ffn_ln_gamma, G.ffn_ln_beta);
    Matrix d_y = d_r2;
    Matrix d_f = d_r2;
    if (lc.ffn_drop.size()) d_f.array() *= lc.ffn_drop.array();
    G.ffn_out_w.noalias() += lc.ffn_act.transpose() * d_f;
    G.ffn_out_b.row(0) += d_f.colwise().sum();
    Matrix d_act = d_f * P.ffn_out_w.transpose();
    Matrix d_pre = d_act.cwiseProduct(lc.ffn_pre.unaryExpr([](double v) { return gelu_grad(v); }));
    G.ffn_in_w.noalias() += lc.y.transpose() * d_pre;
    G.ffn_in_b.row(0) += d_pre.colwise().sum();
    d_y.noalias() += d_pre * P.ffn_in_w.transpose();

    Matrix d_r1 = layer_norm_backward(d_y, lc.ln1, P.attn_ln_gamma, G.attn_ln_gamma, G.attn_ln_beta);
    Matrix d_in = d_r1;
    Matrix d_attn = d_r1;
    if (lc.attn_drop.size()) d_attn.array() *= lc.attn_drop.array();
    G.attn_out_w.noalias() += lc.context.transpose() * d_attn;
    G.attn_out_b.row(0) += d_attn.colwise().sum();
    Matrix d_ctx = d_attn * P.attn_out_w.transpose();

    Matrix dq = Matrix::Zero(L, d), dk = Matrix::Zero(L, d), dv = Matrix::Zero(L, d);
    for (std::size_t h = 0; h < H; ++h) {
      const auto off = static_cast<Eigen::Index>(h) * dh;
      const Matrix& p = lc.probs[h];
      const auto d_ctx_h = d_ctx.middleCols(off, dh);
      Matrix d_p = d_ctx_h * lc.v.middleCols(off, dh).transpose();
      dv.middleCols(off, dh).noalias() += p.transpose() * d_ctx_h;
      Matrix d_s(L, L);
      for (Eigen::Index i = 0; i < L; ++i) {
        const double dot = d_p.row(i).dot(p.row(i));
        d_s.row(i) = (p.row(i).array() * (d_p.row(i).array() - dot)).matrix();
      }
      d_s *= scale;
      dq.middleCols(off, dh).noalias() += d_s * lc.k.middleCols(off, dh);
      dk.middleCols(off, dh).noalias() += d_s.transpose() * lc.q.middleCols(off, dh);
    }
    G.query_w.noalias() += lc.input.transpose() * dq;
    G.query_b.row(0) += dq.colwise().sum();
    G.key_w.noalias() += lc.input.transpose() * dk;
    G.key_b.row(0) += dk.colwise().sum();
    G.value_w.noalias() += lc.input.transpose() * dv;
    G.value_b.row(0) += dv.colwise().sum();
    d_in.noalias() += dq * P.query_w.transpose();
    d_in.noalias() += dk * P.key_w.transpose();
    d_in.noalias() += dv * P.value_w.transpose();
    dx = std::move(d_in);
  }

  if (c.emb_drop.size()) dx.array() *= c.emb_drop.array();
  Matrix d_emb = layer_norm_backward(dx, c.emb_ln, params.embedding_ln_gamma, g.embedding_ln_gamma,
                                     g.embedding_ln_beta);
  for (Eigen::Index i = 0; i < L; ++i) {
    g.token_embeddings.row(c.ids[i]) += d_emb.row(i);
    g.position_embeddings.row(i) += d_emb.row(i);
    g.segment_embeddings.row(c.segments[i]) += d_emb.row(i);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

Container encoder_to_container(const EncoderParams& params, const std::string& vocab_digest) {
  Container c;
  c.kind = kEncoderKind;
  json meta = {{"config", json::parse(params.config.to_json())}, {"vocab_sha256", vocab_digest}};
  c.metadata = meta.dump();
  for (const auto& [name, t] : params.named_tensors()) {
    c.tensors.push_back(ContainerTensor::from_matrix(name, *t));
  }
  return c;
}

EncoderParams encoder_from_container(const Container& c, std::string* vocab_digest) {
  if (c.kind != kEncoderKind) throw FormatError("expected an encoder container, found '" + c.kind + "'");
  json meta;
  try {
    meta = json::parse(c.metadata);
  } catch (const json::exception& e) {
    throw FormatError(std::string("encoder metadata: ") + e.what());
  }
  if (!meta.contains("config")) throw FormatError("encoder metadata has no config");
  EncoderParams p;
  p.config = EncoderConfig::from_json(meta["config"].dump());
  p.config.validate();
  p.layers.resize(p.config.n_layers);
  for (auto& [name, t] : p.named_tensors()) *t = c.tensor(name).to_matrix();
  p.check_shapes();
  if (!p.all_finite()) throw FormatError("encoder checkpoint contains non-finite values");
  if (vocab_digest) *vocab_digest = meta.value("vocab_sha256", "");
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const EncoderParams& params,
                     const std::string& vocab_digest) {
  write_container(path, encoder_to_container(params, vocab_digest));
}

EncoderParams load_checkpoint(const std::filesystem::path& path, std::string* vocab_digest) {
  return encoder_from_container(read_container(path), vocab_digest);
}

}  // namespace supportqa
