#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "supportqa/container.hpp"
#include "supportqa/rng.hpp"
#include "supportqa/tensor.hpp"
#include "supportqa/tokenizer.hpp"

namespace supportqa {

struct EncoderConfig {
  std::size_t vocab_size = 2000;
  std::size_t max_seq_len = 128;
  std::size_t hidden_dim = 64;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t ffn_dim = 256;
  double dropout_rate = 0.1;
  double layer_norm_epsilon = 1e-12;

  // Throws ConfigError.
  void validate() const;
  std::size_t head_dim() const noexcept { return hidden_dim / n_heads; }

  std::string to_json() const;
  static EncoderConfig from_json(const std::string& text);
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Weight matrices are stored input-major (in_dim x out_dim) so that a row of
// activations multiplies from the left. Biases and layer-norm vectors are 1 x n.
struct LayerParams {
  Matrix query_w, query_b;
  Matrix key_w, key_b;
  Matrix value_w, value_b;
  Matrix attn_out_w, attn_out_b;
  Matrix attn_ln_gamma, attn_ln_beta;
  Matrix ffn_in_w, ffn_in_b;
  Matrix ffn_out_w, ffn_out_b;
  Matrix ffn_ln_gamma, ffn_ln_beta;
};

struct EncoderParams {
  EncoderConfig config;
  Matrix token_embeddings;     // vocab x hidden
  Matrix position_embeddings;  // max_seq_len x hidden
  Matrix segment_embeddings;   // 2 x hidden
  Matrix embedding_ln_gamma, embedding_ln_beta;
  std::vector<LayerParams> layers;
  Matrix pooler_w, pooler_b;  // hidden x hidden
  Matrix mlm_w, mlm_b;        // hidden x vocab
  Matrix cls_w, cls_b;        // hidden x 2; class 0 = accepted / genuine pairing

  std::vector<std::pair<std::string, Matrix*>> named_tensors();
  std::vector<std::pair<std::string, const Matrix*>> named_tensors() const;

  // Same shapes, all zeros (used for gradients and optimizer moments).
  EncoderParams zeros_like() const;
  std::size_t parameter_count() const;
  bool all_finite() const;
  // Throws ShapeError when any tensor disagrees with `config`.
  void check_shapes() const;

  friend bool operator==(const EncoderParams& a, const EncoderParams& b);
};

// Draws every weight from N(0, 0.02^2); biases 0, layer-norm scale 1, shift 0.
EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed);

// Grows the token embedding table and MLM head to `new_vocab_size`, drawing
// the new rows from the same N(0, 0.02^2) as initialization.
EncoderParams resize_vocab(const EncoderParams& params, std::size_t new_vocab_size,
                           std::uint64_t seed);

// Keeps the first `keep_layers` blocks; pooler and heads are reattached as-is.
EncoderParams truncate(const EncoderParams& params, std::size_t keep_layers);

struct ForwardTrace {
  // One entry per executed block, each length x hidden where `length` covers
  // positions up to the last unmasked one (trailing padding is never computed).
  std::vector<Matrix> hidden;
  RowVector pooled;
  // attention[layer][head] is length x length; empty unless requested.
  std::vector<std::vector<Matrix>> attention;
  std::size_t length = 0;
};

struct ForwardOptions {
  bool training = false;
  bool keep_attention = false;
  Rng* dropout_rng = nullptr;  // required when training with dropout_rate > 0
};

ForwardTrace forward(const EncoderParams& params, const EncodedPair& input,
                     std::size_t n_active_layers, const ForwardOptions& options = {});

struct QualityPrediction {
  double p_accepted = 0.5;
  double p_unaccepted = 0.5;
  bool accepted = false;
};

QualityPrediction predict_quality(const EncoderParams& params, const EncodedPair& input,
                                  std::size_t n_active_layers);

// logits over {accepted/genuine, unaccepted/random} from a pooled vector.
RowVector cls_logits(const EncoderParams& params, const RowVector& pooled);

enum class FeaturePooling { Mean, Cls };

RowVector extract_features(const EncoderParams& params, const EncodedPair& input,
                           std::size_t at_layer, FeaturePooling pooling = FeaturePooling::Mean);

// ---------------------------------------------------------------------------
// Training support: a forward pass that retains activations, and the exact
// reverse pass for it.

namespace detail {

struct LayerNormCache {
  Matrix xhat;
  Eigen::VectorXd inv_std;
};

struct LayerCache {
  Matrix input;
  Matrix q, k, v;
  std::vector<Matrix> probs;
  Matrix context;
  Matrix attn_drop;  // empty when dropout is off
  LayerNormCache ln1;
  Matrix y;
  Matrix ffn_pre;
  Matrix ffn_act;
  Matrix ffn_drop;
  LayerNormCache ln2;
};

struct ForwardCache {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> segments;
  std::vector<std::uint8_t> mask;
  std::size_t length = 0;
  std::size_t n_active = 0;
  LayerNormCache emb_ln;
  Matrix emb_drop;
  std::vector<LayerCache> layers;
  Matrix output;  // length x hidden
  RowVector pooled;
};

}  // namespace detail

detail::ForwardCache forward_cached(const EncoderParams& params, const EncodedPair& input,
                                    std::size_t n_active_layers, const ForwardOptions& options);

// Accumulates into `grads` the gradient of a scalar loss whose partial
// derivatives w.r.t. the final hidden states (`d_output`, length x hidden)
// and the pooled vector (`d_pooled`) are given.
void backward(const EncoderParams& params, const detail::ForwardCache& cache,
              const Matrix& d_output, const RowVector& d_pooled, EncoderParams& grads);

// ---------------------------------------------------------------------------
// Checkpoints: a container of kind "encoder" holding the config, the digest of
// the vocabulary the model was trained with, and every tensor by name.

inline constexpr const char* kEncoderKind = "encoder";

Container encoder_to_container(const EncoderParams& params, const std::string& vocab_digest);
EncoderParams encoder_from_container(const Container& c, std::string* vocab_digest = nullptr);
void save_checkpoint(const std::filesystem::path& path, const EncoderParams& params,
                     const std::string& vocab_digest);
EncoderParams load_checkpoint(const std::filesystem::path& path, std::string* vocab_digest = nullptr);

}  // namespace supportqa
