#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pclformer/ops.hpp"
#include "pclformer/random.hpp"
#include "pclformer/tensor.hpp"

namespace pclformer {

using ops::AttentionMask;

// Architecture hyper-parameters shared by every block of one former.
struct BlockConfig {
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t mlp_hidden = 64;
  std::size_t n_tokens = 4;
  std::size_t t_len = 64;
  std::size_t decoder_layers = 1;
  double ln_eps = 1e-5;

  // Throws ConfigError on a zero extent or d_model % n_heads != 0.
  void validate() const;
  std::size_t rows() const { return t_len * n_tokens; }
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

// Owns every trainable tensor of a model, in registration order.
class ParameterStore {
 public:
  Tensor add(std::string name, Tensor tensor);
  const std::vector<NamedParameter>& entries() const noexcept { return entries_; }
  std::vector<Tensor> tensors() const;
  // Throws CheckpointError when the name is unknown.
  Tensor find(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<NamedParameter> entries_;
};

// Registers freshly initialized parameters under a name prefix. Weights are
// uniform in +-1/sqrt(fan_in); the stream is derived from the seed and the
// prefix, so sub-networks never share draws.
class ParamInit {
 public:
  ParamInit(ParameterStore& store, std::uint64_t seed, std::string prefix);

  ParamInit scoped(const std::string& child) const;
  Tensor uniform(const std::string& name, Shape shape, std::size_t fan_in);
  Tensor constant(const std::string& name, Shape shape, double value);

 private:
  ParameterStore* store_;
  std::uint64_t seed_;
  std::string prefix_;
  CounterRng rng_;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParamInit init, std::size_t in, std::size_t out);
  Tensor forward(const Tensor& x) const { return ops::linear(x, weight, bias); }

  Tensor weight;
  Tensor bias;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamInit init, std::size_t width, double eps);
  Tensor forward(const Tensor& x) const { return ops::layer_norm(x, gain, bias, eps); }

  Tensor gain;
  Tensor bias;
  double eps = 1e-5;
};

// Projections around one multi-head attention call.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamInit init, std::size_t d_model, std::size_t heads);

  // Queries from `x`, keys and values from `context`.
  Tensor forward(const Tensor& x, const Tensor& context, const ops::AttentionPlan& plan,
                 ops::AttentionWeights* weights = nullptr) const;

  Linear query, key, value, output;
  std::size_t heads = 1;
};

class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamInit init, std::size_t width, std::size_t hidden);
  Tensor forward(const Tensor& x) const { return fc2.forward(ops::gelu(fc1.forward(x))); }

  Linear fc1, fc2;
};

// Attention weights captured from the stages of one block call.
struct AttentionTrace {
  ops::AttentionWeights spatial;
  ops::AttentionWeights temporal;
  ops::AttentionWeights cross;
};

// Block inputs may be [t x n x d] or [t*n x d]; outputs are always the
// [t*n x d] row layout, row = frame * n + token.
Tensor as_rows(const Tensor& x, const BlockConfig& cfg);

// Row plans for the [t*n x d] activation layout.
ops::AttentionPlan spatial_plan(std::size_t t_len, std::size_t n_tokens, std::size_t heads);
ops::AttentionPlan temporal_plan(std::size_t t_len, std::size_t n_tokens, std::size_t heads,
                                 const AttentionMask* mask = nullptr);
// Token-wise queries over `key_frames` pooled context rows.
ops::AttentionPlan cross_plan(std::size_t t_len, std::size_t n_tokens, std::size_t key_frames, std::size_t heads);

// Learned linear input projection followed by a learned additive embedding
// per (frame, token) position.
class PositionalEncoding {
 public:
  PositionalEncoding() = default;
  PositionalEncoding(ParamInit init, const BlockConfig& cfg, std::size_t input_dim);

  // x is [t x n x input_dim] or [t*n x input_dim]; returns [t*n x d_model].
  Tensor forward(const Tensor& x) const;

  Linear projection;
  Tensor embedding;
  BlockConfig cfg;
  std::size_t input_dim = 0;
};

// Spatial multi-head attention inside each frame, then temporal multi-head
// attention across frames for each token index.
class FactorizedSelfAttention {
 public:
  FactorizedSelfAttention() = default;
  FactorizedSelfAttention(ParamInit init, const BlockConfig& cfg);

  // Applies an optional temporal mask; nullptr means unmasked.
  Tensor forward(const Tensor& x, const AttentionMask* temporal_mask = nullptr,
                 AttentionTrace* trace = nullptr) const;

  MultiHeadAttention spatial;
  MultiHeadAttention temporal;
  BlockConfig cfg;
  ops::AttentionPlan spatial_rows;
};

// Factorized attention whose temporal stage is causally masked.
class MaskedSelfAttention {
 public:
  MaskedSelfAttention() = default;
  MaskedSelfAttention(ParamInit init, const BlockConfig& cfg);

  // Throws ContractError unless `mask` is the t_len x t_len causal mask.
  Tensor forward(const Tensor& x, const AttentionMask& mask, AttentionTrace* trace = nullptr) const;

  FactorizedSelfAttention inner;
};

// Pre-norm encoder block: y = x + A(LN(x)); out = y + MLP(LN(y)).
class EncoderBlock {
 public:
  EncoderBlock() = default;
  EncoderBlock(ParamInit init, const BlockConfig& cfg);

  Tensor forward(const Tensor& x, AttentionTrace* trace = nullptr) const;

  LayerNorm norm_attention;
  FactorizedSelfAttention attention;
  LayerNorm norm_mlp;
  Mlp mlp;
  BlockConfig cfg;
};

// Pre-norm decoder block: causal self-attention, cross-attention over the
// token-pooled encoder frames, then MLP, each with a residual.
class DecoderBlock {
 public:
  DecoderBlock() = default;
  DecoderBlock(ParamInit init, const BlockConfig& cfg);

  Tensor forward(const Tensor& x, const Tensor& encoded, AttentionTrace* trace = nullptr) const;

  LayerNorm norm_self;
  MaskedSelfAttention self_attention;
  LayerNorm norm_cross;
  MultiHeadAttention cross_attention;
  LayerNorm norm_mlp;
  Mlp mlp;
  BlockConfig cfg;
  AttentionMask mask;
  ops::AttentionPlan cross_rows;
};

// Mean-pools all rows, then linear -> GELU -> linear to `out_dim` logits.
class MlpHead {
 public:
  MlpHead() = default;
  MlpHead(ParamInit init, std::size_t width, std::size_t hidden, std::size_t out_dim);

  // Returns a shape-[out_dim] logit vector.
  Tensor forward(const Tensor& x) const;

  Mlp mlp;
  std::size_t out_dim = 0;
};

Tensor run_encoder(const std::vector<EncoderBlock>& blocks, Tensor x);
Tensor run_decoder(const std::vector<DecoderBlock>& blocks, Tensor x, const Tensor& encoded);

enum class AttentionMode { factorized, joint };

// Scalar multiplies spent on attention scores: joint (t*n)^2*d, factorized
// t*n^2*d + n*t^2*d.
std::uint64_t attention_op_count(const BlockConfig& cfg, AttentionMode mode);

}  // namespace pclformer
