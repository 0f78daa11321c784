#include "pclformer/transformer.hpp"

#include <cmath>

#include "pclformer/error.hpp"

namespace pclformer {

void BlockConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("block config: ") + name + " must be >= 1");
  };
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(n_layers, "n_layers");
  positive(mlp_hidden, "mlp_hidden");
  positive(n_tokens, "n_tokens");
  positive(t_len, "t_len");
  if (d_model % n_heads != 0) {
    throw ConfigError("block config: d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (!(ln_eps > 0.0)) throw ConfigError("block config: ln_eps must be positive");
}

Tensor ParameterStore::add(std::string name, Tensor tensor) {
  for (const auto& e : entries_) {
    if (e.name == name) throw ContractError("duplicate parameter name " + name);
  }
  tensor.set_requires_grad(true);
  entries_.push_back({std::move(name), tensor});
  return tensor;
}

std::vector<Tensor> ParameterStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.tensor);
  return out;
}

Tensor ParameterStore::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw CheckpointError("unknown parameter " + name);
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

ParamInit::ParamInit(ParameterStore& store, std::uint64_t seed, std::string prefix)
    : store_(&store), seed_(seed), prefix_(std::move(prefix)), rng_(derive_key(seed, prefix_)) {}

ParamInit ParamInit::scoped(const std::string& child) const {
  return ParamInit(*store_, seed_, prefix_.empty() ? child : prefix_ + "." + child);
}

Tensor ParamInit::uniform(const std::string& name, Shape shape, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = rng_.uniform(-bound, bound);
  return store_->add(prefix_ + "." + name, Tensor(std::move(shape), std::move(data)));
}

Tensor ParamInit::constant(const std::string& name, Shape shape, double value) {
  return store_->add(prefix_ + "." + name, Tensor::full(std::move(shape), value));
}

Linear::Linear(ParamInit init, std::size_t in, std::size_t out)
    : weight(init.uniform("weight", {in, out}, in)), bias(init.constant("bias", {out}, 0.0)) {}

LayerNorm::LayerNorm(ParamInit init, std::size_t width, double eps_)
    : gain(init.constant("gain", {width}, 1.0)), bias(init.constant("bias", {width}, 0.0)), eps(eps_) {}

MultiHeadAttention::MultiHeadAttention(ParamInit init, std::size_t d_model, std::size_t heads_)
    : query(init.scoped("query"), d_model, d_model),
      key(init.scoped("key"), d_model, d_model),
      value(init.scoped("value"), d_model, d_model),
      output(init.scoped("output"), d_model, d_model),
      heads(heads_) {}

Tensor MultiHeadAttention::forward(const Tensor& x, const Tensor& context, const ops::AttentionPlan& plan,
                                   ops::AttentionWeights* weights) const {
  const Tensor q = query.forward(x);
  const Tensor k = key.forward(context);
  const Tensor v = value.forward(context);
  return output.forward(ops::attention(q, k, v, plan, weights));
}

Mlp::Mlp(ParamInit init, std::size_t width, std::size_t hidden)
    : fc1(init.scoped("fc1"), width, hidden), fc2(init.scoped("fc2"), hidden, width) {}

Tensor as_rows(const Tensor& x, const BlockConfig& cfg) {
  const Shape expected{cfg.t_len, cfg.n_tokens, cfg.d_model};
  if (x.rank() == 3) {
    if (x.shape() != expected) {
      throw DimensionError("block input " + shape_to_string(x.shape()) + " does not match config " +
                           shape_to_string(expected));
    }
    return ops::reshape(x, {cfg.rows(), cfg.d_model});
  }
  if (x.rank() != 2 || x.dim(0) != cfg.rows() || x.dim(1) != cfg.d_model) {
    throw DimensionError("block input " + shape_to_string(x.shape()) + " does not match config " +
                         shape_to_string(expected));
  }
  return x;
}

ops::AttentionPlan spatial_plan(std::size_t t_len, std::size_t n_tokens, std::size_t heads) {
  ops::AttentionPlan plan;
  plan.heads = heads;
  for (std::size_t f = 0; f < t_len; ++f) {
    std::vector<std::size_t> rows(n_tokens);
    for (std::size_t j = 0; j < n_tokens; ++j) rows[j] = f * n_tokens + j;
    plan.query_rows.push_back(rows);
    plan.key_rows.push_back(std::move(rows));
  }
  return plan;
}

ops::AttentionPlan temporal_plan(std::size_t t_len, std::size_t n_tokens, std::size_t heads,
                                 const AttentionMask* mask) {
  ops::AttentionPlan plan;
  plan.heads = heads;
  for (std::size_t j = 0; j < n_tokens; ++j) {
    std::vector<std::size_t> rows(t_len);
    for (std::size_t f = 0; f < t_len; ++f) rows[f] = f * n_tokens + j;
    plan.query_rows.push_back(rows);
    plan.key_rows.push_back(std::move(rows));
  }
  if (mask) plan.mask = *mask;
  return plan;
}

ops::AttentionPlan cross_plan(std::size_t t_len, std::size_t n_tokens, std::size_t key_frames, std::size_t heads) {
  ops::AttentionPlan plan;
  plan.heads = heads;
  std::vector<std::size_t> keys(key_frames);
  for (std::size_t f = 0; f < key_frames; ++f) keys[f] = f;
  for (std::size_t j = 0; j < n_tokens; ++j) {
    std::vector<std::size_t> rows(t_len);
    for (std::size_t f = 0; f < t_len; ++f) rows[f] = f * n_tokens + j;
    plan.query_rows.push_back(std::move(rows));
    plan.key_rows.push_back(keys);
  }
  return plan;
}

PositionalEncoding::PositionalEncoding(ParamInit init, const BlockConfig& cfg_, std::size_t input_dim_)
    : projection(init.scoped("projection"), input_dim_, cfg_.d_model),
      embedding(init.uniform("embedding", {cfg_.rows(), cfg_.d_model}, cfg_.d_model)),
      cfg(cfg_),
      input_dim(input_dim_) {}

Tensor PositionalEncoding::forward(const Tensor& x) const {
  Tensor rows = x;
  if (x.rank() == 3) {
    if (x.dim(0) != cfg.t_len || x.dim(1) != cfg.n_tokens || x.dim(2) != input_dim) {
      throw DimensionError("positional encoding input " + shape_to_string(x.shape()) + " does not match [" +
                           std::to_string(cfg.t_len) + "x" + std::to_string(cfg.n_tokens) + "x" +
                           std::to_string(input_dim) + "]");
    }
    rows = ops::reshape(x, {cfg.rows(), input_dim});
  } else if (x.rank() != 2 || x.dim(0) != cfg.rows() || x.dim(1) != input_dim) {
    throw DimensionError("positional encoding input " + shape_to_string(x.shape()) + " does not match [" +
                         std::to_string(cfg.rows()) + "x" + std::to_string(input_dim) + "]");
  }
  return ops::add(projection.forward(rows), embedding);
}

FactorizedSelfAttention::FactorizedSelfAttention(ParamInit init, const BlockConfig& cfg_)
    : spatial(init.scoped("spatial"), cfg_.d_model, cfg_.n_heads),
      temporal(init.scoped("temporal"), cfg_.d_model, cfg_.n_heads),
      cfg(cfg_),
      spatial_rows(spatial_plan(cfg_.t_len, cfg_.n_tokens, cfg_.n_heads)) {
  cfg.validate();
}

Tensor FactorizedSelfAttention::forward(const Tensor& x, const AttentionMask* temporal_mask,
                                        AttentionTrace* trace) const {
  if (cfg.d_model % cfg.n_heads != 0) {
    throw ConfigError("factorized attention: d_model not divisible by n_heads");
  }
  const Tensor rows = as_rows(x, cfg);
  const Tensor after_spatial = spatial.forward(rows, rows, spatial_rows, trace ? &trace->spatial : nullptr);
  const auto plan = temporal_plan(cfg.t_len, cfg.n_tokens, cfg.n_heads, temporal_mask);
  return temporal.forward(after_spatial, after_spatial, plan, trace ? &trace->temporal : nullptr);
}

MaskedSelfAttention::MaskedSelfAttention(ParamInit init, const BlockConfig& cfg) : inner(std::move(init), cfg) {}

Tensor MaskedSelfAttention::forward(const Tensor& x, const AttentionMask& mask, AttentionTrace* trace) const {
  if (mask.queries() != inner.cfg.t_len || !mask.is_causal()) {
    throw ContractError("masked self-attention needs the causal " + std::to_string(inner.cfg.t_len) + "x" +
                        std::to_string(inner.cfg.t_len) + " mask");
  }
  return inner.forward(x, &mask, trace);
}

EncoderBlock::EncoderBlock(ParamInit init, const BlockConfig& cfg_)
    : norm_attention(init.scoped("norm_attention"), cfg_.d_model, cfg_.ln_eps),
      attention(init.scoped("attention"), cfg_),
      norm_mlp(init.scoped("norm_mlp"), cfg_.d_model, cfg_.ln_eps),
      mlp(init.scoped("mlp"), cfg_.d_model, cfg_.mlp_hidden),
      cfg(cfg_) {}

Tensor EncoderBlock::forward(const Tensor& x, AttentionTrace* trace) const {
  const Tensor rows = as_rows(x, cfg);
  const Tensor y = ops::add(rows, attention.forward(norm_attention.forward(rows), nullptr, trace));
  return ops::add(y, mlp.forward(norm_mlp.forward(y)));
}

DecoderBlock::DecoderBlock(ParamInit init, const BlockConfig& cfg_)
    : norm_self(init.scoped("norm_self"), cfg_.d_model, cfg_.ln_eps),
      self_attention(init.scoped("self_attention"), cfg_),
      norm_cross(init.scoped("norm_cross"), cfg_.d_model, cfg_.ln_eps),
      cross_attention(init.scoped("cross_attention"), cfg_.d_model, cfg_.n_heads),
      norm_mlp(init.scoped("norm_mlp"), cfg_.d_model, cfg_.ln_eps),
      mlp(init.scoped("mlp"), cfg_.d_model, cfg_.mlp_hidden),
      cfg(cfg_),
      mask(AttentionMask::causal(cfg_.t_len)),
      cross_rows(cross_plan(cfg_.t_len, cfg_.n_tokens, cfg_.t_len, cfg_.n_heads)) {}

Tensor DecoderBlock::forward(const Tensor& x, const Tensor& encoded, AttentionTrace* trace) const {
  const Tensor rows = as_rows(x, cfg);
  const Tensor enc = as_rows(encoded, cfg);
  const Tensor y = ops::add(rows, self_attention.forward(norm_self.forward(rows), mask, trace));
  // Keys and values: encoder frames with their spatial tokens mean-pooled.
  const Tensor frames = ops::group_mean_rows(enc, cfg.n_tokens);
  const Tensor z = ops::add(
      y, cross_attention.forward(norm_cross.forward(y), frames, cross_rows, trace ? &trace->cross : nullptr));
  return ops::add(z, mlp.forward(norm_mlp.forward(z)));
}

MlpHead::MlpHead(ParamInit init, std::size_t width, std::size_t hidden, std::size_t out_dim_)
    : out_dim(out_dim_) {
  mlp.fc1 = Linear(init.scoped("fc1"), width, hidden);
  mlp.fc2 = Linear(init.scoped("fc2"), hidden, out_dim_);
}

Tensor MlpHead::forward(const Tensor& x) const {
  if (x.rank() < 2) throw DimensionError("mlp head expects a [rows x d] input, got " + shape_to_string(x.shape()));
  const std::size_t d = x.shape().back();
  const Tensor rows = x.rank() == 2 ? x : ops::reshape(x, {x.numel() / d, d});
  return ops::reshape(mlp.forward(ops::mean_rows(rows)), {out_dim});
}

Tensor run_encoder(const std::vector<EncoderBlock>& blocks, Tensor x) {
  for (const auto& block : blocks) x = block.forward(x);
  return x;
}

Tensor run_decoder(const std::vector<DecoderBlock>& blocks, Tensor x, const Tensor& encoded) {
  for (const auto& block : blocks) x = block.forward(x, encoded);
  return x;
}

std::uint64_t attention_op_count(const BlockConfig& cfg, AttentionMode mode) {
  const std::uint64_t t = cfg.t_len, n = cfg.n_tokens, d = cfg.d_model;
  if (mode == AttentionMode::joint) return (t * n) * (t * n) * d;
  return t * n * n * d + n * t * t * d;
}

}  // namespace pclformer
