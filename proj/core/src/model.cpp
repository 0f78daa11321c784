#include "pclformer/model.hpp"

#include "pclformer/error.hpp"
#include "pclformer/ops.hpp"

namespace pclformer {

void ModelConfig::validate() const {
  block.validate();
  if (input_dim == 0) throw ConfigError("model config: input_dim must be >= 1");
  if (num_classes == 0) throw ConfigError("model config: num_classes must be >= 1");
  if (!(alpha > 0.0)) throw ConfigError("model config: alpha must be > 0");
  if (!(lambda >= 0.0)) throw ConfigError("model config: lambda must be >= 0");
}

EncoderClassifier::EncoderClassifier(ParamInit init, const ModelConfig& cfg, std::size_t out_dim)
    : embed(init.scoped("embed"), cfg.block, cfg.input_dim) {
  for (std::size_t i = 0; i < cfg.block.n_layers; ++i) {
    encoder.emplace_back(init.scoped("encoder" + std::to_string(i)), cfg.block);
  }
  head = MlpHead(init.scoped("head"), cfg.block.d_model, cfg.block.mlp_hidden, out_dim);
}

Tensor EncoderClassifier::logits(const Tensor& segment) const {
  return head.forward(run_encoder(encoder, embed.forward(segment)));
}

LocalizationNetwork::LocalizationNetwork(ParamInit init, const ModelConfig& cfg)
    : embed(init.scoped("embed"), cfg.block, cfg.input_dim) {
  for (std::size_t i = 0; i < cfg.block.n_layers; ++i) {
    encoder.emplace_back(init.scoped("encoder" + std::to_string(i)), cfg.block);
  }
  for (std::size_t i = 0; i < cfg.block.decoder_layers; ++i) {
    decoder.emplace_back(init.scoped("decoder" + std::to_string(i)), cfg.block);
  }
  head = MlpHead(init.scoped("head"), cfg.block.d_model, cfg.block.mlp_hidden, cfg.num_classes + 1);
}

Tensor LocalizationNetwork::logits(const Tensor& segment) const {
  const Tensor embedded = embed.forward(segment);
  const Tensor encoded = run_encoder(encoder, embedded);
  return head.forward(run_decoder(decoder, embedded, encoded));
}

PCLFormer::PCLFormer(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  proposal = EncoderClassifier(ParamInit(store_, cfg_.seed, "proposal"), cfg_, 2);
  classifier = EncoderClassifier(ParamInit(store_, cfg_.seed, "classifier"), cfg_, cfg_.num_classes + 1);
  localizer = LocalizationNetwork(ParamInit(store_, cfg_.seed, "localizer"), cfg_);
}

void PCLFormer::check_input(const Tensor& segment) const {
  const auto& b = cfg_.block;
  const bool ok3 = segment.rank() == 3 && segment.dim(0) == b.t_len && segment.dim(1) == b.n_tokens &&
                   segment.dim(2) == cfg_.input_dim;
  const bool ok2 = segment.rank() == 2 && segment.dim(0) == b.rows() && segment.dim(1) == cfg_.input_dim;
  if (!ok3 && !ok2) {
    throw DimensionError("segment " + shape_to_string(segment.shape()) + " does not match model input [" +
                         std::to_string(b.t_len) + "x" + std::to_string(b.n_tokens) + "x" +
                         std::to_string(cfg_.input_dim) + "]");
  }
}

Tensor PCLFormer::proposal_forward(const Tensor& segment) const {
  check_input(segment);
  ++proposal_calls_;
  return ops::softmax(proposal.logits(segment), 0);
}

Tensor PCLFormer::classification_forward(const Tensor& segment) const {
  check_input(segment);
  ++classifier_calls_;
  return ops::softmax(classifier.logits(segment), 0);
}

Tensor PCLFormer::localization_forward(const Tensor& segment) const {
  check_input(segment);
  ++localizer_calls_;
  return ops::softmax(localizer.logits(segment), 0);
}

PCLFormer::CallCounts PCLFormer::call_counts() const {
  return {proposal_calls_.load(), classifier_calls_.load(), localizer_calls_.load()};
}

void PCLFormer::reset_call_counts() const {
  proposal_calls_ = 0;
  classifier_calls_ = 0;
  localizer_calls_ = 0;
}

}  // namespace pclformer
