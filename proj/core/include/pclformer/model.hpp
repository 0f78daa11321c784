#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <vector>

#include "pclformer/tensor.hpp"
#include "pclformer/transformer.hpp"

namespace pclformer {

struct ModelConfig {
  BlockConfig block;
  std::size_t input_dim = 16;   // per-token feature width
  std::size_t num_classes = 4;  // action classes, background excluded
  double alpha = 1.0;           // overlap-loss exponent
  double lambda = 0.5;          // overlap-loss weight in the total objective
  std::uint64_t seed = 0;

  void validate() const;
};

// Encoder stack followed by an MLP classification head.
class EncoderClassifier {
 public:
  EncoderClassifier() = default;
  EncoderClassifier(ParamInit init, const ModelConfig& cfg, std::size_t out_dim);

  Tensor logits(const Tensor& segment) const;

  PositionalEncoding embed;
  std::vector<EncoderBlock> encoder;
  MlpHead head;
};

// Encoder stack, causal decoder stack over the embedded input, and a
// per-class confidence head.
class LocalizationNetwork {
 public:
  LocalizationNetwork() = default;
  LocalizationNetwork(ParamInit init, const ModelConfig& cfg);

  Tensor logits(const Tensor& segment) const;

  PositionalEncoding embed;
  std::vector<EncoderBlock> encoder;
  std::vector<DecoderBlock> decoder;
  MlpHead head;
};

// The three sub-networks. Parameters live in one store under the disjoint
// prefixes "proposal.", "classifier." and "localizer.".
class PCLFormer {
 public:
  explicit PCLFormer(const ModelConfig& cfg);
  PCLFormer(const PCLFormer&) = delete;
  PCLFormer& operator=(const PCLFormer&) = delete;

  const ModelConfig& config() const noexcept { return cfg_; }
  ParameterStore& parameters() noexcept { return store_; }
  const ParameterStore& parameters() const noexcept { return store_; }

  // Segment features are [t x n x input_dim] (or the equivalent row matrix).
  // Each returns a probability vector: [p_background, p_action] for the
  // proposal network, C+1 class probabilities (index 0 = background) for
  // the other two.
  Tensor proposal_forward(const Tensor& segment) const;
  Tensor classification_forward(const Tensor& segment) const;
  Tensor localization_forward(const Tensor& segment) const;

  struct CallCounts {
    std::uint64_t proposal = 0;
    std::uint64_t classifier = 0;
    std::uint64_t localizer = 0;
  };
  CallCounts call_counts() const;
  void reset_call_counts() const;

  EncoderClassifier proposal;
  EncoderClassifier classifier;
  LocalizationNetwork localizer;

 private:
  ModelConfig cfg_;
  ParameterStore store_;
  mutable std::atomic<std::uint64_t> proposal_calls_{0};
  mutable std::atomic<std::uint64_t> classifier_calls_{0};
  mutable std::atomic<std::uint64_t> localizer_calls_{0};

  void check_input(const Tensor& segment) const;
};

}  // namespace pclformer
