#pragma once

#include <cstdint>
#include <vector>

#include "pclformer/tensor.hpp"

namespace pclformer {

struct AdamWConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Adam moments with decoupled weight decay:
//   p -= lr * wd * p;  p -= lr * m_hat / (sqrt(v_hat) + eps)
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig cfg);

  // Applies one update from the accumulated gradients. Parameters without a
  // gradient only receive weight decay.
  void step();
  void zero_grad();
  std::uint64_t steps() const noexcept { return steps_; }
  const AdamWConfig& config() const noexcept { return cfg_; }

 private:
  std::vector<Tensor> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::uint64_t steps_ = 0;
};

}  // namespace pclformer
