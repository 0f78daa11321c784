#include "pclformer/optimizer.hpp"

#include <cmath>

#include "pclformer/error.hpp"

namespace pclformer {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.learning_rate > 0.0)) throw ParameterError("AdamW: learning rate must be > 0");
  if (!(cfg_.weight_decay >= 0.0)) throw ParameterError("AdamW: weight decay must be >= 0");
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamW::step() {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bias1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg_.beta2, t);
  const double lr = cfg_.learning_rate;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    auto values = p.mutable_data();
    const double decay = 1.0 - lr * cfg_.weight_decay;
    if (!p.has_grad()) {
      for (auto& x : values) x *= decay;
      continue;
    }
    const auto grad = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * grad[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * grad[k] * grad[k];
      const double m_hat = m[k] / bias1;
      const double v_hat = v[k] / bias2;
      values[k] = values[k] * decay - lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace pclformer
