#include "pclformer/losses.hpp"

#include <cmath>
#include <string>

#include "pclformer/error.hpp"
#include "pclformer/ops.hpp"

namespace pclformer {

namespace {

void check_batch(const std::vector<Tensor>& probs, std::span<const std::size_t> labels) {
  if (probs.size() != labels.size()) {
    throw DimensionError("loss: " + std::to_string(probs.size()) + " probability rows but " +
                         std::to_string(labels.size()) + " labels");
  }
  for (std::size_t n = 0; n < probs.size(); ++n) {
    if (labels[n] >= probs[n].numel()) {
      throw InputError("loss: label " + std::to_string(labels[n]) + " out of range for " +
                       std::to_string(probs[n].numel()) + " classes");
    }
  }
}

}  // namespace

Tensor softmax_loss(const std::vector<Tensor>& probs, std::span<const std::size_t> labels) {
  check_batch(probs, labels);
  if (probs.empty()) return Tensor::scalar(0.0);
  std::vector<Tensor> terms;
  terms.reserve(probs.size());
  for (std::size_t n = 0; n < probs.size(); ++n) {
    terms.push_back(ops::log(ops::clamp_min(ops::pick(probs[n], labels[n]), kProbabilityFloor)));
  }
  return ops::scale(ops::sum(ops::stack(terms)), -1.0 / static_cast<double>(probs.size()));
}

Tensor overlap_loss(const std::vector<Tensor>& probs, std::span<const std::size_t> labels,
                    std::span<const double> overlaps, double alpha) {
  if (!(alpha > 0.0)) throw ParameterError("overlap loss: alpha must be > 0, got " + std::to_string(alpha));
  check_batch(probs, labels);
  if (overlaps.size() != probs.size()) {
    throw DimensionError("overlap loss: " + std::to_string(overlaps.size()) + " overlaps for " +
                         std::to_string(probs.size()) + " items");
  }
  for (double v : overlaps) {
    if (!(v >= 0.0 && v <= 1.0)) throw InputError("overlap loss: overlap " + std::to_string(v) + " outside [0, 1]");
  }
  std::vector<Tensor> terms;
  for (std::size_t n = 0; n < probs.size(); ++n) {
    if (overlaps[n] == 0.0) continue;
    const double inv = 1.0 / std::pow(overlaps[n], alpha);
    const Tensor p = ops::pick(probs[n], labels[n]);
    terms.push_back(ops::scale(ops::add_scalar(ops::scale(ops::square(p), inv), -1.0), 0.5));
  }
  if (terms.empty()) return Tensor::scalar(0.0);
  return ops::scale(ops::sum(ops::stack(terms)), 1.0 / static_cast<double>(probs.size()));
}

double total_loss(double l_softmax, double l_overlap, double lambda) { return l_softmax + lambda * l_overlap; }

Tensor total_loss(const Tensor& l_softmax, const Tensor& l_overlap, double lambda) {
  return ops::add(l_softmax, ops::scale(l_overlap, lambda));
}

void LossReport::finalize(double lambda) {
  l_softmax = proposal_softmax + classifier_softmax + localizer_softmax;
  l_overlap = localizer_overlap;
  l_total = total_loss(l_softmax, l_overlap, lambda);
}

}  // namespace pclformer
