#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pclformer/tensor.hpp"

namespace pclformer {

inline constexpr double kProbabilityFloor = 1e-12;

// Mean negative log-likelihood of the labelled class,
// (1/N) * sum_n -log(P_n[a_n]), with P clamped to [1e-12, 1] before the log.
Tensor softmax_loss(const std::vector<Tensor>& probs, std::span<const std::size_t> labels);

// Overlap loss (1/N) * sum_n 0.5 * (P_n[a_n]^2 / v_n^alpha - 1). Items with
// v_n == 0 contribute nothing but still count in N. Throws ParameterError
// when alpha <= 0 and InputError when some v lies outside [0, 1].
Tensor overlap_loss(const std::vector<Tensor>& probs, std::span<const std::size_t> labels,
                    std::span<const double> overlaps, double alpha);

// l_softmax + lambda * l_overlap.
double total_loss(double l_softmax, double l_overlap, double lambda);
Tensor total_loss(const Tensor& l_softmax, const Tensor& l_overlap, double lambda);

// Loss terms of one step, split by sub-network.
struct LossReport {
  double proposal_softmax = 0.0;
  double classifier_softmax = 0.0;
  double localizer_softmax = 0.0;
  double localizer_overlap = 0.0;

  double l_softmax = 0.0;
  double l_overlap = 0.0;
  double l_total = 0.0;

  // Sets the aggregate terms from the per-network ones.
  void finalize(double lambda);
};

}  // namespace pclformer
