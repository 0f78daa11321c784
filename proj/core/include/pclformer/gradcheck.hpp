#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "pclformer/tensor.hpp"

namespace pclformer {

using ScalarFunction = std::function<Tensor(const Tensor&)>;

// Compares the reverse-mode gradient of `f` at `x` against central
// differences and returns max_i |analytic_i - numeric_i| / max(1, |numeric_i|).
// eps must lie in (0, 1e-2].
double finite_difference_check(const ScalarFunction& f, const Tensor& x, double eps = 1e-4);

// Same measure, taken over the entries of existing leaf tensors (typically
// model parameters) that `f` closes over. `stride` > 1 samples every
// stride-th entry of each tensor to bound the cost on large parameter sets.
double finite_difference_check_leaves(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                      double eps = 1e-4, std::size_t stride = 1);

}  // namespace pclformer
