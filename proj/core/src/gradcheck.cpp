#include "pclformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pclformer/error.hpp"

namespace pclformer {

namespace {

void check_eps(double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) {
    throw ParameterError("finite difference step must lie in (0, 1e-2], got " + std::to_string(eps));
  }
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

}  // namespace

double finite_difference_check(const ScalarFunction& f, const Tensor& x, double eps) {
  check_eps(eps);
  Tensor probe = x.detach();
  probe.set_requires_grad(true);
  backward(f(probe));
  const std::vector<double> analytic = probe.has_grad()
                                           ? std::vector<double>(probe.grad().begin(), probe.grad().end())
                                           : std::vector<double>(probe.numel(), 0.0);

  NoGradGuard no_grad;
  auto values = probe.mutable_data();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + eps;
    const double plus = f(probe).item();
    values[i] = saved - eps;
    const double minus = f(probe).item();
    values[i] = saved;
    worst = std::max(worst, relative_error(analytic[i], (plus - minus) / (2.0 * eps)));
  }
  return worst;
}

double finite_difference_check_leaves(const std::function<Tensor()>& f, std::vector<Tensor> leaves, double eps,
                                      std::size_t stride) {
  check_eps(eps);
  if (stride == 0) stride = 1;
  for (auto& leaf : leaves) leaf.zero_grad();
  backward(f());
  std::vector<std::vector<double>> analytic;
  for (const auto& leaf : leaves) {
    analytic.emplace_back(leaf.has_grad() ? std::vector<double>(leaf.grad().begin(), leaf.grad().end())
                                          : std::vector<double>(leaf.numel(), 0.0));
  }

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t t = 0; t < leaves.size(); ++t) {
    auto values = leaves[t].mutable_data();
    for (std::size_t i = 0; i < values.size(); i += stride) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double plus = f().item();
      values[i] = saved - eps;
      const double minus = f().item();
      values[i] = saved;
      worst = std::max(worst, relative_error(analytic[t][i], (plus - minus) / (2.0 * eps)));
    }
  }
  return worst;
}

}  // namespace pclformer
