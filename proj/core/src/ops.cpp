#include "pclformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

#include "pclformer/error.hpp"

namespace pclformer::ops {

namespace {

using Impl = detail::TensorImpl;
using BackwardFn = std::function<void(const Impl&)>;

Tensor make_output(Shape shape, std::vector<double> data, const char* op,
                   std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
  Tensor out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto* in : inputs) any = any || (in->defined() && in->requires_grad());
  if (!any) return out;
  auto node = std::make_shared<detail::Node>();
  node->op = op;
  for (const auto* in : inputs) {
    if (in->defined()) node->inputs.push_back(in->impl());
  }
  node->backward = std::move(backward);
  out.impl()->requires_grad = true;
  out.impl()->producer = std::move(node);
  return out;
}

// Gradient buffer of an input, or nullptr when it takes no gradient.
double* grad_of(Impl* impl) {
  if (impl == nullptr || !impl->requires_grad) return nullptr;
  impl->ensure_grad();
  return impl->grad.data();
}

Impl* raw(const Tensor& t) { return t.defined() ? t.impl().get() : nullptr; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()) + " differ");
  }
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_to_string(t.shape()));
  }
}

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// da[m x k] += g[m x n] * b[k x n]^T
void gemm_nt(const double* g, const double* b, double* da, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    double* drow = da + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      drow[p] += acc;
    }
  }
}

// db[k x n] += a[m x k]^T * g[m x n]
void gemm_tn(const double* a, const double* g, double* db, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* drow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
    }
  }
}

template <class Forward, class Derivative>
Tensor unary(const Tensor& a, const char* op, Forward f, Derivative df) {
  std::vector<double> out(a.numel());
  const auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  Impl* pa = raw(a);
  return make_output(a.shape(), std::move(out), op, {&a}, [pa, df](const Impl& o) {
    double* ga = grad_of(pa);
    if (!ga) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * df(pa->data[i], o.data[i]);
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ for " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  Impl* pa = raw(a);
  Impl* pb = raw(b);
  return make_output({m, n}, std::move(out), "matmul", {&a, &b}, [pa, pb, m, k, n](const Impl& o) {
    if (double* ga = grad_of(pa)) gemm_nt(o.grad.data(), pb->data.data(), ga, m, k, n);
    if (double* gb = grad_of(pb)) gemm_tn(pa->data.data(), o.grad.data(), gb, m, k, n);
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_matrix(x, "linear");
  require_matrix(w, "linear");
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  if (w.dim(0) != k) {
    throw DimensionError("linear: input " + shape_to_string(x.shape()) + " does not match weight " +
                         shape_to_string(w.shape()));
  }
  if (bias.defined() && bias.numel() != n) {
    throw DimensionError("linear: bias " + shape_to_string(bias.shape()) + " does not match " +
                         std::to_string(n) + " outputs");
  }
  std::vector<double> out(m * n, 0.0);
  if (bias.defined()) {
    const auto bd = bias.data();
    for (std::size_t i = 0; i < m; ++i) std::copy(bd.begin(), bd.end(), out.begin() + i * n);
  }
  gemm_nn(x.data().data(), w.data().data(), out.data(), m, k, n);
  Impl* px = raw(x);
  Impl* pw = raw(w);
  Impl* pb = raw(bias);
  return make_output({m, n}, std::move(out), "linear", {&x, &w, &bias}, [px, pw, pb, m, k, n](const Impl& o) {
    if (double* gx = grad_of(px)) gemm_nt(o.grad.data(), pw->data.data(), gx, m, k, n);
    if (double* gw = grad_of(pw)) gemm_tn(px->data.data(), o.grad.data(), gw, m, k, n);
    if (double* gb = grad_of(pb)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) gb[j] += o.grad[i * n + j];
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  Impl* pa = raw(a);
  Impl* pb = raw(b);
  return make_output(a.shape(), std::move(out), "add", {&a, &b}, [pa, pb](const Impl& o) {
    if (double* ga = grad_of(pa)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
    }
    if (double* gb = grad_of(pb)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] += o.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  Impl* pa = raw(a);
  Impl* pb = raw(b);
  return make_output(a.shape(), std::move(out), "sub", {&a, &b}, [pa, pb](const Impl& o) {
    if (double* ga = grad_of(pa)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
    }
    if (double* gb = grad_of(pb)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] -= o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  Impl* pa = raw(a);
  Impl* pb = raw(b);
  return make_output(a.shape(), std::move(out), "mul", {&a, &b}, [pa, pb](const Impl& o) {
    if (double* ga = grad_of(pa)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * pb->data[i];
    }
    if (double* gb = grad_of(pb)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] += o.grad[i] * pa->data[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, "scale", [factor](double x) { return x * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(a, "add_scalar", [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor square(const Tensor& a) {
  return unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor log(const Tensor& a) {
  return unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor clamp_min(const Tensor& a, double floor) {
  return unary(a, "clamp_min", [floor](double x) { return x < floor ? floor : x; },
               [floor](double x, double) { return x < floor ? 0.0 : 1.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [inv_sqrt_2pi](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto& shape = x.shape();
  if (axis >= shape.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_to_string(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t r = 0; r < inner; ++r) {
      const std::size_t base = o * len * inner + r;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, in[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(in[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  }
  Impl* px = raw(x);
  return make_output(shape, std::move(out), "softmax", {&x}, [px, outer, inner, len](const Impl& o) {
    double* gx = grad_of(px);
    if (!gx) return;
    for (std::size_t a = 0; a < outer; ++a) {
      for (std::size_t r = 0; r < inner; ++r) {
        const std::size_t base = a * len * inner + r;
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) dot += o.grad[base + j * inner] * o.data[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t idx = base + j * inner;
          gx[idx] += o.data[idx] * (o.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (!(eps > 0.0)) throw ParameterError("layer_norm: eps must be positive, got " + std::to_string(eps));
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain " + shape_to_string(gain.shape()) + " / bias " +
                         shape_to_string(bias.shape()) + " do not match last extent " + std::to_string(d));
  }
  const std::size_t rows = x.numel() / d;
  const auto in = x.data();
  const auto g = gain.data();
  const auto b = bias.data();
  std::vector<double> out(in.size());
  auto xhat = std::make_shared<std::vector<double>>(in.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * g[j] + b[j];
    }
  }
  Impl* px = raw(x);
  Impl* pg = raw(gain);
  Impl* pb = raw(bias);
  return make_output(x.shape(), std::move(out), "layer_norm", {&x, &gain, &bias},
                     [px, pg, pb, xhat, rstd, rows, d](const Impl& o) {
                       double* gx = grad_of(px);
                       double* gg = grad_of(pg);
                       double* gb = grad_of(pb);
                       std::vector<double> dxhat(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* dy = o.grad.data() + r * d;
                         const double* h = xhat->data() + r * d;
                         if (gg) {
                           for (std::size_t j = 0; j < d; ++j) gg[j] += dy[j] * h[j];
                         }
                         if (gb) {
                           for (std::size_t j = 0; j < d; ++j) gb[j] += dy[j];
                         }
                         if (!gx) continue;
                         double mean_d = 0.0, mean_dh = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           dxhat[j] = dy[j] * pg->data[j];
                           mean_d += dxhat[j];
                           mean_dh += dxhat[j] * h[j];
                         }
                         mean_d /= static_cast<double>(d);
                         mean_dh /= static_cast<double>(d);
                         for (std::size_t j = 0; j < d; ++j) {
                           gx[r * d + j] += (*rstd)[r] * (dxhat[j] - mean_d - h[j] * mean_dh);
                         }
                       }
                     });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Impl* px = raw(x);
  return make_output({1}, {total}, "sum", {&x}, [px](const Impl& o) {
    if (double* gx = grad_of(px)) {
      for (std::size_t i = 0; i < px->data.size(); ++i) gx[i] += o.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(x.shape()) + " as " + shape_to_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  Impl* px = raw(x);
  return make_output(std::move(shape), std::move(out), "reshape", {&x}, [px](const Impl& o) {
    if (double* gx = grad_of(px)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
    }
  });
}

Tensor pick(const Tensor& x, std::size_t flat_index) {
  if (flat_index >= x.numel()) {
    throw DimensionError("pick: index " + std::to_string(flat_index) + " out of range for " +
                         shape_to_string(x.shape()));
  }
  Impl* px = raw(x);
  return make_output({1}, {x.at(flat_index)}, "pick", {&x}, [px, flat_index](const Impl& o) {
    if (double* gx = grad_of(px)) gx[flat_index] += o.grad[0];
  });
}

Tensor stack(const std::vector<Tensor>& scalars) {
  if (scalars.empty()) throw DimensionError("stack: no inputs");
  std::vector<double> out;
  out.reserve(scalars.size());
  for (const auto& s : scalars) {
    if (s.numel() != 1) throw DimensionError("stack: expects single-element tensors, got " + shape_to_string(s.shape()));
    out.push_back(s.item());
  }
  Tensor result(Shape{scalars.size()}, std::move(out));
  if (!grad_enabled()) return result;
  auto node = std::make_shared<detail::Node>();
  node->op = "stack";
  bool any = false;
  std::vector<Impl*> parts;
  for (const auto& s : scalars) {
    node->inputs.push_back(s.impl());
    parts.push_back(s.impl().get());
    any = any || s.requires_grad();
  }
  if (!any) return result;
  node->backward = [parts](const Impl& o) {
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (double* g = grad_of(parts[i])) g[0] += o.grad[i];
    }
  };
  result.impl()->requires_grad = true;
  result.impl()->producer = std::move(node);
  return result;
}

Tensor mean_rows(const Tensor& x) {
  require_matrix(x, "mean_rows");
  return group_mean_rows(x, x.dim(0));
}

Tensor group_mean_rows(const Tensor& x, std::size_t group) {
  require_matrix(x, "group_mean_rows");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  if (group == 0 || rows % group != 0) {
    throw DimensionError("group_mean_rows: " + std::to_string(rows) + " rows not divisible into groups of " +
                         std::to_string(group));
  }
  const std::size_t m = rows / group;
  const double inv = 1.0 / static_cast<double>(group);
  const auto in = x.data();
  // Each group is summed in sorted order so the result does not depend on
  // the order of rows within the group.
  std::vector<double> out(m * d, 0.0);
  std::vector<double> column(group);
  for (std::size_t g = 0; g < m; ++g) {
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t r = 0; r < group; ++r) column[r] = in[(g * group + r) * d + j];
      std::sort(column.begin(), column.end());
      double total = 0.0;
      for (double v : column) total += v;
      out[g * d + j] = total * inv;
    }
  }
  Impl* px = raw(x);
  return make_output({m, d}, std::move(out), "group_mean_rows", {&x}, [px, group, rows, d, inv](const Impl& o) {
    double* gx = grad_of(px);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* src = o.grad.data() + (r / group) * d;
      for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += src[j] * inv;
    }
  });
}

AttentionMask::AttentionMask(std::size_t queries, std::size_t keys, bool fill)
    : queries_(queries), keys_(keys), bits_(queries * keys, fill ? 1 : 0) {}

AttentionMask AttentionMask::causal(std::size_t length) {
  AttentionMask m(length, length, false);
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t j = 0; j <= i; ++j) m.set(i, j, true);
  }
  return m;
}

bool AttentionMask::is_causal() const {
  if (queries_ != keys_) return false;
  for (std::size_t i = 0; i < queries_; ++i) {
    for (std::size_t j = 0; j < keys_; ++j) {
      if (allowed(i, j) != (j <= i)) return false;
    }
  }
  return true;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionPlan& plan,
                 AttentionWeights* weights_out) {
  require_matrix(q, "attention");
  require_matrix(k, "attention");
  require_matrix(v, "attention");
  const std::size_t d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d || k.dim(0) != v.dim(0)) {
    throw DimensionError("attention: q " + shape_to_string(q.shape()) + ", k " + shape_to_string(k.shape()) +
                         ", v " + shape_to_string(v.shape()) + " are incompatible");
  }
  if (plan.heads == 0 || d % plan.heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(plan.heads) + " heads");
  }
  if (plan.query_rows.size() != plan.key_rows.size()) {
    throw ContractError("attention: plan has mismatched query/key sequence counts");
  }
  const std::size_t heads = plan.heads;
  const std::size_t dk = d / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dk));
  const std::size_t n_seq = plan.query_rows.size();

  for (std::size_t s = 0; s < n_seq; ++s) {
    for (auto r : plan.query_rows[s]) {
      if (r >= q.dim(0)) throw DimensionError("attention: query row out of range");
    }
    for (auto r : plan.key_rows[s]) {
      if (r >= k.dim(0)) throw DimensionError("attention: key row out of range");
    }
    if (plan.mask) {
      if (plan.mask->queries() != plan.query_rows[s].size() || plan.mask->keys() != plan.key_rows[s].size()) {
        throw DimensionError("attention: mask extent does not match sequence length");
      }
    }
  }
  if (plan.mask) {
    for (std::size_t i = 0; i < plan.mask->queries(); ++i) {
      bool any = false;
      for (std::size_t j = 0; j < plan.mask->keys(); ++j) any = any || plan.mask->allowed(i, j);
      if (!any) throw ContractError("attention: mask row " + std::to_string(i) + " allows no keys");
    }
  }

  const auto qd = q.data();
  const auto kd = k.data();
  const auto vd = v.data();
  std::vector<double> out(q.numel(), 0.0);
  // Weights per (sequence, head), row-major [queries x keys].
  auto weights = std::make_shared<std::vector<std::vector<double>>>(n_seq * heads);

  for (std::size_t s = 0; s < n_seq; ++s) {
    const auto& qr = plan.query_rows[s];
    const auto& kr = plan.key_rows[s];
    const std::size_t lq = qr.size(), lk = kr.size();
    for (std::size_t h = 0; h < heads; ++h) {
      auto& w = (*weights)[s * heads + h];
      w.assign(lq * lk, 0.0);
      const std::size_t off = h * dk;
      for (std::size_t i = 0; i < lq; ++i) {
        const double* qrow = qd.data() + qr[i] * d + off;
        double* wrow = w.data() + i * lk;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < lk; ++j) {
          if (plan.mask && !plan.mask->allowed(i, j)) continue;
          const double* krow = kd.data() + kr[j] * d + off;
          double acc = 0.0;
          for (std::size_t c = 0; c < dk; ++c) acc += qrow[c] * krow[c];
          wrow[j] = acc * scale_factor;
          mx = std::max(mx, wrow[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < lk; ++j) {
          if (plan.mask && !plan.mask->allowed(i, j)) continue;
          wrow[j] = std::exp(wrow[j] - mx);
          total += wrow[j];
        }
        double* orow = out.data() + qr[i] * d + off;
        for (std::size_t j = 0; j < lk; ++j) {
          if (plan.mask && !plan.mask->allowed(i, j)) continue;
          wrow[j] /= total;
          const double* vrow = vd.data() + kr[j] * d + off;
          for (std::size_t c = 0; c < dk; ++c) orow[c] += wrow[j] * vrow[c];
        }
      }
    }
  }

  if (weights_out) {
    weights_out->weights.assign(n_seq, {});
    for (std::size_t s = 0; s < n_seq; ++s) {
      for (std::size_t h = 0; h < heads; ++h) weights_out->weights[s].push_back((*weights)[s * heads + h]);
    }
    weights_out->queries = n_seq ? plan.query_rows[0].size() : 0;
    weights_out->keys = n_seq ? plan.key_rows[0].size() : 0;
  }

  Impl* pq = raw(q);
  Impl* pk = raw(k);
  Impl* pv = raw(v);
  auto shared_plan = std::make_shared<AttentionPlan>(plan);
  return make_output(q.shape(), std::move(out), "attention", {&q, &k, &v},
                     [pq, pk, pv, shared_plan, weights, heads, dk, d, scale_factor](const Impl& o) {
                       double* gq = grad_of(pq);
                       double* gk = grad_of(pk);
                       double* gv = grad_of(pv);
                       const auto& p = *shared_plan;
                       std::vector<double> dw;
                       for (std::size_t s = 0; s < p.query_rows.size(); ++s) {
                         const auto& qr = p.query_rows[s];
                         const auto& kr = p.key_rows[s];
                         const std::size_t lk = kr.size();
                         dw.resize(lk);
                         for (std::size_t h = 0; h < heads; ++h) {
                           const auto& w = (*weights)[s * heads + h];
                           const std::size_t off = h * dk;
                           for (std::size_t i = 0; i < qr.size(); ++i) {
                             const double* go = o.grad.data() + qr[i] * d + off;
                             const double* wrow = w.data() + i * lk;
                             double row_dot = 0.0;
                             for (std::size_t j = 0; j < lk; ++j) {
                               const double* vrow = pv->data.data() + kr[j] * d + off;
                               double acc = 0.0;
                               for (std::size_t c = 0; c < dk; ++c) acc += go[c] * vrow[c];
                               dw[j] = acc;
                               row_dot += acc * wrow[j];
                               if (gv && wrow[j] != 0.0) {
                                 double* gvrow = gv + kr[j] * d + off;
                                 for (std::size_t c = 0; c < dk; ++c) gvrow[c] += wrow[j] * go[c];
                               }
                             }
                             const double* qrow = pq->data.data() + qr[i] * d + off;
                             double* gqrow = gq ? gq + qr[i] * d + off : nullptr;
                             for (std::size_t j = 0; j < lk; ++j) {
                               if (wrow[j] == 0.0) continue;
                               const double ds = wrow[j] * (dw[j] - row_dot) * scale_factor;
                               const double* krow = pk->data.data() + kr[j] * d + off;
                               if (gqrow) {
                                 for (std::size_t c = 0; c < dk; ++c) gqrow[c] += ds * krow[c];
                               }
                               if (gk) {
                                 double* gkrow = gk + kr[j] * d + off;
                                 for (std::size_t c = 0; c < dk; ++c) gkrow[c] += ds * qrow[c];
                               }
                             }
                           }
                         }
                       }
                     });
}

}  // namespace pclformer::ops
