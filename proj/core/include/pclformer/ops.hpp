#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "pclformer/tensor.hpp"

// Differentiable operations. Every function records its backward rule when
// gradient recording is enabled and at least one input requires a gradient.
namespace pclformer::ops {

// [m x k] * [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);

// x[r x in] * w[in x out] + bias[out] -> [r x out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor square(const Tensor& a);
Tensor log(const Tensor& a);
// max(a, floor); the gradient is zero where the floor is active.
Tensor clamp_min(const Tensor& a, double floor);

// Stable softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

// Normalizes over the last axis, then applies gain and bias of that extent.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Exact GELU, x * Phi(x).
Tensor gelu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
// Single element as a shape-[1] tensor.
Tensor pick(const Tensor& x, std::size_t flat_index);
// Concatenates shape-[1] tensors into one vector.
Tensor stack(const std::vector<Tensor>& scalars);

// Column means of a [r x d] matrix -> [1 x d].
Tensor mean_rows(const Tensor& x);
// Averages consecutive blocks of `group` rows: [g*m x d] -> [m x d].
Tensor group_mean_rows(const Tensor& x, std::size_t group);

// Boolean [queries x keys] matrix; true at (i, j) lets query i attend key j.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(std::size_t queries, std::size_t keys, bool fill);

  static AttentionMask causal(std::size_t length);
  static AttentionMask full(std::size_t queries, std::size_t keys) { return {queries, keys, true}; }

  std::size_t queries() const noexcept { return queries_; }
  std::size_t keys() const noexcept { return keys_; }
  bool allowed(std::size_t i, std::size_t j) const { return bits_[i * keys_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool on) { bits_[i * keys_ + j] = on ? 1 : 0; }
  bool is_causal() const;

 private:
  std::size_t queries_ = 0;
  std::size_t keys_ = 0;
  std::vector<unsigned char> bits_;
};

// Describes which rows form each attention sequence. Sequence s attends
// from rows query_rows[s] of q to rows key_rows[s] of k and v. Positions
// used by the mask are indices within those lists.
struct AttentionPlan {
  std::vector<std::vector<std::size_t>> query_rows;
  std::vector<std::vector<std::size_t>> key_rows;
  std::size_t heads = 1;
  std::optional<AttentionMask> mask;
};

// Softmax weights captured during a forward pass, indexed [sequence][head]
// and stored row-major [queries x keys].
struct AttentionWeights {
  std::vector<std::vector<std::vector<double>>> weights;
  std::size_t queries = 0;
  std::size_t keys = 0;
};

// Multi-head scaled dot-product attention over the sequences of `plan`.
// q, k, v are [rows x d] with d divisible by plan.heads; output matches q.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionPlan& plan,
                 AttentionWeights* weights_out = nullptr);

}  // namespace pclformer::ops
