#include "pclformer/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "pclformer/error.hpp"

namespace pclformer {

namespace {
thread_local int no_grad_depth = 0;
}

bool grad_enabled() { return no_grad_depth == 0; }
NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void detail::TensorImpl::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto extent : shape) {
    if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_to_string(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_to_string(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }
Tensor Tensor::ones(Shape shape, bool requires_grad) { return full(std::move(shape), 1.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data), requires_grad);
}

Tensor Tensor::wrap(std::shared_ptr<detail::TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(impl_->shape));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }
std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (impl_->data.size() != 1) {
    throw ContractError("item() needs a single-element tensor, got " + shape_to_string(impl_->shape));
  }
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return impl_->grad.size() == impl_->data.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (has_grad()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

std::string Tensor::op_name() const { return impl_->producer ? impl_->producer->op : std::string{}; }
bool Tensor::is_leaf() const { return impl_->producer == nullptr; }

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }

ComputeGraph ComputeGraph::trace(const Tensor& root) {
  ComputeGraph g;
  g.root_ = root.impl();
  // Iterative post-order DFS; children are visited in input order so the
  // resulting order is deterministic.
  std::unordered_set<const detail::TensorImpl*> seen;
  struct Frame {
    std::shared_ptr<detail::TensorImpl> impl;
    std::size_t next_input;
  };
  std::vector<Frame> stack;
  stack.push_back({g.root_, 0});
  seen.insert(g.root_.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    const auto& producer = top.impl->producer;
    if (producer && top.next_input < producer->inputs.size()) {
      auto child = producer->inputs[top.next_input++];
      if (child->requires_grad && seen.insert(child.get()).second) {
        stack.push_back({std::move(child), 0});
      }
      continue;
    }
    g.order_.push_back(top.impl);
    stack.pop_back();
  }
  return g;
}

std::vector<std::string> ComputeGraph::op_names() const {
  std::vector<std::string> names;
  for (const auto& impl : order_) {
    if (impl->producer) names.push_back(impl->producer->op);
  }
  return names;
}

void ComputeGraph::backward() const {
  if (!root_) return;
  if (root_->data.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_to_string(root_->shape));
  }
  // Intermediate gradients start from zero on every pass; leaves accumulate.
  for (const auto& impl : order_) {
    if (impl->producer) impl->grad.assign(impl->data.size(), 0.0);
  }
  root_->ensure_grad();
  root_->grad[0] += 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    const auto& impl = *it;
    if (impl->producer && impl->producer->backward) impl->producer->backward(*impl);
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward on an undefined tensor");
  if (loss.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_to_string(loss.shape()));
  }
  ComputeGraph::trace(loss).backward();
}

}  // namespace pclformer
