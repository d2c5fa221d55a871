#include "lgd/tensor.hpp"

#include <bit>

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "lgd/errors.hpp"

namespace lgd {

namespace {
thread_local bool t_grad_enabled = true;
}

int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

float* TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0f);
  return grad.data();
}

Tensor::Tensor(Shape shape, float fill) : impl_(std::make_shared<TensorImpl>()) {
  impl_->data.assign(static_cast<size_t>(numel_of(shape)), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : impl_(std::make_shared<TensorImpl>()) {
  if (numel_of(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw UsageError("use of undefined tensor");
  return impl_->shape;
}

int64_t Tensor::dim(int64_t i) const {
  const auto& s = shape();
  const auto r = static_cast<int64_t>(s.size());
  if (i < 0) i += r;
  if (i < 0 || i >= r) throw ShapeError("dim index out of range for shape " + shape_str(s));
  return s[static_cast<size_t>(i)];
}

int64_t Tensor::numel() const { return static_cast<int64_t>(data().size()); }

std::span<const float> Tensor::data() const {
  if (!impl_) throw UsageError("use of undefined tensor");
  return impl_->data;
}

std::span<float> Tensor::mutable_data() {
  if (!impl_) throw UsageError("use of undefined tensor");
  return impl_->data;
}

float Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

float Tensor::at(std::initializer_list<int64_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ShapeError("index rank mismatch for " + shape_str(s));
  int64_t flat = 0;
  size_t k = 0;
  for (auto i : index) {
    if (i < 0 || i >= s[k]) throw RangeError("index out of range for " + shape_str(s));
    flat = flat * s[k] + i;
    ++k;
  }
  return impl_->data[static_cast<size_t>(flat)];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!impl_) throw UsageError("use of undefined tensor");
  if (impl_->node) throw UsageError("requires_grad can only be set on leaf tensors");
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return impl_ && !impl_->node; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const float> Tensor::grad() const {
  if (!has_grad()) throw UsageError("tensor has no grad");
  return impl_->grad;
}

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) throw UsageError("tensor has no grad");
  return Tensor(impl_->shape, impl_->grad);
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data); }

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

namespace detail {

bool any_requires_grad(const std::vector<std::shared_ptr<TensorImpl>>& inputs) {
  for (const auto& in : inputs)
    if (in && in->requires_grad) return true;
  return false;
}

Tensor make_result(const char* name, Shape shape, std::vector<float> data,
                   std::vector<std::shared_ptr<TensorImpl>> inputs, BackwardFn backward) {
  // Inf and NaN are exactly the values with an all-ones exponent.
  uint32_t bad = 0;
  for (float v : data) {
    const auto bits = std::bit_cast<uint32_t>(v);
    bad |= static_cast<uint32_t>((bits & 0x7f800000u) == 0x7f800000u);
  }
  if (bad) throw NumericError(std::string("non-finite value produced by ") + name);
  Tensor out(std::move(shape), std::move(data));
  if (t_grad_enabled && any_requires_grad(inputs)) {
    for (const auto& in : inputs) {
      if (in && in->consumed)
        throw UsageError(std::string(name) + ": input belongs to a graph that was already run backward");
    }
    auto node = std::make_shared<Node>();
    node->name = name;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    out.impl()->node = std::move(node);
    out.impl()->requires_grad = true;
  }
  return out;
}

}  // namespace detail

void backward(const Tensor& loss) {
  if (!loss.defined()) throw UsageError("backward on undefined tensor");
  const auto& root = loss.impl();
  if (root->data.size() != 1)
    throw UsageError("backward requires a scalar loss, got shape " + shape_str(root->shape));
  if (root->consumed) throw UsageError("backward called twice on the same graph; re-run forward first");
  if (!root->requires_grad) throw UsageError("loss does not depend on any tensor that requires grad");

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (impl->node && next < impl->node->inputs.size()) {
      TensorImpl* child = impl->node->inputs[next++].get();
      if (child && child->requires_grad && !visited.count(child)) {
        if (child->consumed) throw UsageError("graph contains tensors from a consumed graph");
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(impl);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* impl = *it;
    if (impl->node && !impl->grad.empty()) impl->node->backward(*impl);
  }
  for (TensorImpl* impl : order) {
    if (impl->node) {
      impl->node.reset();
      impl->grad.clear();
      impl->grad.shrink_to_fit();
      impl->consumed = true;
    }
  }
}

}  // namespace lgd
