#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lgd {

using Shape = std::vector<int64_t>;

int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

/// One executed differentiable operation. `backward` reads the output's grad
/// and accumulates into the grads of those inputs that require them.
struct Node {
  const char* name = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty means "no grad yet"
  bool requires_grad = false;
  bool consumed = false;  // set on non-leaf tensors once their graph has been run backward
  std::shared_ptr<Node> node;

  /// Returns the grad buffer, zero-allocating it on first use.
  float* grad_buffer();
};

/// Dense row-major f32 tensor. Copies share storage (handle semantics); use
/// clone() for an independent copy. Values are immutable after construction
/// except through mutable_data(), which only optimizers and loaders should use.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0f); }
  static Tensor scalar(float v) { return Tensor(Shape{}, std::vector<float>{v}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int64_t rank() const { return static_cast<int64_t>(shape().size()); }
  int64_t dim(int64_t i) const;
  int64_t numel() const;

  std::span<const float> data() const;
  std::span<float> mutable_data();
  float item() const;
  float at(std::initializer_list<int64_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const float> grad() const;
  Tensor grad_tensor() const;
  void zero_grad();

  /// Same values, no graph history, independent storage.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Runs reverse-mode differentiation from a scalar loss. Every requires_grad
/// leaf reachable from the loss receives d(loss)/d(leaf), accumulated into its
/// grad. The graph is released afterwards; a second call throws UsageError.
void backward(const Tensor& loss);

bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

using BackwardFn = std::function<void(const TensorImpl& out)>;

/// Wraps a freshly computed forward result. Records a graph node when grad
/// mode is on and any input requires grad. Throws NumericError on non-finite output.
Tensor make_result(const char* name, Shape shape, std::vector<float> data,
                   std::vector<std::shared_ptr<TensorImpl>> inputs, BackwardFn backward);

bool any_requires_grad(const std::vector<std::shared_ptr<TensorImpl>>& inputs);

}  // namespace detail

}  // namespace lgd
