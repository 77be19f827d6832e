#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle to shared storage. Operations whose inputs
// require gradients produce outputs that remember their parents and a
// backward closure; `backward(root)` walks that graph in reverse
// topological order. The scalar type is a template parameter so the same
// network code runs in 32-bit for speed and in 64-bit for gradient checks.

#include <concepts>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "latentplan/errors.h"

namespace latentplan {

using Shape = std::vector<int64_t>;
using Rng = std::mt19937_64;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <std::floating_point T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;

  // Graph bookkeeping. Leaves have an empty `op`.
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;

  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <std::floating_point T>
class Tensor {
 public:
  using Impl = TensorImpl<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1), bool requires_grad = false);
  static Tensor uniform(Shape shape, Rng& rng, T lo, T hi, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t dim(int i) const;
  int64_t ndim() const { return static_cast<int64_t>(impl_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  std::vector<T>& values() { return impl_->data; }
  const std::vector<T>& values() const { return impl_->data; }
  T item() const;
  T at(int64_t i) const { return impl_->data[static_cast<size_t>(i)]; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag = true);
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->grad_buffer(); }
  void zero_grad() { impl_->grad.clear(); }

  const std::string& op() const { return impl_->op; }
  bool is_leaf() const { return impl_->op.empty(); }

  // Deep copy of the values into a fresh leaf.
  Tensor clone() const;

  Impl* impl() const { return impl_.get(); }
  const std::shared_ptr<Impl>& shared() const { return impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

// Ordered list of graph nodes reachable from a root, each appearing after
// all nodes producing its inputs.
template <std::floating_point T>
struct ComputationRecord {
  std::vector<TensorImpl<T>*> nodes;
};

template <std::floating_point T>
ComputationRecord<T> computation_record(const Tensor<T>& root);

// Accumulates d(root)/d(leaf) into every reachable leaf with requires_grad.
template <std::floating_point T>
void backward(const Tensor<T>& root);

// While alive, ops on this thread build no graph even for inputs that
// require gradients. Used for target-model and inference forwards.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
  static bool active();

 private:
  bool previous_;
};

// Builds an output node. When any parent requires a gradient, the output is
// registered on the graph with `backward_fn`; otherwise the closure is dropped.
template <std::floating_point T>
Tensor<T> make_result(std::string op, Shape shape, std::vector<T> data,
                      std::vector<Tensor<T>> parents,
                      std::function<void(TensorImpl<T>&)> backward_fn);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace latentplan
