#include "latentplan/tensor.h"

#include <algorithm>
#include <cstdlib>
#include <new>
#include <sstream>
#include <unordered_set>

namespace latentplan {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

template <std::floating_point T>
std::shared_ptr<TensorImpl<T>> new_impl(Shape shape, std::vector<T> data, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl<T>>();
  if (static_cast<int64_t>(data.size()) != shape_numel(shape)) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return impl;
}

}  // namespace

template <std::floating_point T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <std::floating_point T>
Tensor<T> Tensor<T>::ones(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(1), requires_grad);
}

template <std::floating_point T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = static_cast<size_t>(shape_numel(shape));
  return Tensor(new_impl<T>(std::move(shape), std::vector<T>(n, value), requires_grad));
}

template <std::floating_point T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  return Tensor(new_impl<T>(std::move(shape), std::move(values), requires_grad));
}

template <std::floating_point T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

template <std::floating_point T>
Tensor<T> Tensor<T>::randn(Shape shape, Rng& rng, T stddev, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  std::vector<T> values(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return from(std::move(shape), std::move(values), requires_grad);
}

template <std::floating_point T>
Tensor<T> Tensor<T>::uniform(Shape shape, Rng& rng, T lo, T hi, bool requires_grad) {
  std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
  std::vector<T> values(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return from(std::move(shape), std::move(values), requires_grad);
}

template <std::floating_point T>
int64_t Tensor<T>::dim(int i) const {
  const auto n = static_cast<int>(impl_->shape.size());
  if (i < 0) i += n;
  if (i < 0 || i >= n) throw ShapeError("dimension index out of range for " + shape_str(shape()));
  return impl_->shape[static_cast<size_t>(i)];
}

template <std::floating_point T>
T Tensor<T>::item() const {
  if (impl_->data.size() != 1) {
    throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
  }
  return impl_->data[0];
}

template <std::floating_point T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

template <std::floating_point T>
Tensor<T> Tensor<T>::clone() const {
  return from(impl_->shape, impl_->data, false);
}

template <std::floating_point T>
ComputationRecord<T> computation_record(const Tensor<T>& root) {
  ComputationRecord<T> record;
  std::unordered_set<TensorImpl<T>*> visited;
  // Iterative post-order DFS so deep graphs do not exhaust the stack.
  std::vector<std::pair<TensorImpl<T>*, size_t>> stack;
  stack.emplace_back(root.impl(), 0);
  visited.insert(root.impl());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
      continue;
    }
    record.nodes.push_back(node);
    stack.pop_back();
  }
  return record;
}

template <std::floating_point T>
void backward(const Tensor<T>& root) {
  if (!root.defined() || root.numel() != 1) {
    throw UsageError("backward() requires a scalar root");
  }
  if (!root.requires_grad()) {
    throw UsageError("backward() root is not on a computation record");
  }
  auto record = computation_record(root);
  root.impl()->grad_buffer()[0] += T(1);
  for (auto it = record.nodes.rbegin(); it != record.nodes.rend(); ++it) {
    TensorImpl<T>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
  // Intermediate gradients are not needed after the sweep.
  for (TensorImpl<T>* node : record.nodes) {
    if (!node->op.empty()) node->grad.clear();
  }
}

namespace {
thread_local bool no_grad_active = false;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(no_grad_active) { no_grad_active = true; }
NoGradGuard::~NoGradGuard() { no_grad_active = previous_; }
bool NoGradGuard::active() { return no_grad_active; }

template <std::floating_point T>
Tensor<T> make_result(std::string op, Shape shape, std::vector<T> data,
                      std::vector<Tensor<T>> parents,
                      std::function<void(TensorImpl<T>&)> backward_fn) {
  auto impl = new_impl<T>(std::move(shape), std::move(data), false);
  impl->op = std::move(op);
  const bool needs_grad = !no_grad_active && std::any_of(parents.begin(), parents.end(),
                                      [](const Tensor<T>& p) { return p.requires_grad(); });
  if (needs_grad) {
    impl->requires_grad = true;
    impl->parents.reserve(parents.size());
    for (auto& p : parents) impl->parents.push_back(p.shared());
    impl->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(impl));
}

template class Tensor<float>;
template class Tensor<double>;
template ComputationRecord<float> computation_record(const Tensor<float>&);
template ComputationRecord<double> computation_record(const Tensor<double>&);
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);
template Tensor<float> make_result(std::string, Shape, std::vector<float>,
                                   std::vector<Tensor<float>>,
                                   std::function<void(TensorImpl<float>&)>);
template Tensor<double> make_result(std::string, Shape, std::vector<double>,
                                    std::vector<Tensor<double>>,
                                    std::function<void(TensorImpl<double>&)>);

}  // namespace latentplan

// Every heap block starts on a 64-byte boundary. Eigen picks its vectorized
// reduction split from the data address, so without this the same
// computation can round differently depending on where a buffer landed.
// Blocks stay compatible with free(), so mixing with the default allocator
// is safe.
namespace {
constexpr std::size_t kHeapAlign = 64;

void* aligned_new(std::size_t n) {
  const std::size_t size = (std::max<std::size_t>(n, 1) + kHeapAlign - 1) / kHeapAlign * kHeapAlign;
  if (void* p = std::aligned_alloc(kHeapAlign, size)) return p;
  throw std::bad_alloc();
}
}  // namespace

void* operator new(std::size_t n) { return aligned_new(n); }
void* operator new[](std::size_t n) { return aligned_new(n); }
void operator delete(void* p) noexcept { std::free(p); }
void operator delete[](void* p) noexcept { std::free(p); }
void operator delete(void* p, std::size_t) noexcept { std::free(p); }
void operator delete[](void* p, std::size_t) noexcept { std::free(p); }
