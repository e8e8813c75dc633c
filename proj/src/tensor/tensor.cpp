#include "mhal/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace mhal {

namespace {
std::atomic<bool> g_finite_checks{false};

template <class T>
void check_finite_impl(std::span<const T> v, const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      std::ostringstream os;
      os << what << ": non-finite element at flat index " << i;
      throw NumericError(os.str());
    }
  }
}
}  // namespace

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks_enabled() { return g_finite_checks.load(std::memory_order_relaxed); }

void check_finite_or_throw(std::span<const float> v, const char* what) { check_finite_impl(v, what); }
void check_finite_or_throw(std::span<const double> v, const char* what) { check_finite_impl(v, what); }

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <class T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <class T>
Tensor<T> Tensor<T>::full(Shape shape, T fill) {
  for (auto e : shape) {
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
  auto node = std::make_shared<Node<T>>();
  node->value.assign(static_cast<std::size_t>(mhal::numel(shape)), fill);
  node->shape = std::move(shape);
  return Tensor(std::move(node));
}

template <class T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values) {
  for (auto e : shape) {
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
  if (mhal::numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("shape " + to_string(shape) + " needs " + std::to_string(mhal::numel(shape)) +
                     " elements, got " + std::to_string(values.size()));
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

template <class T>
T Tensor<T>::item() const {
  if (node_->value.size() != 1) {
    throw ShapeError("item() on tensor of shape " + to_string(node_->shape));
  }
  return node_->value[0];
}

template <class T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  if (!node_->leaf) throw AutodiffError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = on;
  return *this;
}

template <class T>
Tensor<T> Tensor<T>::detach() const {
  auto node = std::make_shared<Node<T>>();
  node->shape = node_->shape;
  node->value = node_->value;
  return Tensor(std::move(node));
}

template <class T>
void Tape<T>::push(std::shared_ptr<Node<T>> output,
                   std::function<void(const std::vector<T>&)> backward) {
  if (consumed_) throw AutodiffError("recording onto a tape that has already run backward; reset it first");
  records_.push_back({std::move(output), std::move(backward)});
}

template <class T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (consumed_) throw AutodiffError("backward called twice on the same tape without reset");
  if (!loss.defined() || loss.numel() != 1) {
    throw AutodiffError("backward needs a scalar loss, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) throw AutodiffError("loss is not connected to any leaf that requires grad");
  consumed_ = true;

  auto seed = loss.node()->grad_buffer();
  seed[0] += T(1);
  if (loss.is_leaf()) return;

  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    auto& out = *it->output;
    if (out.grad.empty()) continue;
    it->backward(out.grad);
    out.grad.clear();
    out.grad.shrink_to_fit();
  }
}

template <class T>
void Tape<T>::reset() {
  records_.clear();
  consumed_ = false;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace mhal
