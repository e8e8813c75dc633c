#pragma once

// Dense tensors with a reverse-mode tape.
//
// A Tensor is a shared handle to a Node holding the element buffer, an
// optional gradient buffer and the requires_grad flag. Operations record a
// backward closure on the thread's active Tape (see TapeScope) whenever one
// of their inputs requires a gradient. With no active tape nothing is
// recorded, which is how teacher forwards and evaluation run.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mhal {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or truncated on-disk data.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// When enabled, every op output is scanned for NaN/Inf.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool leaf = true;

  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T fill);
  static Tensor from(Shape shape, std::vector<T> values);
  static Tensor scalar(T v) { return from({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

  std::span<const T> data() const { return node_->value; }
  // Mutating an element buffer that is already on a tape invalidates it.
  std::span<T> mutable_data() { return node_->value; }
  T item() const;
  T operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool is_leaf() const { return node_->leaf; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void clear_grad() { node_->grad.clear(); }

  // Independent leaf holding a copy of the elements.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void push(std::shared_ptr<Node<T>> output, std::function<void(const std::vector<T>&)> backward);

  // Seeds d(loss)/d(loss) = 1 and replays records in reverse. Gradients are
  // added to whatever the leaves already hold.
  void backward(const Tensor<T>& loss);
  void reset();

  std::size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }

  static Tape* current() { return current_; }

 private:
  struct Record {
    std::shared_ptr<Node<T>> output;
    std::function<void(const std::vector<T>&)> backward;
  };
  std::vector<Record> records_;
  bool consumed_ = false;

  static inline thread_local Tape* current_ = nullptr;

  template <class>
  friend class TapeScope;
  template <class>
  friend class NoGradScope;
};

// Makes `tape` the recording target for this thread until destruction.
template <class T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(Tape<T>::current_) { Tape<T>::current_ = &tape; }
  ~TapeScope() { Tape<T>::current_ = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

template <class T>
class NoGradScope {
 public:
  NoGradScope() : prev_(Tape<T>::current_) { Tape<T>::current_ = nullptr; }
  ~NoGradScope() { Tape<T>::current_ = prev_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* prev_;
};

// Builds an op output. If a tape is active and any input requires a
// gradient, the output requires one too and `backward` is recorded; it
// receives the output gradient and must accumulate into the inputs.
template <class T, class Backward>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::initializer_list<Tensor<T>> inputs,
                      Backward&& backward);

void check_finite_or_throw(std::span<const float> v, const char* what);
void check_finite_or_throw(std::span<const double> v, const char* what);

template <class T, class Backward>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::initializer_list<Tensor<T>> inputs,
                      Backward&& backward) {
  if (finite_checks_enabled()) check_finite_or_throw(std::span<const T>(value), "op output");
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->leaf = false;
  Tape<T>* tape = Tape<T>::current();
  bool needs = false;
  if (tape != nullptr) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    tape->push(node, std::forward<Backward>(backward));
  }
  return Tensor<T>(std::move(node));
}

}  // namespace mhal
