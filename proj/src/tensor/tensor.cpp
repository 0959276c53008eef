#include "hasseg/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

#include "hasseg/error.hpp"

namespace hasseg {

namespace {
std::atomic<std::uint64_t> next_tensor_id{1};
}  // namespace

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (auto d : dims_) n *= d;
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "x" : "") << dims_[i];
  os << ']';
  return os.str();
}

void require_5d(const Shape& shape, std::string_view what) {
  if (shape.rank() != 5) {
    throw ShapeError(std::string(what) + ": expected a 5-d NxCxDxHxW tensor, got " + shape.str());
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->data.assign(shape.numel(), T(0));
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
  node_->id = next_tensor_id.fetch_add(1, std::memory_order_relaxed);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  if (values.size() != shape.numel()) {
    throw ShapeError("Tensor: " + std::to_string(values.size()) + " values for shape " +
                     shape.str());
  }
  node_->data = std::move(values);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
  node_->id = next_tensor_id.fetch_add(1, std::memory_order_relaxed);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  Tensor t(std::move(shape));
  std::fill(t.node_->data.begin(), t.node_->data.end(), value);
  return t;
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!node_) throw ShapeError("use of an undefined tensor");
  return node_->shape;
}

template <typename T>
std::span<T> Tensor<T>::data() {
  if (!node_) throw ShapeError("use of an undefined tensor");
  return node_->data;
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  if (!node_) throw ShapeError("use of an undefined tensor");
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
  return node_->data[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool value) {
  if (!node_) throw ShapeError("use of an undefined tensor");
  node_->requires_grad = value;
  return *this;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return node_ && !node_->grad.empty();
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  if (!has_grad()) throw ShapeError("tensor has no gradient");
  return node_->grad;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) throw ShapeError("tensor has no gradient");
  return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::ensure_grad() {
  if (!node_) throw ShapeError("use of an undefined tensor");
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
  return node_->grad;
}

template <typename T>
void Tensor<T>::clear_grad() {
  if (node_) {
    node_->grad.clear();
    node_->grad.shrink_to_fit();
  }
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(shape(), node_->data, false);
}

template <typename T>
std::uint64_t Tensor<T>::id() const {
  return node_ ? node_->id : 0;
}

template <typename T>
void Tensor<T>::check_finite(std::string_view what) const {
  for (T v : data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(what) + ": non-finite value in tensor " + shape().str());
    }
  }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace hasseg
