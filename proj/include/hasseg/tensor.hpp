#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hasseg {

/// Ordered dimension list. Feature volumes use the N x C x D x H x W layout.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) : dims_(dims) {}
  explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {}

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t i) const { return dims_.at(i); }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t numel() const;

  // 5-d accessors; callers must have checked rank() == 5.
  std::size_t n() const { return dims_[0]; }
  std::size_t c() const { return dims_[1]; }
  std::size_t d() const { return dims_[2]; }
  std::size_t h() const { return dims_[3]; }
  std::size_t w() const { return dims_[4]; }
  std::size_t spatial() const { return dims_[2] * dims_[3] * dims_[4]; }

  bool operator==(const Shape&) const = default;
  std::string str() const;

 private:
  std::vector<std::size_t> dims_;
};

/// Throws ShapeError unless `shape` is 5-d.
void require_5d(const Shape& shape, std::string_view what);

/// Reference-counted handle to an n-d array that participates in autodiff.
/// Copies of a Tensor share storage; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);
  // Keeps Tensor(shape, {v}) from binding to the bool overload.
  Tensor(Shape shape, std::initializer_list<T> values, bool requires_grad = false)
      : Tensor(std::move(shape), std::vector<T>(values), requires_grad) {}

  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t numel() const { return shape().numel(); }

  std::span<T> data();
  std::span<const T> data() const;
  T item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);

  bool has_grad() const;
  std::span<T> grad();
  std::span<const T> grad() const;
  /// Allocates a zero gradient if none exists, then returns it.
  std::span<T> ensure_grad();
  void clear_grad();

  Tensor clone() const;
  /// Unique, monotonically assigned id of the underlying storage.
  std::uint64_t id() const;

  /// Throws NumericError if any element is NaN or infinite.
  void check_finite(std::string_view what) const;

 private:
  struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::uint64_t id = 0;
  };
  std::shared_ptr<Node> node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

/// Converts between precisions (used to run gradient checks in 64-bit mode).
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& src) {
  std::vector<To> values(src.numel());
  auto in = src.data();
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<To>(in[i]);
  return Tensor<To>(src.shape(), std::move(values), src.requires_grad());
}

}  // namespace hasseg
