#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hasseg/tensor.hpp"

namespace hasseg {

/// Records executed ops so gradients can be propagated in reverse order.
///
/// A disabled tape (or one whose op inputs need no gradient) records nothing,
/// which is how inference avoids holding intermediates alive.
template <typename T>
class Tape {
 public:
  struct Record {
    std::string op;
    std::vector<std::uint64_t> inputs;
    std::uint64_t output = 0;
  };

  /// With retain_grads false, gradients of intermediate op outputs are freed as
  /// soon as they have been propagated; leaf gradients are always kept.
  explicit Tape(bool enabled = true, bool retain_grads = false)
      : enabled_(enabled), retain_grads_(retain_grads) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool enabled() const { return enabled_; }

  /// True if an op with these inputs must be recorded.
  bool wants(std::initializer_list<const Tensor<T>*> inputs) const;

  /// Appends an op. `output` is marked requires_grad. `backward` reads the
  /// output gradient and accumulates into the inputs that require one.
  void record(std::string op, std::vector<Tensor<T>> inputs, Tensor<T> output,
              std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded op in reverse order.
  /// Saved intermediates are released afterwards; records() remains. Throws ShapeError for a non-scalar loss.
  void backward(const Tensor<T>& loss);

  std::span<const Record> records() const { return records_; }
  /// Indices into records() in the order backward visited them.
  const std::vector<std::size_t>& backward_trace() const { return trace_; }

  void clear();

 private:
  bool enabled_;
  bool retain_grads_;
  std::vector<Record> records_;
  std::vector<Tensor<T>> outputs_;
  std::vector<std::function<void()>> backward_fns_;
  std::vector<std::size_t> trace_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace hasseg
