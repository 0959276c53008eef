#include "hasseg/tape.hpp"

#include "hasseg/error.hpp"

namespace hasseg {

template <typename T>
bool Tape<T>::wants(std::initializer_list<const Tensor<T>*> inputs) const {
  if (!enabled_) return false;
  for (const auto* t : inputs) {
    if (t && t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
void Tape<T>::record(std::string op, std::vector<Tensor<T>> inputs, Tensor<T> output,
                     std::function<void()> backward) {
  Record rec;
  rec.op = std::move(op);
  rec.output = output.id();
  for (const auto& in : inputs) rec.inputs.push_back(in.id());
  output.set_requires_grad(true);
  records_.push_back(std::move(rec));
  outputs_.push_back(std::move(output));
  backward_fns_.push_back(std::move(backward));
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + loss.shape().str());
  }
  Tensor<T> seed = loss;
  seed.ensure_grad()[0] += T(1);
  trace_.clear();
  for (std::size_t i = backward_fns_.size(); i-- > 0;) {
    // Ops whose output never received a gradient are not on a path from the loss.
    if (!outputs_[i].has_grad()) continue;
    trace_.push_back(i);
    backward_fns_[i]();
    backward_fns_[i] = nullptr;
    if (!retain_grads_) outputs_[i].clear_grad();
  }
  // Release saved intermediates; records stay for inspection.
  backward_fns_.clear();
  outputs_.clear();
}

template <typename T>
void Tape<T>::clear() {
  records_.clear();
  outputs_.clear();
  backward_fns_.clear();
  trace_.clear();
}

template class Tape<float>;
template class Tape<double>;

}  // namespace hasseg
