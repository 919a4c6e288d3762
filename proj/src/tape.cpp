#include "vinlab/tape.hpp"

#include <sstream>

namespace vinlab {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

template <typename T>
Var Tape<T>::record(Tensor<T> value, std::span<const Var> inputs, BackwardFn backward,
                    std::string_view op_name) {
  if (!value.all_finite()) {
    throw NonFiniteError("non-finite value produced by " + std::string(op_name));
  }
  bool needs_grad = false;
  for (Var in : inputs) needs_grad = needs_grad || nodes_.at(in.id).requires_grad;
  Node node;
  node.value = std::move(value);
  node.requires_grad = needs_grad;
  node.op = op_name;
  if (needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
void Tape<T>::backward(Var target) {
  const Tensor<T>& v = value(target);
  if (v.size() != 1) {
    throw ShapeError("backward() without seed needs a single-element target, got " +
                     shape_string(v.shape()));
  }
  backward(target, Tensor<T>(v.shape(), T(1)));
}

template <typename T>
void Tape<T>::backward(Var target, const Tensor<T>& seed) {
  if (seed.shape() != value(target).shape()) {
    throw ShapeError("backward seed shape " + shape_string(seed.shape()) +
                     " differs from target " + shape_string(value(target).shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor<T>();
  if (!nodes_.at(target.id).requires_grad) return;
  nodes_[target.id].grad = seed;
  for (std::size_t k = target.id + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, Var{static_cast<std::uint32_t>(k)});
  }
  for (const Node& n : nodes_) {
    if (!n.grad.empty() && !n.grad.all_finite()) {
      throw NonFiniteError("non-finite gradient flowing into " +
                           std::string(n.op.empty() ? "leaf" : n.op));
    }
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace vinlab
