#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "vinlab/tensor.hpp"

namespace vinlab {

/// Handle to a value recorded on a Tape.
struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

/// Reverse-mode tape. Every op appends one node holding its output value and,
/// when any input needs a gradient, a closure that pushes the output gradient
/// back to the inputs. backward() replays the closures in reverse order.
///
/// Leaves created with parameter() refer to caller-owned tensors, which must
/// outlive the tape.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, Var out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  /// Owned leaf that does not receive a gradient.
  Var constant(Tensor<T> value) { return push_owned(std::move(value), false); }

  /// Owned leaf that receives a gradient.
  Var variable(Tensor<T> value) { return push_owned(std::move(value), true); }

  /// Non-owning leaf that receives a gradient (model weights).
  Var parameter(const Tensor<T>& ref) {
    Node node;
    node.external = &ref;
    node.requires_grad = true;
    nodes_.push_back(std::move(node));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  /// Non-owning leaf without gradient.
  Var constant_ref(const Tensor<T>& ref) {
    Node node;
    node.external = &ref;
    nodes_.push_back(std::move(node));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  /// Appends an op result. `backward` is dropped when no input needs a gradient.
  Var record(Tensor<T> value, std::span<const Var> inputs, BackwardFn backward,
             std::string_view op_name);
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn backward,
             std::string_view op_name) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward),
                  op_name);
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient of the last backward() target w.r.t. `v`; zeros if nothing flowed.
  Tensor<T> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (!n.grad.empty()) return n.grad;
    return Tensor<T>::zeros(value(v).shape());
  }

  /// Gradient buffer for accumulation inside backward closures.
  Tensor<T>& grad_buffer(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty() && !value(v).empty()) n.grad = Tensor<T>::zeros(value(v).shape());
    return n.grad;
  }

  /// Seeds d(target)/d(target) = 1 (target must hold one element) and replays.
  void backward(Var target);

  /// Replays with an explicit seed gradient for `target`.
  void backward(Var target, const Tensor<T>& seed);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
    std::string_view op;
  };

  Var push_owned(Tensor<T> value, bool requires_grad) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  std::deque<Node> nodes_;  // deque keeps value references stable across record()
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace vinlab
