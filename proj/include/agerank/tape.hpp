#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "agerank/tensor.hpp"

namespace agerank {

/// Handle to a node recorded on a Tape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const noexcept { return id != npos; }
};

/// Misuse of the tape: backward before forward, unknown node, missing gradient.
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so every
/// record's inputs precede it and backward is a single reverse sweep.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Var leaf(Tensor<T> value, bool requires_grad = false) {
    if (!value.all_finite()) throw NonFiniteError("leaf: input contains NaN/Inf");
    nodes_.push_back(Node{"leaf", std::move(value), {}, requires_grad, nullptr});
    return Var{nodes_.size() - 1};
  }

  /// Appends an operation result. `inputs` decides differentiability; the
  /// backward closure is dropped when none of them requires a gradient.
  Var record(std::string_view op, Tensor<T> out, const std::vector<Var>& inputs, BackwardFn fn) {
    bool needs = false;
    for (auto in : inputs) {
      check(in, op);
      needs = needs || nodes_[in.id].requires_grad;
    }
    if (!out.all_finite()) {
      throw NonFiniteError(std::string(op) + ": output of shape " + to_string(out.shape()) +
                           " contains NaN/Inf");
    }
    nodes_.push_back(Node{std::string(op), std::move(out), {}, needs, needs ? std::move(fn) : nullptr});
    return Var{nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const {
    check(v, "value");
    return nodes_[v.id].value;
  }

  bool requires_grad(Var v) const {
    check(v, "requires_grad");
    return nodes_[v.id].requires_grad;
  }

  bool has_grad(Var v) const {
    check(v, "has_grad");
    return !nodes_[v.id].grad.empty();
  }

  const Tensor<T>& grad(Var v) const {
    check(v, "grad");
    const auto& n = nodes_[v.id];
    if (!n.requires_grad) throw TapeError("grad: node " + std::to_string(v.id) + " (" + n.op + ") is not differentiable");
    if (n.grad.empty()) throw TapeError("grad: backward has not been run");
    return n.grad;
  }

  /// Mutable gradient accumulator for a node, zero-initialised on first use.
  Tensor<T>& grad_buffer(Var v) {
    auto& n = nodes_[v.id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  bool wants_grad(Var v) const { return nodes_[v.id].requires_grad; }

  void backward(Var out) {
    check_backward(out);
    backward(out, Tensor<T>(nodes_[out.id].value.shape(), T{1}));
  }

  /// Propagates `seed` from `out` to every differentiable node. Gradient
  /// buffers of all differentiable nodes are (re)initialised to zero first.
  void backward(Var out, const Tensor<T>& seed) {
    check_backward(out);
    if (seed.shape() != nodes_[out.id].value.shape()) {
      throw ShapeError("backward: seed shape " + to_string(seed.shape()) + " does not match output shape " +
                       to_string(nodes_[out.id].value.shape()));
    }
    for (auto& n : nodes_) {
      if (n.requires_grad) {
        n.grad = Tensor<T>(n.value.shape());
      } else {
        n.grad = Tensor<T>();
      }
    }
    if (!nodes_[out.id].requires_grad) return;
    nodes_[out.id].grad = seed;
    for (std::size_t i = out.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.backward) continue;
      // Node storage is not resized during the sweep, so the reference stays valid.
      n.backward(*this, n.grad);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const std::string& op_name(Var v) const { return nodes_.at(v.id).op; }

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::string op;
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  void check(Var v, std::string_view where) const {
    if (!v.valid() || v.id >= nodes_.size()) {
      throw TapeError(std::string(where) + ": unknown node id " +
                      (v.valid() ? std::to_string(v.id) : std::string("<invalid>")));
    }
  }

  void check_backward(Var out) const {
    if (nodes_.empty()) throw TapeError("backward: tape is empty; run forward first");
    check(out, "backward");
  }

  std::vector<Node> nodes_;
};

}  // namespace agerank
