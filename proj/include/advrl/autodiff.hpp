#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "advrl/tensor.hpp"

namespace advrl {

class Tape;

/// Handle to a value recorded on a Tape. Only meaningful for the tape that
/// produced it.
class Var {
 public:
  std::size_t index() const noexcept { return index_; }

 private:
  friend class Tape;
  explicit Var(std::size_t index) : index_(index) {}
  std::size_t index_;
};

/// Result of one backward pass: one gradient per tape entry.
class Gradients {
 public:
  /// d(loss)/d(v), shaped like v. Zeros if v does not influence the loss.
  Tensor wrt(Var v) const;

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
  std::vector<Shape> shapes_;
};

/// Reverse-mode tape.
///
/// Operations are recorded in call order, which is already a topological
/// order, so backward() is a single reverse sweep. Only nodes that depend on
/// a `variable` carry gradients; everything downstream of constants alone is
/// skipped. backward() does not modify the tape and may be called repeatedly.
class Tape {
 public:
  Var constant(Tensor value);
  Var variable(Tensor value);
  // Leaves that borrow `value` instead of copying it; the tensor must
  // outlive the tape and stay unmodified while the tape is in use.
  Var constant_ref(const Tensor& value);
  Var variable_ref(const Tensor& value);

  const Tensor& value(Var v) const {
    const Node& n = nodes_[v.index()];
    return n.borrowed ? *n.borrowed : n.value;
  }
  bool requires_grad(Var v) const { return nodes_[v.index()].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var matmul(Var a, Var b);
  Var conv2d(Var input, Var filters, std::size_t stride);
  Var relu(Var x);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var x, double factor);
  // bias (length m) added to every row of an (n×)m tensor.
  Var add_bias(Var x, Var bias);
  // bias (length f) added per channel of an f×h×w or n×f×h×w tensor.
  Var add_channel_bias(Var x, Var bias);
  Var reshape(Var x, Shape shape);
  Var square(Var x);
  Var exp(Var x);
  Var log(Var x);
  // Along the last axis, with max subtraction.
  Var softmax(Var x);
  Var log_softmax(Var x);
  // Row i of a 2-D tensor contributes element indices[i]; a 1-D tensor takes
  // a single index. Result has one entry per row.
  Var pick(Var x, std::vector<std::size_t> indices);
  Var sum(Var x);
  Var mean(Var x);

  /// Gradients of the scalar `loss` with respect to every recorded value.
  Gradients backward(Var loss) const;

 private:
  enum class Op {
    leaf, matmul, conv2d, relu, add, sub, mul, scale, add_bias, add_channel_bias,
    reshape, square, exp, log, softmax, log_softmax, pick, sum, mean
  };

  struct Node {
    Op op = Op::leaf;
    std::size_t a = 0;
    std::size_t b = 0;
    double param = 0.0;
    std::vector<std::size_t> indices;
    Tensor value;
    const Tensor* borrowed = nullptr;
    bool requires_grad = false;

    const Tensor& get() const { return borrowed ? *borrowed : value; }
  };

  Var record(Op op, Tensor value, std::size_t a, std::size_t b, bool uses_b);
  void backward_node(const Node& node, const Tensor& grad, std::vector<Tensor>& grads) const;

  std::vector<Node> nodes_;
};

/// ∂loss/∂input from a traced forward pass. Throws ContractError if `loss`
/// is not a single-element value.
Tensor input_gradient(const Tape& tape, Var loss, Var input);

/// Central differences (f(x + h·e_i) − f(x − h·e_i)) / 2h for each coordinate.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h);

}  // namespace advrl
