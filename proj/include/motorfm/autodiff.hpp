#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "motorfm/tensor.hpp"

namespace motorfm {

enum class Padding { same, valid };

// Forward kernels. Inputs may carry a leading batch axis:
//   conv1d          [C_in, L] or [B, C_in, L]    -> [C_out, L_out] / [B, C_out, L_out]
//   global_avg_pool [C, L] or [B, C, L]          -> [C] / [B, C]
//   dense           [D] or [B, D]                -> [M] / [B, M]
namespace kernels {

std::size_t conv_output_length(std::size_t length, std::size_t kernel, Padding padding);

Tensor conv1d(const Tensor& input, const Tensor& weights, const Tensor& bias, Padding padding);
Tensor leaky_relu(const Tensor& x, double alpha);
Tensor global_avg_pool(const Tensor& x);
Tensor dense(const Tensor& x, const Tensor& weights, const Tensor& bias);

/// Softmax probabilities of one logit vector.
std::vector<double> softmax(std::span<const double> logits);

/// -log softmax(logits)[label], evaluated with max subtraction.
double softmax_sparse_ce(std::span<const double> logits, int label);

}  // namespace kernels

class Tape;

/// Handle to a tensor recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode tape.
///
/// Operations are recorded in execution order; `backward` replays them in
/// reverse, visiting each exactly once. A node requires a gradient when it is
/// a trainable leaf or when any of its inputs does, so frozen subgraphs cost
/// nothing on the way back. Gradients are summed when a node feeds several
/// consumers.
class Tape {
 public:
  /// Backward rule of a custom op. `out_grad` is the gradient of the op's
  /// output; the rule adds its contribution into `grad_target(input)`.
  using BackwardFn = std::function<void(Tape& tape, const Tensor& out_grad)>;

  Var leaf(Tensor value, bool requires_grad = false);

  Var conv1d(Var input, Var weights, Var bias, Padding padding);
  Var leaky_relu(Var x, double alpha);
  Var global_avg_pool(Var x);
  Var dense(Var x, Var weights, Var bias);
  /// Mean cross-entropy over the batch. `logits` is [M] (one label) or [B, M].
  Var softmax_sparse_ce(Var logits, std::span<const int> labels);
  Var sum(Var x);
  Var add(Var a, Var b);

  /// Records an op with a caller-supplied backward rule.
  Var record(std::vector<Var> inputs, Tensor value, BackwardFn backward);

  void backward(Var loss);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  /// Gradient of the last backward pass; zeros when `v` was not reached.
  /// Throws for nodes that do not require a gradient.
  Tensor grad(Var v) const;

  /// Accumulation buffer for `v`, or nullptr if `v` needs no gradient.
  Tensor* grad_target(Var v);

  std::size_t op_count() const { return ops_.size(); }
  /// Number of ops replayed by the most recent `backward`.
  std::size_t last_backward_visits() const { return visits_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
  };
  struct Op {
    std::size_t output;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad);
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  std::vector<Op> ops_;
  std::size_t visits_ = 0;
};

}  // namespace motorfm
