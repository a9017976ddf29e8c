#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "brac/tensor.hpp"

namespace brac {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// tape that produced it is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape. One tape per training step: ops append nodes, backward()
/// walks them in reverse, then the tape is dropped.
///
/// Every recorded value is checked for finiteness; a NaN or Inf raises
/// TrainingError naming the op and the tape's step index.
class Tape {
 public:
  /// Receives the gradient of the node's output and accumulates into parents.
  using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

  explicit Tape(std::int64_t step_index = 0) : step_index_(step_index) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Non-owning constant; `value` must outlive the tape.
  Var constant_ref(const Tensor& value);
  /// Trainable leaf bound to `param`. Binding the same tensor twice returns the
  /// same node so gradients from every use accumulate together.
  Var parameter(const Tensor& param);

  /// Records an op result. `parents` lists the node ids the backward closure
  /// may write to; the closure is dropped when no parent needs a gradient.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> parents, Backward fn);

  /// Runs reverse accumulation from a 1x1 loss.
  void backward(Var loss);

  /// Gradient of a recorded node (zeros when unreachable from the loss).
  Tensor grad(Var v) const;
  /// Gradient with respect to a bound parameter tensor (zeros if never bound).
  Tensor gradient_of(const Tensor& param) const;
  std::vector<Tensor> gradients(std::span<const Tensor* const> params) const;

  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  const Tensor& value(int id) const;
  /// Lazily-zeroed gradient buffer for node `id`; used by backward closures.
  Tensor& grad_buffer(int id);

  std::int64_t step_index() const { return step_index_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, int> params_;
  std::int64_t step_index_;
};

/// Differentiable operations. All operate on rank-2 values; binary
/// elementwise ops broadcast (r,c) against (r,c), (1,c), (r,1) or (1,1).
namespace ad {

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
/// x * w + b with b of shape (1, out).
Var linear(Var x, Var w, Var b);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);

Var relu(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
Var softplus(Var a);
/// log(1 - tanh(a)^2), stable for large |a|.
Var log1m_tanh_sq(Var a);
/// Hard clamp; gradient is zero where the input lies outside [lo, hi].
Var clamp(Var a, double lo, double hi);

/// Sum of all entries, shape (1,1).
Var sum(Var a);
Var mean(Var a);
/// Sum over columns, shape (r,1).
Var row_sum(Var a);
/// Row-wise min / max over columns, shape (r,1); ties route the gradient to the first index.
Var row_min(Var a);
Var row_max(Var a);
/// Mean over consecutive groups of `n` rows: (r*n, c) -> (r, c).
Var group_mean(Var a, std::size_t n);
/// Repeats each row `n` times consecutively: (r, c) -> (r*n, c).
Var repeat_rows(Var a, std::size_t n);
Var concat_cols(Var a, Var b);
Var slice_cols(Var a, std::size_t start, std::size_t count);
/// Copy of the value with no gradient path.
Var stop_gradient(Var a);

/// Per-group squared MMD with the Laplacian kernel exp(-|x-y|_1 / sigma).
/// X is (groups*n, d), Y is (groups*m, d); returns (groups, 1). Biased
/// V-statistic: self-pairs are included in the within-set expectations.
Var mmd_laplacian(Var x, Var y, std::size_t n, std::size_t m, double sigma);

}  // namespace ad
}  // namespace brac
