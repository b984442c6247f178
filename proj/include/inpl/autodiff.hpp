#pragma once

#include "inpl/core.hpp"
#include "inpl/graph.hpp"

#include <functional>
#include <span>
#include <vector>

namespace inpl::ad {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while
/// the owning Tape is alive.
class Tensor {
 public:
  Tensor() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records primitive operations in execution order so that backward() can
/// visit them once, in reverse. One tape per forward/backward pass; not
/// shareable across threads.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that receives a gradient.
  Tensor parameter(Matrix value);
  /// Leaf that never receives a gradient (data, frozen noise).
  Tensor constant(Matrix value);

  /// Records an op output. `backward` is only kept when some parent needs
  /// a gradient.
  Tensor record(Matrix value, std::initializer_list<Tensor> parents, BackwardFn backward);
  Tensor record(Matrix value, std::span<const Tensor> parents, BackwardFn backward);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Adds `g` into the gradient slot of `id` (no-op for constants).
  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    auto& node = nodes_[id];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0)
      node.grad = g;
    else
      node.grad += g;
  }

  /// Gradient of the most recent backward() loss; zeros when unreachable.
  Matrix grad(const Tensor& t) const;
  const Matrix& grad_ref(std::size_t id) const { return nodes_[id].grad; }

  /// Reverse-mode sweep from a 1x1 loss. Throws ShapeError otherwise.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Tensor push(Node node);

  std::vector<Node> nodes_;
};

// Primitive set. Each op checks shapes and throws ShapeError naming both
// operands on mismatch. All operands must live on the same tape.

Tensor matmul(const Tensor& a, const Tensor& b);
/// Row u of the output is the sum of rows d[v] over neighbors v of u.
Tensor spmm(const Graph& s, const Tensor& d);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_cols(std::initializer_list<Tensor> parts);
/// Columns [begin, begin + count).
Tensor slice_cols(const Tensor& t, Index begin, Index count);
Tensor gather_rows(const Tensor& t, std::span<const Index> rows);

Tensor relu(const Tensor& t);
Tensor sigmoid(const Tensor& t);
/// Throws DomainError naming the first non-positive entry.
Tensor log(const Tensor& t);
Tensor exp(const Tensor& t);
/// alpha * t + beta * other.
Tensor add_scaled(const Tensor& t, const Tensor& other, double alpha, double beta);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& t, double c);
Tensor hadamard(const Tensor& a, const Tensor& b);
/// Adds a 1 x cols row to every row of t.
Tensor add_row(const Tensor& t, const Tensor& row);
/// Multiplies row u of t by s(u, 0); s is rows x 1.
Tensor row_scale(const Tensor& t, const Tensor& s);
/// Sum of all entries, as a 1x1 tensor.
Tensor sum(const Tensor& t);
/// Row sums, rows x 1.
Tensor sum_rows(const Tensor& t);

/// Max-shifted row-wise log-softmax.
Tensor log_softmax_rows(const Tensor& t);
Tensor softmax_rows(const Tensor& t);

/// Mean over `mask` of -logprobs(u, labels[u]). Throws InputError when the
/// mask is empty.
Tensor nll(const Tensor& logprobs, std::span<const int> labels, std::span<const Index> mask);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t param = 0;
  Index row = 0;
  Index col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Builds a scalar objective on `tape` from leaf tensors bound to `params`.
using Objective = std::function<Tensor(Tape& tape, std::span<const Tensor> params)>;

/// Central-difference check of every entry of every parameter. The
/// objective must be deterministic (hold any random draws fixed). Relative
/// error is |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult finite_diff_check(const Objective& f, std::vector<Matrix> params, double eps = 1e-4);

}  // namespace inpl::ad
