#include "inpl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace inpl::ad {

namespace {

Tape& tape_of(const Tensor& t) {
  if (!t.valid()) throw InputError("tensor is not bound to a tape");
  return *t.tape();
}

Tape& common_tape(const Tensor& a, const Tensor& b) {
  Tape& ta = tape_of(a);
  if (&ta != &tape_of(b)) throw InputError("operands live on different tapes");
  return ta;
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace

const Matrix& Tensor::value() const { return tape_of(*this).value(id_); }

double Tensor::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("scalar(): tensor has shape " + shape_str(v));
  return v(0, 0);
}

Tensor Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::parameter(Matrix value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = true;
  return push(std::move(node));
}

Tensor Tape::constant(Matrix value) {
  Node node;
  node.value = std::move(value);
  return push(std::move(node));
}

Tensor Tape::record(Matrix value, std::initializer_list<Tensor> parents, BackwardFn backward) {
  return record(std::move(value), std::span<const Tensor>(parents.begin(), parents.size()), std::move(backward));
}

Tensor Tape::record(Matrix value, std::span<const Tensor> parents, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (const auto& p : parents) {
    if (p.tape() != this) throw InputError("operand recorded on a different tape");
    node.requires_grad = node.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  return push(std::move(node));
}

Matrix Tape::grad(const Tensor& t) const {
  const Node& node = nodes_[t.id()];
  if (node.grad.size() == 0) return Matrix::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

void Tape::backward(const Tensor& loss) {
  if (loss.tape() != this) throw InputError("backward(): loss is not on this tape");
  const Matrix& v = nodes_[loss.id()].value;
  if (v.size() != 1) throw ShapeError("backward(): loss must be 1x1, got " + shape_str(v));
  for (auto& node : nodes_) node.grad.resize(0, 0);
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad = Matrix::Ones(1, 1);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.backward || node.grad.size() == 0) continue;
    node.backward(*this, id);
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape& tape = common_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows())
    throw ShapeError("matmul: inner dimensions differ " + shape_str(av) + " x " + shape_str(bv));
  Matrix out = av * bv;
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_ref(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

namespace {

Matrix spmm_values(const Graph& s, const Matrix& d) {
  Matrix out = Matrix::Zero(d.rows(), d.cols());
  for (Index u = 0; u < s.num_nodes(); ++u)
    for (NodeId v : s.neighbors(u)) out.row(u) += d.row(v);
  return out;
}

}  // namespace

Tensor spmm(const Graph& s, const Tensor& d) {
  Tape& tape = tape_of(d);
  const Matrix& dv = d.value();
  if (s.num_nodes() != dv.rows())
    throw ShapeError("spmm: adjacency " + shape_str(s.num_nodes(), s.num_nodes()) + " vs dense " + shape_str(dv));
  Matrix out = spmm_values(s, dv);
  const std::size_t id = d.id();
  // Symmetric adjacency: the transpose product is the same row aggregation.
  return tape.record(std::move(out), {d}, [id, &s](Tape& t, std::size_t self) {
    t.accumulate(id, spmm_values(s, t.grad_ref(self)));
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  Tape& tape = tape_of(parts.front());
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.tape() != &tape) throw InputError("concat_cols: operands live on different tapes");
    if (p.rows() != rows)
      throw ShapeError("concat_cols: row mismatch " + shape_str(parts.front().value()) + " vs " + shape_str(p.value()));
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<std::size_t, Index>> ranges;
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    ranges.emplace_back(p.id(), offset);
    offset += p.cols();
  }
  return tape.record(std::move(out), parts, [ranges](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_ref(self);
    for (const auto& [id, begin] : ranges)
      if (t.requires_grad(id)) t.accumulate(id, g.middleCols(begin, t.value(id).cols()));
  });
}

Tensor concat_cols(std::initializer_list<Tensor> parts) {
  return concat_cols(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor slice_cols(const Tensor& t, Index begin, Index count) {
  Tape& tape = tape_of(t);
  const Matrix& v = t.value();
  if (begin < 0 || count < 0 || begin + count > v.cols())
    throw ShapeError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + shape_str(v));
  Matrix out = v.middleCols(begin, count);
  const std::size_t id = t.id();
  const Index rows = v.rows(), cols = v.cols();
  return tape.record(std::move(out), {t}, [id, begin, count, rows, cols](Tape& tp, std::size_t self) {
    Matrix g = Matrix::Zero(rows, cols);
    g.middleCols(begin, count) = tp.grad_ref(self);
    tp.accumulate(id, g);
  });
}

Tensor gather_rows(const Tensor& t, std::span<const Index> rows) {
  Tape& tape = tape_of(t);
  const Matrix& v = t.value();
  Matrix out(static_cast<Index>(rows.size()), v.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= v.rows())
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " outside " + shape_str(v));
    out.row(static_cast<Index>(i)) = v.row(rows[i]);
  }
  const std::size_t id = t.id();
  std::vector<Index> index(rows.begin(), rows.end());
  const Index total = v.rows(), cols = v.cols();
  return tape.record(std::move(out), {t}, [id, index = std::move(index), total, cols](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_ref(self);
    Matrix full = Matrix::Zero(total, cols);
    for (std::size_t i = 0; i < index.size(); ++i) full.row(index[i]) += g.row(static_cast<Index>(i));
    tp.accumulate(id, full);
  });
}

Tensor relu(const Tensor& t) {
  Tape& tape = tape_of(t);
  Matrix out = t.value().cwiseMax(0.0);
  const std::size_t id = t.id();
  return tape.record(std::move(out), {t}, [id](Tape& tp, std::size_t self) {
    const Matrix& x = tp.value(id);
    tp.accumulate(id, tp.grad_ref(self).cwiseProduct((x.array() > 0.0).cast<double>().matrix()));
  });
}

Tensor sigmoid(const Tensor& t) {
  Tape& tape = tape_of(t);
  Matrix out = t.value().unaryExpr([](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  const std::size_t id = t.id();
  return tape.record(std::move(out), {t}, [id](Tape& tp, std::size_t self) {
    const Matrix& y = tp.value(self);
    tp.accumulate(id, tp.grad_ref(self).cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Tensor log(const Tensor& t) {
  Tape& tape = tape_of(t);
  const Matrix& v = t.value();
  for (Index i = 0; i < v.rows(); ++i)
    for (Index j = 0; j < v.cols(); ++j)
      if (!(v(i, j) > 0.0))
        throw DomainError("log: non-positive entry " + std::to_string(v(i, j)) + " at (" + std::to_string(i) + ", " +
                          std::to_string(j) + ")");
  Matrix out = v.array().log().matrix();
  const std::size_t id = t.id();
  return tape.record(std::move(out), {t}, [id](Tape& tp, std::size_t self) {
    tp.accumulate(id, tp.grad_ref(self).cwiseQuotient(tp.value(id)));
  });
}

Tensor exp(const Tensor& t) {
  Tape& tape = tape_of(t);
  Matrix out = t.value().array().exp().matrix();
  const std::size_t id = t.id();
  return tape.record(std::move(out), {t}, [id](Tape& tp, std::size_t self) {
    tp.accumulate(id, tp.grad_ref(self).cwiseProduct(tp.value(self)));
  });
}

Tensor add_scaled(const Tensor& t, const Tensor& other, double alpha, double beta) {
  Tape& tape = common_tape(t, other);
  require_same_shape("add_scaled", t.value(), other.value());
  Matrix out = alpha * t.value() + beta * other.value();
  const std::size_t ia = t.id(), ib = other.id();
  return tape.record(std::move(out), {t, other}, [ia, ib, alpha, beta](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.requires_grad(ia)) tp.accumulate(ia, alpha * g);
    if (tp.requires_grad(ib)) tp.accumulate(ib, beta * g);
  });
}

Tensor add(const Tensor& a, const Tensor& b) { return add_scaled(a, b, 1.0, 1.0); }
Tensor sub(const Tensor& a, const Tensor& b) { return add_scaled(a, b, 1.0, -1.0); }

Tensor scale(const Tensor& t, double c) {
  Tape& tape = tape_of(t);
  Matrix out = c * t.value();
  const std::size_t id = t.id();
  return tape.record(std::move(out), {t}, [id, c](Tape& tp, std::size_t self) { tp.accumulate(id, c * tp.grad_ref(self)); });
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  Tape& tape = common_tape(a, b);
  require_same_shape("hadamard", a.value(), b.value());
  Matrix out = a.value().cwiseProduct(b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.requires_grad(ia)) tp.accumulate(ia, g.cwiseProduct(tp.value(ib)));
    if (tp.requires_grad(ib)) tp.accumulate(ib, g.cwiseProduct(tp.value(ia)));
  });
}

Tensor add_row(const Tensor& t, const Tensor& row) {
  Tape& tape = common_tape(t, row);
  const Matrix& tv = t.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != tv.cols())
    throw ShapeError("add_row: row " + shape_str(rv) + " does not broadcast over " + shape_str(tv));
  Matrix out = tv.rowwise() + rv.row(0);
  const std::size_t it = t.id(), ir = row.id();
  return tape.record(std::move(out), {t, row}, [it, ir](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.requires_grad(it)) tp.accumulate(it, g);
    if (tp.requires_grad(ir)) tp.accumulate(ir, g.colwise().sum());
  });
}

Tensor row_scale(const Tensor& t, const Tensor& s) {
  Tape& tape = common_tape(t, s);
  const Matrix& tv = t.value();
  const Matrix& sv = s.value();
  if (sv.cols() != 1 || sv.rows() != tv.rows())
    throw ShapeError("row_scale: scale " + shape_str(sv) + " does not match " + shape_str(tv));
  Matrix out = sv.col(0).asDiagonal() * tv;
  const std::size_t it = t.id(), is = s.id();
  return tape.record(std::move(out), {t, s}, [it, is](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_ref(self);
    if (tp.requires_grad(it)) tp.accumulate(it, tp.value(is).col(0).asDiagonal() * g);
    if (tp.requires_grad(is)) tp.accumulate(is, g.cwiseProduct(tp.value(it)).rowwise().sum());
  });
}

Tensor sum(const Tensor& t) {
  Tape& tape = tape_of(t);
  Matrix out(1, 1);
  out(0, 0) = t.value().sum();
  const std::size_t id = t.id();
  const Index rows = t.rows(), cols = t.cols();
  return tape.record(std::move(out), {t}, [id, rows, cols](Tape& tp, std::size_t self) {
    tp.accumulate(id, Matrix::Constant(rows, cols, tp.grad_ref(self)(0, 0)));
  });
}

Tensor sum_rows(const Tensor& t) {
  Tape& tape = tape_of(t);
  Matrix out = t.value().rowwise().sum();
  const std::size_t id = t.id();
  const Index cols = t.cols();
  return tape.record(std::move(out), {t}, [id, cols](Tape& tp, std::size_t self) {
    tp.accumulate(id, tp.grad_ref(self).replicate(1, cols));
  });
}

Tensor log_softmax_rows(const Tensor& t) {
  Tape& tape = tape_of(t);
  const Matrix& v = t.value();
  Matrix out(v.rows(), v.cols());
  for (Index i = 0; i < v.rows(); ++i) {
    const double shift = v.row(i).maxCoeff();
    const double lse = shift + std::log((v.row(i).array() - shift).exp().sum());
    out.row(i) = v.row(i).array() - lse;
  }
  const std::size_t id = t.id();
  return tape.record(std::move(out), {t}, [id](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad_ref(self);
    const Matrix p = tp.value(self).array().exp().matrix();
    // d/dx_j: g_j - p_j * sum_k g_k
    Matrix dx = g - (p.array().colwise() * g.rowwise().sum().array()).matrix();
    tp.accumulate(id, dx);
  });
}

Tensor softmax_rows(const Tensor& t) { return exp(log_softmax_rows(t)); }

Tensor nll(const Tensor& logprobs, std::span<const int> labels, std::span<const Index> mask) {
  if (mask.empty()) throw InputError("nll: empty mask");
  Tape& tape = tape_of(logprobs);
  const Matrix& lp = logprobs.value();
  if (static_cast<Index>(labels.size()) != lp.rows())
    throw ShapeError("nll: " + std::to_string(labels.size()) + " labels for logprobs " + shape_str(lp));
  double total = 0.0;
  for (Index u : mask) {
    const int y = labels[static_cast<std::size_t>(u)];
    if (u < 0 || u >= lp.rows() || y < 0 || y >= lp.cols())
      throw ShapeError("nll: node " + std::to_string(u) + " / label " + std::to_string(y) + " outside " + shape_str(lp));
    total -= lp(u, y);
  }
  const double count = static_cast<double>(mask.size());
  Matrix out(1, 1);
  out(0, 0) = total / count;
  std::vector<std::pair<Index, int>> picks;
  picks.reserve(mask.size());
  for (Index u : mask) picks.emplace_back(u, labels[static_cast<std::size_t>(u)]);
  const std::size_t id = logprobs.id();
  const Index rows = lp.rows(), cols = lp.cols();
  return tape.record(std::move(out), {logprobs}, [id, picks = std::move(picks), count, rows, cols](Tape& tp, std::size_t self) {
    const double g = tp.grad_ref(self)(0, 0) / count;
    Matrix dx = Matrix::Zero(rows, cols);
    for (const auto& [u, y] : picks) dx(u, y) -= g;
    tp.accumulate(id, dx);
  });
}

GradCheckResult finite_diff_check(const Objective& f, std::vector<Matrix> params, double eps) {
  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<Tensor> leaves;
    for (const auto& p : params) leaves.push_back(tape.parameter(p));
    const Tensor loss = f(tape, leaves);
    tape.backward(loss);
    for (const auto& leaf : leaves) analytic.push_back(tape.grad(leaf));
  }
  auto evaluate = [&]() {
    Tape tape;
    std::vector<Tensor> leaves;
    for (const auto& p : params) leaves.push_back(tape.constant(p));
    return f(tape, leaves).scalar();
  };
  GradCheckResult worst;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (Index i = 0; i < params[k].rows(); ++i)
      for (Index j = 0; j < params[k].cols(); ++j) {
        const double original = params[k](i, j);
        params[k](i, j) = original + eps;
        const double up = evaluate();
        params[k](i, j) = original - eps;
        const double down = evaluate();
        params[k](i, j) = original;
        const double numeric = (up - down) / (2.0 * eps);
        const double a = analytic[k](i, j);
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
        if (rel > worst.max_rel_error || (k == 0 && i == 0 && j == 0)) worst = {rel, k, i, j, a, numeric};
      }
  }
  return worst;
}

}  // namespace inpl::ad
