#include "inpl/autodiff.hpp"
#include "inpl/random.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace inpl;
using namespace inpl::ad;

namespace {

Matrix random_matrix(Index r, Index c, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

// Weighted sum against a fixed random matrix, so every output entry matters.
Tensor probe(Tape& tape, const Tensor& t, std::uint64_t seed = 77) {
  const Tensor w = tape.constant(random_matrix(t.rows(), t.cols(), seed));
  return sum(hadamard(t, w));
}

void expect_grad_ok(const Objective& f, std::vector<Matrix> params, double tol = 1e-6) {
  const auto r = finite_diff_check(f, std::move(params));
  EXPECT_LT(r.max_rel_error, tol) << "param " << r.param << " (" << r.row << "," << r.col << ") analytic "
                                  << r.analytic << " numeric " << r.numeric;
}

}  // namespace

TEST(Tape, ForwardValuesMatchEigen) {
  Tape tape;
  const Matrix a = random_matrix(3, 4, 1), b = random_matrix(4, 2, 2);
  const Tensor ta = tape.parameter(a), tb = tape.parameter(b);
  EXPECT_TRUE(matmul(ta, tb).value().isApprox(a * b, 1e-15));
  EXPECT_EQ(concat_cols({ta, ta}).cols(), 8);
  EXPECT_TRUE(slice_cols(ta, 1, 2).value().isApprox(a.middleCols(1, 2)));
  EXPECT_DOUBLE_EQ(sum(ta).scalar(), a.sum());
  EXPECT_TRUE(add_scaled(ta, ta, 0.25, 0.5).value().isApprox(0.75 * a));
  const Matrix sm = softmax_rows(ta).value();
  for (Index i = 0; i < sm.rows(); ++i) EXPECT_NEAR(sm.row(i).sum(), 1.0, 1e-15);
  EXPECT_TRUE(exp(log_softmax_rows(ta)).value().isApprox(sm, 1e-14));
}

TEST(Tape, LogSoftmaxIsStableForLargeLogits) {
  Tape tape;
  Matrix big(1, 3);
  big << 1000.0, 1001.0, 999.0;
  const Matrix lp = log_softmax_rows(tape.constant(big)).value();
  EXPECT_TRUE(lp.allFinite());
  EXPECT_NEAR(lp.array().exp().sum(), 1.0, 1e-12);
}

TEST(Tape, SigmoidStableAtExtremes) {
  Tape tape;
  Matrix x(1, 2);
  x << -800.0, 800.0;
  const Matrix s = sigmoid(tape.constant(x)).value();
  EXPECT_EQ(s(0, 0), 0.0);
  EXPECT_EQ(s(0, 1), 1.0);
}

TEST(Tape, SpmmMatchesDenseProduct) {
  const Graph g = build_graph(std::vector<Edge>{{0, 1}, {1, 2}, {2, 3}, {0, 3}, {1, 3}}, 5);
  Tape tape;
  const Matrix d = random_matrix(5, 3, 4);
  EXPECT_TRUE(spmm(g, tape.constant(d)).value().isApprox(g.densify() * d, 1e-15));
  EXPECT_TRUE(spmm(g, tape.constant(d)).value().row(4).isZero());
}

TEST(Tape, ShapeErrorsNameOperands) {
  Tape tape;
  const Tensor a = tape.parameter(Matrix::Zero(2, 3));
  const Tensor b = tape.parameter(Matrix::Zero(2, 3));
  EXPECT_THROW(matmul(a, b), ShapeError);
  EXPECT_THROW(add(a, tape.parameter(Matrix::Zero(3, 2))), ShapeError);
  EXPECT_THROW(slice_cols(a, 2, 2), ShapeError);
  try {
    matmul(a, b);
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("2x3"), std::string::npos);
  }
}

TEST(Tape, LogRejectsNonPositive) {
  Tape tape;
  Matrix m(1, 3);
  m << 1.0, 0.0, 2.0;
  try {
    log(tape.constant(m));
    FAIL() << "expected DomainError";
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("(0, 1)"), std::string::npos);
  }
}

TEST(Tape, BackwardRequiresScalar) {
  Tape tape;
  const Tensor a = tape.parameter(Matrix::Ones(2, 2));
  EXPECT_THROW(tape.backward(a), ShapeError);
}

TEST(Tape, NllRejectsEmptyMask) {
  Tape tape;
  const Tensor lp = log_softmax_rows(tape.parameter(Matrix::Zero(3, 2)));
  const std::vector<int> y{0, 1, 0};
  EXPECT_THROW(nll(lp, y, std::vector<Index>{}), InputError);
}

TEST(Tape, NllUniformIsLogC) {
  Tape tape;
  const Tensor lp = log_softmax_rows(tape.parameter(Matrix::Zero(4, 3)));
  const std::vector<int> y{0, 1, 2, 0};
  const std::vector<Index> mask{0, 2, 3};
  EXPECT_NEAR(nll(lp, y, mask).scalar(), std::log(3.0), 1e-15);
}

TEST(Tape, GradientAccumulatesAcrossUses) {
  Tape tape;
  const Tensor x = tape.parameter(Matrix::Constant(1, 1, 3.0));
  const Tensor y = add(hadamard(x, x), scale(x, 2.0));  // x^2 + 2x
  tape.backward(sum(y));
  EXPECT_DOUBLE_EQ(tape.grad(x)(0, 0), 8.0);
}

TEST(Tape, ConstantsAndUnreachableGetZeroGrad) {
  Tape tape;
  const Tensor c = tape.constant(Matrix::Ones(2, 2));
  const Tensor p = tape.parameter(Matrix::Ones(2, 2));
  const Tensor unused = tape.parameter(Matrix::Ones(2, 2));
  tape.backward(sum(hadamard(c, p)));
  EXPECT_TRUE(tape.grad(c).isZero());
  EXPECT_TRUE(tape.grad(unused).isZero());
  EXPECT_EQ(tape.grad(unused).rows(), 2);
  EXPECT_TRUE(tape.grad(p).isApprox(Matrix::Ones(2, 2)));
}

TEST(Tape, SecondBackwardResetsGradients) {
  Tape tape;
  const Tensor p = tape.parameter(Matrix::Constant(1, 1, 2.0));
  const Tensor loss = hadamard(p, p);
  tape.backward(loss);
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(tape.grad(p)(0, 0), 4.0);
}

TEST(GradCheck, Matmul) {
  expect_grad_ok([](Tape& t, std::span<const Tensor> p) { return probe(t, matmul(p[0], p[1])); },
                 {random_matrix(3, 4, 1), random_matrix(4, 2, 2)});
}

TEST(GradCheck, Spmm) {
  const Graph g = build_graph(std::vector<Edge>{{0, 1}, {1, 2}, {2, 3}, {0, 2}}, 4);
  expect_grad_ok([&](Tape& t, std::span<const Tensor> p) { return probe(t, spmm(g, p[0])); },
                 {random_matrix(4, 3, 3)});
}

TEST(GradCheck, ConcatSliceGather) {
  const std::vector<Index> rows{2, 0, 2};
  expect_grad_ok(
      [&](Tape& t, std::span<const Tensor> p) {
        const Tensor c = concat_cols({p[0], p[1]});
        return probe(t, gather_rows(slice_cols(c, 1, 3), rows));
      },
      {random_matrix(3, 2, 4), random_matrix(3, 3, 5)});
}

TEST(GradCheck, Elementwise) {
  // Entries bounded away from 0 keep relu off its kink.
  Matrix x = random_matrix(3, 3, 6, 0.2, 1.0);
  x(0, 0) = -0.7;
  x(1, 2) = -0.4;
  const Matrix pos = random_matrix(3, 3, 7, 0.5, 2.0);
  expect_grad_ok([](Tape& t, std::span<const Tensor> p) { return probe(t, relu(p[0])); }, {x});
  expect_grad_ok([](Tape& t, std::span<const Tensor> p) { return probe(t, sigmoid(p[0])); }, {x});
  expect_grad_ok([](Tape& t, std::span<const Tensor> p) { return probe(t, exp(p[0])); }, {x});
  expect_grad_ok([](Tape& t, std::span<const Tensor> p) { return probe(t, log(p[0])); }, {pos});
}

TEST(GradCheck, Arithmetic) {
  expect_grad_ok(
      [](Tape& t, std::span<const Tensor> p) {
        const Tensor a = add_scaled(p[0], p[1], 0.3, -1.7);
        const Tensor b = sub(hadamard(a, p[1]), scale(p[0], 2.5));
        return probe(t, add(b, p[0]));
      },
      {random_matrix(2, 3, 8), random_matrix(2, 3, 9)});
}

TEST(GradCheck, RowOps) {
  expect_grad_ok(
      [](Tape& t, std::span<const Tensor> p) {
        const Tensor a = add_row(p[0], p[1]);
        const Tensor b = row_scale(a, p[2]);
        return add(probe(t, b), probe(t, sum_rows(b), 3));
      },
      {random_matrix(4, 3, 10), random_matrix(1, 3, 11), random_matrix(4, 1, 12)});
}

TEST(GradCheck, SoftmaxFamilyAndNll) {
  const std::vector<int> y{0, 2, 1, 1};
  const std::vector<Index> mask{0, 1, 3};
  expect_grad_ok([](Tape& t, std::span<const Tensor> p) { return probe(t, softmax_rows(p[0])); },
                 {random_matrix(4, 3, 13, -2, 2)});
  expect_grad_ok([](Tape& t, std::span<const Tensor> p) { return probe(t, log_softmax_rows(p[0])); },
                 {random_matrix(4, 3, 14, -2, 2)});
  expect_grad_ok([&](Tape&, std::span<const Tensor> p) { return nll(log_softmax_rows(p[0]), y, mask); },
                 {random_matrix(4, 3, 15, -2, 2)});
}

TEST(GradCheck, ReportsBadGradient) {
  // A deliberately wrong backward rule must be caught by the checker.
  auto broken_square = [](Tape& t, std::span<const Tensor> p) {
    const Tensor& x = p[0];
    Matrix v = x.value().array().square();
    const Tensor out = t.record(v, {x}, [id = x.id()](Tape& tape, std::size_t self) {
      tape.accumulate(id, tape.grad_ref(self) * 3.0);
    });
    return sum(out);
  };
  const auto r = finite_diff_check(broken_square, {Matrix::Constant(1, 1, 2.0)});
  EXPECT_GT(r.max_rel_error, 0.1);
}
