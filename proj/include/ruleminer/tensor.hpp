#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ruleminer/common.hpp"

namespace ruleminer {

// A parameter or value with an optional accumulated gradient. Tensors are
// single-writer: they may be moved between threads but not mutated
// concurrently.
struct Tensor {
  Matrix value;
  Matrix grad;  // same shape as value once gradients have been accumulated
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Matrix v, bool rg = false)
      : value(std::move(v)), requires_grad(rg) {
    grad = Matrix::Zero(value.rows(), value.cols());
  }

  void zero_grad() { grad.setZero(); }
};

class Tape;

// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

enum class Op {
  kLeaf,
  kConst,
  kMatMul,
  kAdd,
  kAddRowVec,
  kMul,
  kAffine,
  kTranspose,
  kSoftmaxRows,
  kTanh,
  kSigmoid,
  kGelu,
  kExp,
  kLogClamped,
  kSoftplus,
  kSum,
  kColMean,
  kStats4,
  kCosineSim,
  kConcatCols,
  kRowScale,
  kScalarMul,
  kPick,
  kRowSlice,
};

const char* op_name(Op op);

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order by construction; the backward pass is a single reverse
// sweep that visits each node exactly once. Single-writer, like Tensor.
class Tape {
 public:
  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    double s0 = 0.0;           // scalar payload (affine scale / offset)
    double s1 = 0.0;
    std::vector<int> indices;  // payload for kPick
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Tensor* leaf = nullptr;  // bound parameter for kLeaf nodes
  };

  // Creates a leaf bound to `t`; backward() accumulates into t.grad when
  // t.requires_grad is set.
  Var leaf(Tensor& t);
  // Creates an unbound constant node (never receives gradient).
  Var constant(Matrix v);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  const Matrix& grad_of(Var v) const { return nodes_[v.id].grad; }
  size_t size() const { return nodes_.size(); }

  // Runs the reverse sweep from a scalar (1x1) output node and accumulates
  // gradients into all bound leaves with requires_grad. Throws on non-scalar
  // outputs.
  void backward(Var output);

  Var emit(Op op, int a, int b, Matrix value, double s0 = 0.0, double s1 = 0.0,
           std::vector<int> indices = {});

  const Node& node(int id) const { return nodes_[id]; }

 private:
  std::vector<Node> nodes_;
};

// --- Op builders -----------------------------------------------------------
//
// Free functions that evaluate eagerly and record on the tape. Every result
// is checked finite; non-finite values raise NumericError naming the op.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
// Broadcast-add a 1xC row vector to every row of a.
Var add_rowvec(Var a, Var v);
Var mul(Var a, Var b);           // elementwise
Var affine(Var a, double scale, double offset);
Var transpose(Var a);
Var softmax_rows(Var a);
Var tanh_op(Var a);
Var sigmoid(Var a);
Var gelu(Var a);
Var exp_op(Var a);
// log(max(x, 1e-12)); the clamp makes probability underflow deterministic.
Var log_clamped(Var a);
Var softplus(Var a);
Var sum(Var a);                  // -> 1x1
Var colmean(Var a);              // mean over rows -> 1xC
// Summary statistics [mean, std, min, max] over all entries -> 1x4.
Var stats4(Var a);
// Pairwise cosine similarity of rows: (NxD, KxD) -> NxK. Rows with norm
// below 1e-12 yield similarity 0 (and no gradient), so zero vectors cannot
// propagate NaN into downstream softmaxes.
Var cosine_sim(Var a, Var b);
Var concat_cols(Var a, Var b);   // (TxP, TxQ) -> Tx(P+Q)
// Scale row t of a (TxC) by d(t,0) of d (Tx1).
Var row_scale(Var a, Var d);
// Multiply a by a 1x1 tape scalar.
Var scalar_mul(Var a, Var s);
// Gather one entry per row: out(t,0) = p(t, indices[t]).
Var pick(Var p, const std::vector<int>& indices);
// Single row as a 1xC view.
Var row(Var a, int r);

// Convenience compositions.
Var sub(Var a, Var b);
Var neg(Var a);

// --- Value-level helpers ---------------------------------------------------

// Numerically stabilized row softmax on plain matrices (shared by the tape op
// and value-level callers).
Matrix softmax_rows_value(const Matrix& a);

// Cosine similarity of two equal-length vectors; 0 if either norm < 1e-12.
double cosine_similarity(const Matrix& x, const Matrix& y);

// Deterministic argmax over a row; ties break toward the lowest index.
int argmax_row(const Matrix& row, int r = 0);

// --- Gradient checking -----------------------------------------------------

// Central-difference oracle. `f(with_grad)` must deterministically evaluate
// the scalar objective from the current parameter values; when `with_grad`
// is true it must also accumulate analytic gradients into each parameter's
// grad (which this function zeroes beforehand). Returns
//   max over entries of |analytic - central| / max(1, |central|).
double finite_difference_check(const std::vector<Tensor*>& params,
                               const std::function<double(bool)>& f,
                               double h);

// --- Op registry (used by the generic gradient property tests) -------------

struct OpSpec {
  std::string name;
  int arity;  // 1 or 2
  // Builds random conformable input values, rows/cols <= 6.
  std::function<std::vector<Matrix>(class Rng&)> make_inputs;
  std::function<Var(Tape&, std::vector<Var>&)> build;
};

const std::vector<OpSpec>& differentiable_op_registry();

}  // namespace ruleminer
