#include "ruleminer/tensor.hpp"

#include <cmath>

#include "ruleminer/random.hpp"

namespace ruleminer {

namespace {

constexpr double kNormFloor = 1e-12;
constexpr double kLogClamp = 1e-12;

void check_finite(const Matrix& m, const char* op) {
  if (!m.allFinite())
    throw NumericError(std::string("non-finite result in ") + op);
}

double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}

double gelu_deriv(double x) {
  const double phi = std::exp(-0.5 * x * x) * 0.3989422804014326779399461;
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * phi;
}

double softplus_scalar(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kConst: return "const";
    case Op::kMatMul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kAddRowVec: return "add_rowvec";
    case Op::kMul: return "mul";
    case Op::kAffine: return "affine";
    case Op::kTranspose: return "transpose";
    case Op::kSoftmaxRows: return "softmax_rows";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kGelu: return "gelu";
    case Op::kExp: return "exp";
    case Op::kLogClamped: return "log_clamped";
    case Op::kSoftplus: return "softplus";
    case Op::kSum: return "sum";
    case Op::kColMean: return "colmean";
    case Op::kStats4: return "stats4";
    case Op::kCosineSim: return "cosine_sim";
    case Op::kConcatCols: return "concat_cols";
    case Op::kRowScale: return "row_scale";
    case Op::kScalarMul: return "scalar_mul";
    case Op::kPick: return "pick";
    case Op::kRowSlice: return "row";
  }
  return "?";
}

Var Tape::leaf(Tensor& t) {
  Node n;
  n.op = Op::kLeaf;
  n.value = t.value;
  n.needs_grad = t.requires_grad;
  n.leaf = &t;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix v) {
  Node n;
  n.op = Op::kConst;
  n.value = std::move(v);
  n.needs_grad = false;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::emit(Op op, int a, int b, Matrix value, double s0, double s1,
               std::vector<int> indices) {
  check_finite(value, op_name(op));
  Node n;
  n.op = op;
  n.a = a;
  n.b = b;
  n.s0 = s0;
  n.s1 = s1;
  n.indices = std::move(indices);
  n.value = std::move(value);
  n.needs_grad = (a >= 0 && nodes_[a].needs_grad) ||
                 (b >= 0 && nodes_[b].needs_grad);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

namespace {

Tape* same_tape(Var a, Var b) {
  if (a.tape != b.tape)
    throw ShapeError("operands recorded on different tapes");
  return a.tape;
}

void ensure_grad(Tape::Node& n) {
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
}

}  // namespace

void Tape::backward(Var output) {
  if (output.tape != this) throw ShapeError("output recorded on another tape");
  Node& out = nodes_[output.id];
  if (out.value.rows() != 1 || out.value.cols() != 1)
    throw InputError("backward requires a scalar (1x1) output, got " +
                     shape_str(out.value));
  ensure_grad(out);
  out.grad(0, 0) = 1.0;

  for (int i = output.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs_grad && n.op != Op::kLeaf) continue;
    if (n.grad.size() == 0) continue;  // never reached from the output
    const Matrix& g = n.grad;
    Node* A = n.a >= 0 ? &nodes_[n.a] : nullptr;
    Node* B = n.b >= 0 ? &nodes_[n.b] : nullptr;
    auto want = [](Node* p) { return p && p->needs_grad; };
    if (want(A)) ensure_grad(*A);
    if (want(B)) ensure_grad(*B);

    switch (n.op) {
      case Op::kLeaf:
        if (n.leaf && n.leaf->requires_grad) n.leaf->grad += g;
        break;
      case Op::kConst:
        break;
      case Op::kMatMul:
        if (want(A)) A->grad += g * B->value.transpose();
        if (want(B)) B->grad += A->value.transpose() * g;
        break;
      case Op::kAdd:
        if (want(A)) A->grad += g;
        if (want(B)) B->grad += g;
        break;
      case Op::kAddRowVec:
        if (want(A)) A->grad += g;
        if (want(B)) B->grad += g.colwise().sum();
        break;
      case Op::kMul:
        if (want(A)) A->grad += g.cwiseProduct(B->value);
        if (want(B)) B->grad += g.cwiseProduct(A->value);
        break;
      case Op::kAffine:
        if (want(A)) A->grad += n.s0 * g;
        break;
      case Op::kTranspose:
        if (want(A)) A->grad += g.transpose();
        break;
      case Op::kSoftmaxRows:
        if (want(A)) {
          for (Eigen::Index r = 0; r < n.value.rows(); ++r) {
            const double dot = g.row(r).dot(n.value.row(r));
            A->grad.row(r) +=
                (n.value.row(r).array() * (g.row(r).array() - dot)).matrix();
          }
        }
        break;
      case Op::kTanh:
        if (want(A))
          A->grad += g.cwiseProduct(
              (1.0 - n.value.array().square()).matrix());
        break;
      case Op::kSigmoid:
        if (want(A))
          A->grad += g.cwiseProduct(
              (n.value.array() * (1.0 - n.value.array())).matrix());
        break;
      case Op::kGelu:
        if (want(A))
          A->grad += g.cwiseProduct(
              A->value.unaryExpr([](double x) { return gelu_deriv(x); }));
        break;
      case Op::kExp:
        if (want(A)) A->grad += g.cwiseProduct(n.value);
        break;
      case Op::kLogClamped:
        if (want(A))
          A->grad += g.cwiseProduct(A->value.unaryExpr([](double x) {
            return x > kLogClamp ? 1.0 / x : 0.0;
          }));
        break;
      case Op::kSoftplus:
        if (want(A))
          A->grad += g.cwiseProduct(A->value.unaryExpr(
              [](double x) { return sigmoid_scalar(x); }));
        break;
      case Op::kSum:
        if (want(A))
          A->grad.array() += g(0, 0);
        break;
      case Op::kColMean:
        if (want(A)) {
          const double inv = 1.0 / static_cast<double>(A->value.rows());
          A->grad += inv * g.replicate(A->value.rows(), 1);
        }
        break;
      case Op::kStats4:
        if (want(A)) {
          const Matrix& x = A->value;
          const auto N = static_cast<double>(x.size());
          const double mean = x.mean();
          const double var = (x.array() - mean).square().sum() / N;
          const double s = std::sqrt(var + 1e-12);
          A->grad.array() += g(0, 0) / N;
          A->grad += (g(0, 1) / (N * s)) * (x.array() - mean).matrix();
          // min/max subgradient at the first extremal entry (row-major scan)
          Eigen::Index min_i = 0, min_j = 0, max_i = 0, max_j = 0;
          double mn = x(0, 0), mx = x(0, 0);
          for (Eigen::Index r = 0; r < x.rows(); ++r)
            for (Eigen::Index c = 0; c < x.cols(); ++c) {
              if (x(r, c) < mn) { mn = x(r, c); min_i = r; min_j = c; }
              if (x(r, c) > mx) { mx = x(r, c); max_i = r; max_j = c; }
            }
          A->grad(min_i, min_j) += g(0, 2);
          A->grad(max_i, max_j) += g(0, 3);
        }
        break;
      case Op::kCosineSim: {
        const Matrix& a = A->value;
        const Matrix& b = B->value;
        const Matrix& s = n.value;
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
          const double na = a.row(i).norm();
          if (na < kNormFloor) continue;
          for (Eigen::Index j = 0; j < b.rows(); ++j) {
            const double nb = b.row(j).norm();
            if (nb < kNormFloor) continue;
            const double gij = g(i, j);
            if (gij == 0.0) continue;
            if (want(A))
              A->grad.row(i) +=
                  gij * (b.row(j) / (na * nb) - s(i, j) * a.row(i) / (na * na));
            if (want(B))
              B->grad.row(j) +=
                  gij * (a.row(i) / (na * nb) - s(i, j) * b.row(j) / (nb * nb));
          }
        }
        break;
      }
      case Op::kConcatCols:
        if (want(A)) A->grad += g.leftCols(A->value.cols());
        if (want(B)) B->grad += g.rightCols(B->value.cols());
        break;
      case Op::kRowScale:
        if (want(A)) {
          for (Eigen::Index r = 0; r < A->value.rows(); ++r)
            A->grad.row(r) += g.row(r) * B->value(r, 0);
        }
        if (want(B)) {
          for (Eigen::Index r = 0; r < A->value.rows(); ++r)
            B->grad(r, 0) += g.row(r).dot(A->value.row(r));
        }
        break;
      case Op::kScalarMul:
        if (want(A)) A->grad += B->value(0, 0) * g;
        if (want(B)) B->grad(0, 0) += g.cwiseProduct(A->value).sum();
        break;
      case Op::kPick:
        if (want(A)) {
          for (size_t t = 0; t < n.indices.size(); ++t)
            A->grad(static_cast<Eigen::Index>(t), n.indices[t]) += g(t, 0);
        }
        break;
      case Op::kRowSlice:
        if (want(A)) A->grad.row(n.indices[0]) += g.row(0);
        break;
    }
  }
}

// --- builders ---------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape* t = same_tape(a, b);
  const Matrix& A = t->value(a);
  const Matrix& B = t->value(b);
  if (A.cols() != B.rows())
    throw ShapeError("matmul: inner dimensions disagree: " + shape_str(A) +
                     " x " + shape_str(B));
  return t->emit(Op::kMatMul, a.id, b.id, A * B);
}

Var add(Var a, Var b) {
  Tape* t = same_tape(a, b);
  const Matrix& A = t->value(a);
  const Matrix& B = t->value(b);
  if (A.rows() != B.rows() || A.cols() != B.cols())
    throw ShapeError("add: shape mismatch: " + shape_str(A) + " vs " +
                     shape_str(B));
  return t->emit(Op::kAdd, a.id, b.id, A + B);
}

Var add_rowvec(Var a, Var v) {
  Tape* t = same_tape(a, v);
  const Matrix& A = t->value(a);
  const Matrix& V = t->value(v);
  if (V.rows() != 1 || V.cols() != A.cols())
    throw ShapeError("add_rowvec: expected 1x" + std::to_string(A.cols()) +
                     ", got " + shape_str(V));
  Matrix out = A;
  out.rowwise() += V.row(0);
  return t->emit(Op::kAddRowVec, a.id, v.id, std::move(out));
}

Var mul(Var a, Var b) {
  Tape* t = same_tape(a, b);
  const Matrix& A = t->value(a);
  const Matrix& B = t->value(b);
  if (A.rows() != B.rows() || A.cols() != B.cols())
    throw ShapeError("mul: shape mismatch: " + shape_str(A) + " vs " +
                     shape_str(B));
  return t->emit(Op::kMul, a.id, b.id, A.cwiseProduct(B));
}

Var affine(Var a, double scale, double offset) {
  Matrix out = (a.tape->value(a).array() * scale + offset).matrix();
  return a.tape->emit(Op::kAffine, a.id, -1, std::move(out), scale, offset);
}

Var transpose(Var a) {
  return a.tape->emit(Op::kTranspose, a.id, -1,
                      a.tape->value(a).transpose());
}

Matrix softmax_rows_value(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double mx = a.row(r).maxCoeff();
    Eigen::Array<double, 1, Eigen::Dynamic> e =
        (a.row(r).array() - mx).exp();
    out.row(r) = (e / e.sum()).matrix();
  }
  return out;
}

Var softmax_rows(Var a) {
  return a.tape->emit(Op::kSoftmaxRows, a.id, -1,
                      softmax_rows_value(a.tape->value(a)));
}

Var tanh_op(Var a) {
  return a.tape->emit(Op::kTanh, a.id, -1,
                      a.tape->value(a).array().tanh().matrix());
}

Var sigmoid(Var a) {
  return a.tape->emit(
      Op::kSigmoid, a.id, -1,
      a.tape->value(a).unaryExpr([](double x) { return sigmoid_scalar(x); }));
}

Var gelu(Var a) {
  return a.tape->emit(
      Op::kGelu, a.id, -1,
      a.tape->value(a).unaryExpr([](double x) { return gelu_scalar(x); }));
}

Var exp_op(Var a) {
  return a.tape->emit(Op::kExp, a.id, -1,
                      a.tape->value(a).array().exp().matrix());
}

Var log_clamped(Var a) {
  return a.tape->emit(Op::kLogClamped, a.id, -1,
                      a.tape->value(a).unaryExpr([](double x) {
                        return std::log(x > kLogClamp ? x : kLogClamp);
                      }));
}

Var softplus(Var a) {
  return a.tape->emit(
      Op::kSoftplus, a.id, -1,
      a.tape->value(a).unaryExpr([](double x) { return softplus_scalar(x); }));
}

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.tape->value(a).sum();
  return a.tape->emit(Op::kSum, a.id, -1, std::move(out));
}

Var colmean(Var a) {
  return a.tape->emit(Op::kColMean, a.id, -1,
                      a.tape->value(a).colwise().mean());
}

Var stats4(Var a) {
  const Matrix& x = a.tape->value(a);
  const auto N = static_cast<double>(x.size());
  const double mean = x.mean();
  const double var = (x.array() - mean).square().sum() / N;
  Matrix out(1, 4);
  out << mean, std::sqrt(var + 1e-12), x.minCoeff(), x.maxCoeff();
  return a.tape->emit(Op::kStats4, a.id, -1, std::move(out));
}

Var cosine_sim(Var a, Var b) {
  Tape* t = same_tape(a, b);
  const Matrix& A = t->value(a);
  const Matrix& B = t->value(b);
  if (A.cols() != B.cols())
    throw ShapeError("cosine_sim: row length mismatch: " + shape_str(A) +
                     " vs " + shape_str(B));
  Matrix out(A.rows(), B.rows());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    const double na = A.row(i).norm();
    for (Eigen::Index j = 0; j < B.rows(); ++j) {
      const double nb = B.row(j).norm();
      out(i, j) = (na < kNormFloor || nb < kNormFloor)
                      ? 0.0
                      : A.row(i).dot(B.row(j)) / (na * nb);
    }
  }
  return t->emit(Op::kCosineSim, a.id, b.id, std::move(out));
}

Var concat_cols(Var a, Var b) {
  Tape* t = same_tape(a, b);
  const Matrix& A = t->value(a);
  const Matrix& B = t->value(b);
  if (A.rows() != B.rows())
    throw ShapeError("concat_cols: row count mismatch: " + shape_str(A) +
                     " vs " + shape_str(B));
  Matrix out(A.rows(), A.cols() + B.cols());
  out << A, B;
  return t->emit(Op::kConcatCols, a.id, b.id, std::move(out));
}

Var row_scale(Var a, Var d) {
  Tape* t = same_tape(a, d);
  const Matrix& A = t->value(a);
  const Matrix& D = t->value(d);
  if (D.cols() != 1 || D.rows() != A.rows())
    throw ShapeError("row_scale: expected " + std::to_string(A.rows()) +
                     "x1 scale, got " + shape_str(D));
  Matrix out = A;
  for (Eigen::Index r = 0; r < A.rows(); ++r) out.row(r) *= D(r, 0);
  return t->emit(Op::kRowScale, a.id, d.id, std::move(out));
}

Var scalar_mul(Var a, Var s) {
  Tape* t = same_tape(a, s);
  const Matrix& S = t->value(s);
  if (S.rows() != 1 || S.cols() != 1)
    throw ShapeError("scalar_mul: scale must be 1x1, got " + shape_str(S));
  return t->emit(Op::kScalarMul, a.id, s.id, S(0, 0) * t->value(a));
}

Var pick(Var p, const std::vector<int>& indices) {
  const Matrix& P = p.tape->value(p);
  if (static_cast<Eigen::Index>(indices.size()) != P.rows())
    throw ShapeError("pick: need one index per row (" +
                     std::to_string(P.rows()) + "), got " +
                     std::to_string(indices.size()));
  Matrix out(P.rows(), 1);
  for (Eigen::Index r = 0; r < P.rows(); ++r) {
    const int j = indices[static_cast<size_t>(r)];
    if (j < 0 || j >= P.cols())
      throw ShapeError("pick: index " + std::to_string(j) +
                       " out of range for " + shape_str(P));
    out(r, 0) = P(r, j);
  }
  return p.tape->emit(Op::kPick, p.id, -1, std::move(out), 0.0, 0.0, indices);
}

Var row(Var a, int r) {
  const Matrix& A = a.tape->value(a);
  if (r < 0 || r >= A.rows())
    throw ShapeError("row: index " + std::to_string(r) + " out of range for " +
                     shape_str(A));
  return a.tape->emit(Op::kRowSlice, a.id, -1, A.row(r), 0.0, 0.0, {r});
}

Var sub(Var a, Var b) { return add(a, affine(b, -1.0, 0.0)); }
Var neg(Var a) { return affine(a, -1.0, 0.0); }

double cosine_similarity(const Matrix& x, const Matrix& y) {
  if (x.size() != y.size())
    throw ShapeError("cosine_similarity: length mismatch: " + shape_str(x) +
                     " vs " + shape_str(y));
  const Eigen::Map<const Eigen::VectorXd> xv(x.data(), x.size());
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), y.size());
  const double nx = xv.norm();
  const double ny = yv.norm();
  if (nx < kNormFloor || ny < kNormFloor) return 0.0;
  return xv.dot(yv) / (nx * ny);
}

int argmax_row(const Matrix& row, int r) {
  int best = 0;
  for (Eigen::Index j = 1; j < row.cols(); ++j)
    if (row(r, j) > row(r, best)) best = static_cast<int>(j);
  return best;
}

double finite_difference_check(const std::vector<Tensor*>& params,
                               const std::function<double(bool)>& f,
                               double h) {
  if (h <= 0.0) throw ConfigError("finite_difference_check: h must be > 0");
  for (Tensor* p : params) p->zero_grad();
  const double base = f(true);
  if (!std::isfinite(base))
    throw NumericError("finite_difference_check: objective is non-finite");

  double max_rel = 0.0;
  for (Tensor* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double saved = p->value.data()[i];
      p->value.data()[i] = saved + h;
      const double fp = f(false);
      p->value.data()[i] = saved - h;
      const double fm = f(false);
      p->value.data()[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericError("finite_difference_check: objective is non-finite");
      const double central = (fp - fm) / (2.0 * h);
      const double analytic = p->grad.data()[i];
      const double rel =
          std::abs(analytic - central) / std::max(1.0, std::abs(central));
      if (rel > max_rel) max_rel = rel;
    }
  }
  return max_rel;
}

// --- registry ---------------------------------------------------------------

namespace {

Matrix rand_mat(Rng& rng, Eigen::Index r, Eigen::Index c) {
  return rng.gaussian_matrix(r, c);
}

std::vector<OpSpec> make_registry() {
  std::vector<OpSpec> ops;
  auto dims = [](Rng& rng) {
    return static_cast<Eigen::Index>(2 + rng.below(5));  // 2..6
  };

  ops.push_back({"matmul", 2,
                 [dims](Rng& rng) {
                   auto p = dims(rng), q = dims(rng), r = dims(rng);
                   return std::vector<Matrix>{rand_mat(rng, p, q),
                                              rand_mat(rng, q, r)};
                 },
                 [](Tape&, std::vector<Var>& v) { return matmul(v[0], v[1]); }});
  ops.push_back({"add", 2,
                 [dims](Rng& rng) {
                   auto r = dims(rng), c = dims(rng);
                   return std::vector<Matrix>{rand_mat(rng, r, c),
                                              rand_mat(rng, r, c)};
                 },
                 [](Tape&, std::vector<Var>& v) { return add(v[0], v[1]); }});
  ops.push_back({"add_rowvec", 2,
                 [dims](Rng& rng) {
                   auto r = dims(rng), c = dims(rng);
                   return std::vector<Matrix>{rand_mat(rng, r, c),
                                              rand_mat(rng, 1, c)};
                 },
                 [](Tape&, std::vector<Var>& v) {
                   return add_rowvec(v[0], v[1]);
                 }});
  ops.push_back({"mul", 2,
                 [dims](Rng& rng) {
                   auto r = dims(rng), c = dims(rng);
                   return std::vector<Matrix>{rand_mat(rng, r, c),
                                              rand_mat(rng, r, c)};
                 },
                 [](Tape&, std::vector<Var>& v) { return mul(v[0], v[1]); }});
  ops.push_back({"affine", 1,
                 [dims](Rng& rng) {
                   return std::vector<Matrix>{rand_mat(rng, dims(rng), dims(rng))};
                 },
                 [](Tape&, std::vector<Var>& v) {
                   return affine(v[0], 1.7, -0.3);
                 }});
  ops.push_back({"transpose", 1,
                 [dims](Rng& rng) {
                   return std::vector<Matrix>{rand_mat(rng, dims(rng), dims(rng))};
                 },
                 [](Tape&, std::vector<Var>& v) { return transpose(v[0]); }});
  ops.push_back({"softmax_rows", 1,
                 [dims](Rng& rng) {
                   return std::vector<Matrix>{rand_mat(rng, dims(rng), dims(rng))};
                 },
                 [](Tape&, std::vector<Var>& v) { return softmax_rows(v[0]); }});
  ops.push_back({"tanh", 1,
                 [dims](Rng& rng) {
                   return std::vector<Matrix>{rand_mat(rng, dims(rng), dims(rng))};
                 },
                 [](Tape&, std::vector<Var>& v) { return tanh_op(v[0]); }});
  ops.push_back({"sigmoid", 1,
                 [dims](Rng& rng) {
                   return std::vector<Matrix>{rand_mat(rng, dims(rng), dims(rng))};
                 },
                 [](Tape&, std::vector<Var>& v) { return sigmoid(v[0]); }});
  ops.push_back({"gelu", 1,
                 [dims](Rng& rng) {
                   return std::vector<Matrix>{rand_mat(rng, dims(rng), dims(rng))};
                 },
                 [](Tape&, std::vector<Var>& v) { return gelu(v[0]); }});
  ops.push_back({"exp", 1,
                 [dims](Rng& rng) {
                   return std::vector<Matrix>{rand_mat(rng, dims(rng), dims(rng))};
                 },
                 [](Tape&, std::vector<Var>& v) { return exp_op(v[0]); }});
  ops.push_back({"log_clamped", 1,
                 [dims](Rng& rng) {
                   Matrix m = rand_mat(rng, dims(rng), dims(rng));
                   m = (m.array().abs() + 0.5).matrix();  // keep clear of the clamp
                   return std::vector<Matrix>{m};
                 },
                 [](Tape&, std::vector<Var>& v) { return log_clamped(v[0]); }});
  ops.push_back({"softplus", 1,
                 [dims](Rng& rng) {
                   return std::vector<Matrix>{rand_mat(rng, dims(rng), dims(rng))};
                 },
                 [](Tape&, std::vector<Var>& v) { return softplus(v[0]); }});
  ops.push_back({"sum", 1,
                 [dims](Rng& rng) {
                   return std::vector<Matrix>{rand_mat(rng, dims(rng), dims(rng))};
                 },
                 [](Tape&, std::vector<Var>& v) { return sum(v[0]); }});
  ops.push_back({"colmean", 1,
                 [dims](Rng& rng) {
                   return std::vector<Matrix>{rand_mat(rng, dims(rng), dims(rng))};
                 },
                 [](Tape&, std::vector<Var>& v) { return colmean(v[0]); }});
  ops.push_back({"stats4", 1,
                 [dims](Rng& rng) {
                   return std::vector<Matrix>{rand_mat(rng, dims(rng), dims(rng))};
                 },
                 [](Tape&, std::vector<Var>& v) { return stats4(v[0]); }});
  ops.push_back({"cosine_sim", 2,
                 [dims](Rng& rng) {
                   auto d = dims(rng);
                   return std::vector<Matrix>{rand_mat(rng, dims(rng), d),
                                              rand_mat(rng, dims(rng), d)};
                 },
                 [](Tape&, std::vector<Var>& v) {
                   return cosine_sim(v[0], v[1]);
                 }});
  ops.push_back({"cosine_sim_self", 1,
                 [dims](Rng& rng) {
                   return std::vector<Matrix>{rand_mat(rng, dims(rng), dims(rng))};
                 },
                 [](Tape&, std::vector<Var>& v) {
                   return cosine_sim(v[0], v[0]);
                 }});
  ops.push_back({"concat_cols", 2,
                 [dims](Rng& rng) {
                   auto r = dims(rng);
                   return std::vector<Matrix>{rand_mat(rng, r, dims(rng)),
                                              rand_mat(rng, r, dims(rng))};
                 },
                 [](Tape&, std::vector<Var>& v) {
                   return concat_cols(v[0], v[1]);
                 }});
  ops.push_back({"row_scale", 2,
                 [dims](Rng& rng) {
                   auto r = dims(rng);
                   return std::vector<Matrix>{rand_mat(rng, r, dims(rng)),
                                              rand_mat(rng, r, 1)};
                 },
                 [](Tape&, std::vector<Var>& v) {
                   return row_scale(v[0], v[1]);
                 }});
  ops.push_back({"scalar_mul", 2,
                 [dims](Rng& rng) {
                   return std::vector<Matrix>{rand_mat(rng, dims(rng), dims(rng)),
                                              rand_mat(rng, 1, 1)};
                 },
                 [](Tape&, std::vector<Var>& v) {
                   return scalar_mul(v[0], v[1]);
                 }});
  ops.push_back({"pick", 1,
                 [dims](Rng& rng) {
                   return std::vector<Matrix>{rand_mat(rng, dims(rng), dims(rng))};
                 },
                 [](Tape& t, std::vector<Var>& v) {
                   const auto& m = t.value(v[0]);
                   std::vector<int> idx(m.rows());
                   for (Eigen::Index r = 0; r < m.rows(); ++r)
                     idx[r] = static_cast<int>(r % m.cols());
                   return pick(v[0], idx);
                 }});
  ops.push_back({"row", 1,
                 [dims](Rng& rng) {
                   return std::vector<Matrix>{rand_mat(rng, dims(rng), dims(rng))};
                 },
                 [](Tape& t, std::vector<Var>& v) {
                   const auto rows = t.value(v[0]).rows();
                   return row(v[0], static_cast<int>(rows - 1));
                 }});
  return ops;
}

}  // namespace

const std::vector<OpSpec>& differentiable_op_registry() {
  static const std::vector<OpSpec> registry = make_registry();
  return registry;
}

}  // namespace ruleminer
