#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "ruleminer/attention.hpp"
#include "ruleminer/random.hpp"

using namespace ruleminer;

namespace {

Matrix mat2(std::initializer_list<std::initializer_list<double>> rows) {
  const auto r = static_cast<Eigen::Index>(rows.size());
  const auto c = static_cast<Eigen::Index>(rows.begin()->size());
  Matrix m(r, c);
  Eigen::Index i = 0;
  for (const auto& row : rows) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

// 10-line evaluation of the attention formula, independent of the tape path.
Matrix attention_weights_oracle(const Matrix& q, const Matrix& k) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matrix scores = scale * (q * k.transpose());
  Matrix w(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::ArrayXd e =
        (scores.row(i).transpose().array() - scores.row(i).maxCoeff()).exp();
    w.row(i) = (e / e.sum()).matrix().transpose();
  }
  return w;
}

}  // namespace

TEST_CASE("single-row attention returns V") {
  const Matrix q = mat2({{0.3, -0.2}});
  const Matrix v = mat2({{5.0, 7.0, -1.0}});
  const AttentionResult r = scaled_dot_attention(q, q, v);
  CHECK(r.weights(0, 0) == doctest::Approx(1.0));
  CHECK((r.output - v).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("identical keys give uniform rows") {
  Rng rng(1);
  const Matrix q = rng.gaussian_matrix(4, 3);
  Matrix k(4, 3);
  for (int i = 0; i < 4; ++i) k.row(i) = mat2({{1.0, 2.0, 3.0}}).row(0);
  const Matrix v = rng.gaussian_matrix(4, 2);
  const AttentionResult r = scaled_dot_attention(q, k, v);
  CHECK((r.weights.array() - 0.25).abs().maxCoeff() < 1e-12);
}

TEST_CASE("identity Q=K frozen weights") {
  // Q = K = I2, d_k = 2: row 0 scores (1/sqrt 2, 0), row 1 (0, 1/sqrt 2)
  const Matrix i2 = Matrix::Identity(2, 2);
  const AttentionResult r = scaled_dot_attention(i2, i2, i2);
  const double s = 1.0 / std::sqrt(2.0);
  const double w00 = std::exp(s) / (std::exp(s) + 1.0);
  CHECK(r.weights(0, 0) == doctest::Approx(w00).epsilon(1e-12));
  CHECK(r.weights(0, 1) == doctest::Approx(1.0 - w00).epsilon(1e-12));
  CHECK(r.weights(1, 1) == doctest::Approx(w00).epsilon(1e-12));
}

TEST_CASE("attention weights match the direct-formula oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto T = static_cast<Eigen::Index>(1 + rng.below(6));
    const auto dk = static_cast<Eigen::Index>(1 + rng.below(6));
    const Matrix q = rng.gaussian_matrix(T, dk);
    const Matrix k = rng.gaussian_matrix(T, dk);
    const Matrix v = rng.gaussian_matrix(T, 3);
    const AttentionResult r = scaled_dot_attention(q, k, v);
    const Matrix w = attention_weights_oracle(q, k);
    CHECK((r.weights - w).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((r.output - w * v).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("attention shape errors") {
  Rng rng(3);
  const Matrix q = rng.gaussian_matrix(3, 2);
  const Matrix k = rng.gaussian_matrix(4, 2);
  const Matrix v = rng.gaussian_matrix(3, 2);
  CHECK_THROWS_AS(scaled_dot_attention(q, k, v), ShapeError);
  CHECK_THROWS_AS(scaled_dot_attention(q, rng.gaussian_matrix(3, 5), v),
                  ShapeError);
}

TEST_CASE("timestamp encoding stays in [-1,1] and is deterministic") {
  TimestampEncoding enc{16, 10000.0, 1.0};
  for (double t : {0.0, 1.0, 17.0, 250.0, 1e6}) {
    const Matrix e1 = enc.encode(t);
    const Matrix e2 = enc.encode(t);
    CHECK((e1 - e2).cwiseAbs().maxCoeff() == 0.0);
    CHECK(e1.cwiseAbs().maxCoeff() <= 1.0);
  }
  CHECK_THROWS_AS(enc.encode(std::nan("")), InputError);
}

TEST_CASE("null encoding reduces timestamp attention to plain attention") {
  Rng rng(4);
  const TimestampEncoding null_enc = TimestampEncoding::null_encoding(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix q = rng.gaussian_matrix(5, 4);
    const Matrix k = rng.gaussian_matrix(5, 4);
    const Matrix v = rng.gaussian_matrix(5, 3);
    const std::vector<double> ts = {1, 2, 3, 4, 5};
    const AttentionResult a = scaled_dot_attention(q, k, v);
    const AttentionResult b = timestamp_attention(q, k, v, ts, null_enc);
    // bitwise equality, no tolerance
    for (Eigen::Index i = 0; i < a.output.size(); ++i)
      CHECK(a.output.data()[i] == b.output.data()[i]);
    for (Eigen::Index i = 0; i < a.weights.size(); ++i)
      CHECK(a.weights.data()[i] == b.weights.data()[i]);
  }
}

TEST_CASE("timestamp attention: T=1 returns V; E-only weights frozen") {
  TimestampEncoding enc{2, 10000.0, 1.0};
  const Matrix q = Matrix::Zero(1, 2);
  const Matrix v = mat2({{3.0, -4.0}});
  const AttentionResult r = timestamp_attention(q, q, v, {42.0}, enc);
  CHECK((r.output - v).cwiseAbs().maxCoeff() < 1e-15);

  // Q = K = 0, E1 = (1,0), E2 = (0,1): weights = softmax_rows(E E^T / sqrt 2)
  Tape tape;
  Var zq = tape.constant(Matrix::Zero(2, 2));
  Var zv = tape.constant(Matrix::Identity(2, 2));
  Var qe = add(zq, tape.constant(mat2({{1.0, 0.0}, {0.0, 1.0}})));
  AttentionVars av = scaled_dot_attention_graph(qe, qe, zv);
  const double s = 1.0 / std::sqrt(2.0);
  const double w = std::exp(s) / (std::exp(s) + 1.0);
  CHECK(tape.value(av.weights)(0, 0) == doctest::Approx(w).epsilon(1e-12));
  CHECK(tape.value(av.weights)(1, 0) ==
        doctest::Approx(1.0 - w).epsilon(1e-12));
}

TEST_CASE("timestamp count mismatch raises shape error") {
  Rng rng(5);
  const Matrix q = rng.gaussian_matrix(3, 2);
  TimestampEncoding enc{2, 10000.0, 1.0};
  CHECK_THROWS_AS(timestamp_attention(q, q, q, {1.0, 2.0}, enc), ShapeError);
}

TEST_CASE("temporal step weights: identical rows, T=1, brute force") {
  Matrix same(3, 2);
  for (int i = 0; i < 3; ++i) same.row(i) = mat2({{1.0, 2.0}}).row(0);
  const Matrix a = temporal_step_weights(same);
  CHECK((a.array() - 1.0 / 3).abs().maxCoeff() < 1e-12);

  const Matrix one = temporal_step_weights(mat2({{0.5, 0.5}}));
  CHECK(one(0, 0) == doctest::Approx(1.0));

  // X = [[1,0],[0,1],[1,0]]: brute force over all (i,t) pairs
  const Matrix x = mat2({{1, 0}, {0, 1}, {1, 0}});
  const Matrix a2 = temporal_step_weights(x);
  Matrix expected(3, 3);
  for (int t = 0; t < 3; ++t) {
    double denom = 0.0;
    std::vector<double> num(3);
    for (int i = 0; i < 3; ++i) {
      const double sim = cosine_similarity(x.row(i), x.row(t));
      num[static_cast<size_t>(i)] = std::exp(sim);
      denom += num[static_cast<size_t>(i)];
    }
    for (int i = 0; i < 3; ++i)
      expected(i, t) = num[static_cast<size_t>(i)] / denom;
  }
  CHECK((a2 - expected).cwiseAbs().maxCoeff() < 1e-12);
  // column 0 equals softmax([1, 0, 1])
  const double e1 = std::exp(1.0);
  const double z = 2 * e1 + 1.0;
  CHECK(a2(0, 0) == doctest::Approx(e1 / z).epsilon(1e-12));
  CHECK(a2(1, 0) == doctest::Approx(1.0 / z).epsilon(1e-12));
}

TEST_CASE("stochasticity: rows of Eq-1 weights and columns of step weights") {
  Rng rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto T = static_cast<Eigen::Index>(1 + rng.below(6));
    const Matrix q = rng.gaussian_matrix(T, 3);
    const Matrix k = rng.gaussian_matrix(T, 3);
    const Matrix v = rng.gaussian_matrix(T, 2);
    const AttentionResult r = scaled_dot_attention(q, k, v);
    for (Eigen::Index i = 0; i < T; ++i)
      CHECK(std::abs(r.weights.row(i).sum() - 1.0) < 1e-9);

    const Matrix a = temporal_step_weights(rng.gaussian_matrix(T, 3));
    for (Eigen::Index t = 0; t < T; ++t)
      CHECK(std::abs(a.col(t).sum() - 1.0) < 1e-9);
  }
}

TEST_CASE("permuting steps permutes step weights consistently") {
  Rng rng(7);
  for (int trial = 0; trial < 25; ++trial) {
    const Eigen::Index T = 5;
    const Matrix x = rng.gaussian_matrix(T, 4);
    std::vector<Eigen::Index> p(static_cast<size_t>(T));
    std::iota(p.begin(), p.end(), 0);
    for (size_t i = p.size() - 1; i > 0; --i)
      std::swap(p[i], p[rng.below(i + 1)]);
    Matrix px(T, 4);
    for (Eigen::Index i = 0; i < T; ++i)
      px.row(i) = x.row(p[static_cast<size_t>(i)]);
    const Matrix a = temporal_step_weights(x);
    const Matrix pa = temporal_step_weights(px);
    for (Eigen::Index i = 0; i < T; ++i)
      for (Eigen::Index t = 0; t < T; ++t)
        CHECK(std::abs(pa(i, t) - a(p[static_cast<size_t>(i)],
                                    p[static_cast<size_t>(t)])) < 1e-12);
  }
}

TEST_CASE("attention projection gradients pass finite differences") {
  Rng rng(8);
  const Eigen::Index T = 4, dm = 5, dk = 3;
  AttentionParams params = AttentionParams::init(static_cast<int>(dm),
                                                 static_cast<int>(dk), rng);
  const Matrix h = rng.gaussian_matrix(T, dm);
  const std::vector<double> ts = {3, 4, 5, 6};
  const TimestampEncoding enc{static_cast<int>(dk), 10000.0, 1.0};

  auto f = [&](bool with_grad) {
    Tape tape;
    Var hv = tape.constant(h);
    Var q = matmul(hv, tape.leaf(params.W_q));
    Var k = matmul(hv, tape.leaf(params.W_k));
    Var v = matmul(hv, tape.leaf(params.W_v));
    AttentionVars att = timestamp_attention_graph(q, k, v, ts, enc);
    Var out = sum(matmul(att.output, tape.leaf(params.W_o)));
    const double val = tape.value(out)(0, 0);
    if (with_grad) tape.backward(out);
    return val;
  };
  const double err = finite_difference_check(
      {&params.W_q, &params.W_k, &params.W_v, &params.W_o}, f, 1e-5);
  CHECK(err < 1e-5);
}
