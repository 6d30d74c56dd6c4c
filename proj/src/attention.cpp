#include "ruleminer/attention.hpp"

#include <cmath>

#include "ruleminer/random.hpp"

namespace ruleminer {

AttentionParams AttentionParams::init(int d_model, int d_k, Rng& rng) {
  AttentionParams p;
  p.d_model = d_model;
  p.d_k = d_k;
  const double s = 1.0 / std::sqrt(static_cast<double>(d_model));
  p.W_q = Tensor(rng.gaussian_matrix(d_model, d_k, s), true);
  p.W_k = Tensor(rng.gaussian_matrix(d_model, d_k, s), true);
  p.W_v = Tensor(rng.gaussian_matrix(d_model, d_k, s), true);
  p.W_o = Tensor(rng.gaussian_matrix(d_k, d_model,
                                     1.0 / std::sqrt(static_cast<double>(d_k))),
                 true);
  return p;
}

Matrix TimestampEncoding::encode(double t) const {
  if (!std::isfinite(t)) throw InputError("timestamp must be finite");
  Matrix e(1, d_k);
  for (int j = 0; j < d_k; ++j) {
    const int pair = j / 2;
    const double freq =
        std::pow(base, -2.0 * static_cast<double>(pair) / d_k);
    const double angle = t * freq;
    e(0, j) = amplitude * ((j % 2 == 0) ? std::sin(angle) : std::cos(angle));
  }
  return e;
}

Matrix TimestampEncoding::encode_all(const std::vector<double>& ts) const {
  Matrix e(static_cast<Eigen::Index>(ts.size()), d_k);
  for (size_t i = 0; i < ts.size(); ++i) e.row(i) = encode(ts[i]).row(0);
  return e;
}

namespace {

void check_attention_shapes(const Matrix& q, const Matrix& k,
                            const Matrix& v) {
  if (q.cols() != k.cols())
    throw ShapeError("attention: Q/K width mismatch: " + shape_str(q) +
                     " vs " + shape_str(k));
  if (q.rows() != k.rows() || k.rows() != v.rows())
    throw ShapeError("attention: row counts disagree: Q " + shape_str(q) +
                     ", K " + shape_str(k) + ", V " + shape_str(v));
  if (q.cols() == 0) throw ShapeError("attention: d_k must be positive");
}

}  // namespace

AttentionVars scaled_dot_attention_graph(Var q, Var k, Var v) {
  Tape& t = *q.tape;
  check_attention_shapes(t.value(q), t.value(k), t.value(v));
  const double inv_sqrt_dk =
      1.0 / std::sqrt(static_cast<double>(t.value(q).cols()));
  Var scores = affine(matmul(q, transpose(k)), inv_sqrt_dk, 0.0);
  Var weights = softmax_rows(scores);
  return {matmul(weights, v), weights};
}

AttentionVars timestamp_attention_graph(Var q, Var k, Var v,
                                        const std::vector<double>& timestamps,
                                        const TimestampEncoding& enc) {
  Tape& t = *q.tape;
  if (static_cast<Eigen::Index>(timestamps.size()) != t.value(q).rows())
    throw ShapeError("timestamp_attention: " +
                     std::to_string(timestamps.size()) + " timestamps for " +
                     std::to_string(t.value(q).rows()) + " rows");
  Var e = t.constant(enc.encode_all(timestamps));
  return scaled_dot_attention_graph(add(q, e), add(k, e), v);
}

Var temporal_step_weights_graph(Var x, SimKind sim) {
  Var s = (sim == SimKind::kCosine) ? cosine_sim(x, x)
                                    : matmul(x, transpose(x));
  // Eq-style normalization runs over the first index for fixed t, so the
  // result is column-stochastic.
  return transpose(softmax_rows(transpose(s)));
}

AttentionResult scaled_dot_attention(const Matrix& q, const Matrix& k,
                                     const Matrix& v) {
  Tape tape;
  AttentionVars r = scaled_dot_attention_graph(
      tape.constant(q), tape.constant(k), tape.constant(v));
  return {tape.value(r.output), tape.value(r.weights)};
}

AttentionResult timestamp_attention(const Matrix& q, const Matrix& k,
                                    const Matrix& v,
                                    const std::vector<double>& timestamps,
                                    const TimestampEncoding& enc) {
  Tape tape;
  AttentionVars r = timestamp_attention_graph(
      tape.constant(q), tape.constant(k), tape.constant(v), timestamps, enc);
  return {tape.value(r.output), tape.value(r.weights)};
}

Matrix temporal_step_weights(const Matrix& x, SimKind sim) {
  if (x.rows() < 1) throw ShapeError("temporal_step_weights: empty input");
  Tape tape;
  return tape.value(temporal_step_weights_graph(tape.constant(x), sim));
}

}  // namespace ruleminer
