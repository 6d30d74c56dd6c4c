#include "ruleminer/transformer.hpp"

#include <cmath>

#include "ruleminer/random.hpp"

namespace ruleminer {

GateParams GateParams::init() {
  GateParams g;
  g.w = Tensor(Matrix::Zero(4, 1), true);
  g.b = Tensor(Matrix::Zero(1, 1), true);
  return g;
}

EncoderLayer EncoderLayer::init(int d_model, int d_ff, int d_k, Rng& rng) {
  EncoderLayer l;
  l.attn = AttentionParams::init(d_model, d_k, rng);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(d_model));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(d_ff));
  l.W1 = Tensor(rng.gaussian_matrix(d_model, d_ff, s1), true);
  l.b1 = Tensor(Matrix::Zero(1, d_ff), true);
  l.W2 = Tensor(rng.gaussian_matrix(d_ff, d_model, s2), true);
  l.b2 = Tensor(Matrix::Zero(1, d_model), true);
  // softplus(-4) ~ 0.018: decay starts near zero but trainable
  l.decay_rho = Tensor(Matrix::Constant(1, 1, -4.0), true);
  l.gate = GateParams::init();
  return l;
}

double EncoderLayer::decay_rate() const {
  const double rho = decay_rho.value(0, 0);
  if (rho > 30.0) return rho;
  return std::log1p(std::exp(rho));
}

Var time_decay_ffn_graph(Var h, const std::vector<double>& ages,
                         EncoderLayer& layer, bool decay_enabled) {
  Tape& t = *h.tape;
  const Matrix& H = t.value(h);
  if (static_cast<Eigen::Index>(ages.size()) != H.rows())
    throw ShapeError("time_decay_ffn: " + std::to_string(ages.size()) +
                     " ages for " + std::to_string(H.rows()) + " rows");
  Matrix age_col(H.rows(), 1);
  for (size_t i = 0; i < ages.size(); ++i) {
    if (!(ages[i] >= 0.0))
      throw InputError("time_decay_ffn: negative or non-finite age at step " +
                       std::to_string(i));
    age_col(static_cast<Eigen::Index>(i), 0) = ages[i];
  }

  Var hidden = gelu(add_rowvec(matmul(h, t.leaf(layer.W1)), t.leaf(layer.b1)));
  Var ffn = add_rowvec(matmul(hidden, t.leaf(layer.W2)), t.leaf(layer.b2));
  if (!decay_enabled) return ffn;

  Var lambda = softplus(t.leaf(layer.decay_rho));             // 1x1
  Var exponent = affine(matmul(t.constant(age_col), lambda), -1.0, 0.0);
  return row_scale(ffn, exp_op(exponent));
}

Var dynamic_weight_graph(Var h, GateParams& gate) {
  Tape& t = *h.tape;
  Var logit = add(matmul(stats4(h), t.leaf(gate.w)), t.leaf(gate.b));
  return affine(sigmoid(logit), 2.0, 0.0);
}

Var layer_forward_graph(Var h, const std::vector<double>& timestamps,
                        const AblationFlags& flags, EncoderLayer& layer) {
  Tape& t = *h.tape;
  const Matrix& H = t.value(h);
  if (H.cols() != layer.attn.d_model)
    throw ShapeError("layer_forward: input width " + shape_str(H) +
                     " does not match d_model " +
                     std::to_string(layer.attn.d_model));
  if (static_cast<Eigen::Index>(timestamps.size()) != H.rows())
    throw ShapeError("layer_forward: timestamp count mismatch");

  Var h1 = h;
  if (flags.use_self_attention) {
    Var q = matmul(h, t.leaf(layer.attn.W_q));
    Var k = matmul(h, t.leaf(layer.attn.W_k));
    Var v = matmul(h, t.leaf(layer.attn.W_v));
    AttentionVars attn =
        flags.use_time_dependency
            ? timestamp_attention_graph(
                  q, k, v, timestamps,
                  TimestampEncoding{layer.attn.d_k, 10000.0, 1.0})
            : scaled_dot_attention_graph(q, k, v);
    Var attn_out = matmul(attn.output, t.leaf(layer.attn.W_o));
    if (flags.use_dynamic_weights)
      attn_out = scalar_mul(attn_out, dynamic_weight_graph(h, layer.gate));
    h1 = add(h, attn_out);
  }

  Var ffn = time_decay_ffn_graph(h1, ages_from_timestamps(timestamps), layer,
                                 flags.use_time_dependency);
  return add(h1, ffn);
}

Matrix time_decay_ffn(const Matrix& h, const std::vector<double>& ages,
                      EncoderLayer& layer) {
  Tape tape;
  return tape.value(
      time_decay_ffn_graph(tape.constant(h), ages, layer, true));
}

double dynamic_weight(const Matrix& h, GateParams& gate) {
  Tape tape;
  return tape.value(dynamic_weight_graph(tape.constant(h), gate))(0, 0);
}

Matrix layer_forward(const Matrix& h, const std::vector<double>& timestamps,
                     const AblationFlags& flags, EncoderLayer& layer) {
  Tape tape;
  return tape.value(
      layer_forward_graph(tape.constant(h), timestamps, flags, layer));
}

std::vector<double> ages_from_timestamps(const std::vector<double>& ts) {
  std::vector<double> ages(ts.size(), 0.0);
  if (ts.empty()) return ages;
  const double last = ts.back();
  for (size_t i = 0; i < ts.size(); ++i) ages[i] = last - ts[i];
  return ages;
}

}  // namespace ruleminer
