#pragma once

#include <vector>

#include "ruleminer/tensor.hpp"

namespace ruleminer {

// Similarity measure used for step weights, rule-state transitions and code
// assignment. Cosine is the default; dot product is selectable for
// experiments.
enum class SimKind { kCosine, kDot };

// Single-head projection parameters.
struct AttentionParams {
  int d_model = 0;
  int d_k = 0;
  Tensor W_q, W_k, W_v;  // d_model x d_k
  Tensor W_o;            // d_k x d_model

  static AttentionParams init(int d_model, int d_k, Rng& rng);
};

// Sinusoidal encoding of a raw scalar timestamp (cycle index) into a d_k
// vector: alternating sin/cos with geometric frequencies over `base`. Every
// component lies in [-1, 1] and the map is deterministic. The encoding is
// fixed (non-learned); it is added to Q and K rows before attention.
struct TimestampEncoding {
  int d_k = 0;
  double base = 10000.0;
  double amplitude = 1.0;  // 0 gives the null encoding (Eq-1 reduction)

  Matrix encode(double t) const;                          // 1 x d_k
  Matrix encode_all(const std::vector<double>& ts) const; // T x d_k

  static TimestampEncoding null_encoding(int d_k) { return {d_k, 10000.0, 0.0}; }
};

struct AttentionResult {
  Matrix output;   // T x d_v
  Matrix weights;  // T x T, row-stochastic
};

struct AttentionVars {
  Var output;
  Var weights;
};

// --- Graph builders (record on the inputs' tape) ----------------------------

AttentionVars scaled_dot_attention_graph(Var q, Var k, Var v);
AttentionVars timestamp_attention_graph(Var q, Var k, Var v,
                                        const std::vector<double>& timestamps,
                                        const TimestampEncoding& enc);
// Column-stochastic step-weight matrix A with A(i,t) =
// exp(sim(x_i, x_t)) / sum_j exp(sim(x_j, x_t)).
Var temporal_step_weights_graph(Var x, SimKind sim = SimKind::kCosine);

// --- Value-level entry points (run a scratch tape internally) ---------------

AttentionResult scaled_dot_attention(const Matrix& q, const Matrix& k,
                                     const Matrix& v);
AttentionResult timestamp_attention(const Matrix& q, const Matrix& k,
                                    const Matrix& v,
                                    const std::vector<double>& timestamps,
                                    const TimestampEncoding& enc);
Matrix temporal_step_weights(const Matrix& x, SimKind sim = SimKind::kCosine);

}  // namespace ruleminer
