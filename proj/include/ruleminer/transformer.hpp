#pragma once

#include <vector>

#include "ruleminer/attention.hpp"

namespace ruleminer {

// Maps summary statistics [mean, std, min, max] of the layer input to a gate
// value alpha = 2*sigmoid(w . stats + b) in (0, 2); alpha is exactly 1 at
// logit 0, so zero-initialized gates are neutral.
struct GateParams {
  Tensor w;  // 4x1
  Tensor b;  // 1x1

  static GateParams init();
};

struct EncoderLayer {
  AttentionParams attn;
  Tensor W1, b1;      // d_model x d_ff, 1 x d_ff
  Tensor W2, b2;      // d_ff x d_model, 1 x d_model
  Tensor decay_rho;   // 1x1 unconstrained; lambda = softplus(rho) >= 0
  GateParams gate;

  static EncoderLayer init(int d_model, int d_ff, int d_k, Rng& rng);
  double decay_rate() const;  // lambda
};

// Table-2 ablation switches. All true reproduces the full model path.
struct AblationFlags {
  bool use_time_dependency = true;
  bool use_dynamic_weights = true;
  bool use_self_attention = true;
};

// --- Graph builders ----------------------------------------------------------

// GELU two-layer feedforward, with the sublayer output of row t multiplied by
// exp(-lambda * age_t) before the caller's residual add. Ages are in cycles
// (age_t = t_last - t_i) and must be nonnegative. `decay_enabled=false`
// forces lambda to 0 (plain FFN).
Var time_decay_ffn_graph(Var h, const std::vector<double>& ages,
                         EncoderLayer& layer, bool decay_enabled);

// alpha_l = 2*sigmoid(w . [mean,std,min,max](H) + b) as a 1x1 node.
Var dynamic_weight_graph(Var h, GateParams& gate);

// One encoder layer: H' = H + alpha * Attn(H); H'' = H' + decay .* FFN(H').
// Flag semantics: no time dependency -> Eq-1 attention and lambda forced 0;;
// no dynamic weights -> alpha fixed at 1; no self-attention -> the attention
// sublayer contributes nothing to the residual.
Var layer_forward_graph(Var h, const std::vector<double>& timestamps,
                        const AblationFlags& flags, EncoderLayer& layer);

// --- Value-level entry points ------------------------------------------------

Matrix time_decay_ffn(const Matrix& h, const std::vector<double>& ages,
                      EncoderLayer& layer);
double dynamic_weight(const Matrix& h, GateParams& gate);
Matrix layer_forward(const Matrix& h, const std::vector<double>& timestamps,
                     const AblationFlags& flags, EncoderLayer& layer);

// Ages from raw timestamps: age_t = t_last - t_i.
std::vector<double> ages_from_timestamps(const std::vector<double>& ts);

}  // namespace ruleminer
