#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ruleminer/data_io.hpp"
#include "ruleminer/rules.hpp"
#include "ruleminer/transformer.hpp"

namespace ruleminer {

struct ModelConfig {
  int d_in = 0;  // model input width, fixed by the dataset
  int d_model = 32;
  int d_ff = 64;
  int layers = 2;
  int d_k = 16;
  int m = 16;   // codebook size
  int d_r = 16; // rule-state width
  double temperature = 0.1;
  SimKind sim = SimKind::kCosine;
  double ts_base = 10000.0;
};

// Encoder stack + rule recurrence + codebook + RUL head, with everything
// needed to run on new data (normalization stats, band edges) carried along.
struct Model {
  ModelConfig cfg;
  AblationFlags flags;
  Tensor W_in, b_in;  // d_in x d_model, 1 x d_model
  std::vector<EncoderLayer> layers;
  RuleRecurrenceParams rule;
  Tensor codebook;        // m x d_r
  Tensor W_rul, b_rul;    // d_model x 1, 1x1
  NormStats norm;
  BandEdges bands;
  WindowingConfig windowing;
  MiningParams mining;
  std::string fingerprint = "unconfigured";

  static Model init(const ModelConfig& cfg, const AblationFlags& flags,
                    uint64_t seed);

  // Stable name -> tensor mapping (defines optimizer state and checkpoint
  // layout order).
  std::vector<std::pair<std::string, Tensor*>> named_params();

  // Full forward pass for one window, recorded on `tape`. Targets for the
  // likelihood are the stop-gradient argmax codes; passing `fixed_targets`
  // scores the likelihood against previously frozen self-labels instead
  // (self_targets still reports the fresh argmax codes).
  struct Forward {
    Var h;                        // T x d_model encoder output
    Var step_weights;             // T x T column-stochastic
    std::vector<Var> states;      // rule states, 1 x d_r each
    std::vector<Var> probs;       // assignment rows, 1 x m each
    std::vector<int> self_targets;  // fresh argmax codes
    Var nll;                      // 1x1, sum over steps
    Var rul_pred;                 // 1x1
  };
  Forward forward_window(Tape& tape, const WindowedSample& w,
                         const std::vector<int>* fixed_targets = nullptr);

  // Encoder only (input projection + layer stack).
  Var encode_graph(Tape& tape, const Matrix& features,
                   const std::vector<double>& timestamps);
  Matrix encode(const Matrix& features, const std::vector<double>& timestamps);

  // Normalized RUL target in [0, 1].
  double rul_target(double rul) const;
};

// Checkpoint: one JSON document with config, flags, named parameter arrays,
// normalization stats and band edges. Loading validates shapes and that
// every layer's decay rate is nonnegative.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

// Seeds the codebook from the rule states the freshly initialized encoder
// produces on (a sample of) the training windows.
void seed_codebook(Model& model, const std::vector<WindowedSample>& windows,
                   uint64_t seed, size_t max_windows = 256);

}  // namespace ruleminer
