#pragma once

#include <string>
#include <vector>

#include "ruleminer/model.hpp"

namespace ruleminer {

struct LossWeights {
  double nll = 1.0;
  double rul = 1.0;
  double ent = 0.1;
};

struct LossTerms {
  double nll = 0.0;              // -L(theta), >= 0
  double rul_mse = 0.0;          // >= 0
  double code_entropy_reg = 0.0; // negative entropy of the marginal code use
  LossWeights weights;

  double total() const {
    return weights.nll * nll + weights.rul * rul_mse +
           weights.ent * code_entropy_reg;
  }
};

// Per-step negative log-likelihood sum: -sum_t log p(target_t), with
// probabilities clamped at 1e-12 before the log.
double rule_log_likelihood(const std::vector<RuleAssignment>& assignments,
                           const std::vector<int>& targets);

// Tracks per-feature running statistics of the historical input distribution
// against the current batch; drift feeds the adaptive learning rate.
struct DriftMonitor {
  double decay = 0.99;
  bool initialized = false;
  std::vector<double> hist_mean, hist_var;
  std::vector<double> cur_mean, cur_var;
  double drift = 0.0;

  // Computes drift against history, then folds the batch into history.
  double update(const std::vector<double>& batch_mean,
                const std::vector<double>& batch_var);
};

// Mean over features of the symmetrized Gaussian KL divergence between the
// historical and current statistics (variances floored at 1e-8). Zero iff
// the statistics coincide.
double distribution_divergence(const DriftMonitor& monitor);

// eta = eta_base / (1 + kappa * drift); monotone nonincreasing in drift.
double adaptive_learning_rate(double eta_base, double drift,
                              double kappa = 1.0);

// Adaptive-moment optimizer over the model's named parameters.
struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;
  std::vector<Matrix> m, v;

  static AdamState init(std::vector<std::pair<std::string, Tensor*>>& params);
  void apply(std::vector<std::pair<std::string, Tensor*>>& params, double lr);
};

struct TrainConfig {
  long steps = 300;
  int batch = 16;
  double lr = 1e-3;
  LossWeights weights;
  uint64_t seed = 7;
  double repulsion_beta = 0.01;  // codebook pairwise-similarity penalty
  double drift_kappa = 1.0;
  double drift_decay = 0.99;
  // dead-code revival: every `revive_every` steps, codes assigned fewer than
  // revive_min_share of sampled windows are re-seeded to the states farthest
  // from their nearest code
  long revive_every = 25;
  double revive_min_share = 0.01;
  // self-label refresh period in steps; 0 = once per epoch
  long label_refresh = 0;
};

struct StepLog {
  long step = 0;
  double nll = 0.0, rul_mse = 0.0, entropy_reg = 0.0, total = 0.0;
  double drift = 0.0, lr = 0.0;
};

// Self-labels frozen per era. A window's targets are computed at its first
// visit in an era and scored against until the next codebook refresh bumps
// the era; refreshing labels in lockstep with the codebook keeps the
// self-labeling loop from chasing its own updates.
struct LabelCache {
  std::vector<std::vector<int>> labels;
  std::vector<long> era;
  long current_era = 0;

  explicit LabelCache(size_t n) : labels(n), era(n, -1) {}
};

// One optimization step over a batch of windows. Throws NumericError naming
// the batch index if the loss goes non-finite.
StepLog train_step(Model& model, const std::vector<WindowedSample>& windows,
                   const std::vector<size_t>& batch_indices, AdamState& opt,
                   DriftMonitor& monitor, const TrainConfig& cfg,
                   long step_index, LabelCache* cache = nullptr);

// Re-seeds codes that fell out of use onto far-from-codebook states; returns
// the number of revived codes. Deterministic for a fixed model and corpus.
int revive_dead_codes(Model& model, const std::vector<WindowedSample>& windows,
                      double min_share, size_t max_windows = 256);

// Full run: deterministic batch order per seed, codebook seeding included.
std::vector<StepLog> train(Model& model,
                           const std::vector<WindowedSample>& windows,
                           const TrainConfig& cfg);

// CSV columns: step,nll,rul_mse,entropy_reg,total,drift,lr.
void write_training_log(const std::string& path,
                        const std::vector<StepLog>& history);

}  // namespace ruleminer
