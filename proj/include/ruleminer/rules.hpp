#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ruleminer/attention.hpp"
#include "ruleminer/window.hpp"

namespace ruleminer {

// --- Discrete rule surface ---------------------------------------------------

enum class PredicateKind { kTrendUp, kTrendDown, kAnomalyHigh, kLevelInBin };

const char* predicate_kind_name(PredicateKind k);
PredicateKind predicate_kind_from_name(const std::string& name);

// One antecedent atom: a condition on a single sensor over `window` cycles.
struct Predicate {
  int feature = 0;
  PredicateKind kind = PredicateKind::kTrendUp;
  int bin = -1;    // level bin index, used by kLevelInBin only
  int window = 0;  // window length w in cycles

  friend auto operator<=>(const Predicate&, const Predicate&) = default;
  friend bool operator==(const Predicate&, const Predicate&) = default;
};

// Human-readable antecedent -> consequent pattern with its statistics.
struct DiscretizedRule {
  int id = 0;
  std::vector<Predicate> antecedent;  // non-empty
  int consequent = 0;                 // RUL band index
  double support = 0.0;
  double confidence = 0.0;
};

// Thresholds used by predicate evaluation and discretization.
struct MiningParams {
  double anomaly_z = 3.0;          // window max |z| threshold for anomaly-high
  double trend_slope_factor = 0.01;  // |slope| > factor * sensor std per cycle
  int level_bins = 4;
  int top_k = 3;                   // antecedent size cap
  double mass_keep_ratio = 0.5;    // keep features with mass >= ratio * top
  double min_support = 0.005;      // drop rules below this support
};

// Least-squares slope of a sensor column over the window.
double ls_slope(const Eigen::Ref<const Eigen::VectorXd>& y);
// Max |z-score| against the window's own mean/std (0 for constant signals).
double window_max_abs_z(const Eigen::Ref<const Eigen::VectorXd>& y);
// Equal-width level bins over [mean - 2*std, mean + 2*std], clamped.
int level_bin(double value, double mean, double stddev, int bins);

bool predicate_holds(const Predicate& p, const WindowedSample& w,
                     const FeatureStats& stats, const MiningParams& mp);
bool antecedent_holds(const std::vector<Predicate>& antecedent,
                      const WindowedSample& w, const FeatureStats& stats,
                      const MiningParams& mp);

// The dominant predicate of a sensor over a set of member windows: trend if
// the mean fitted slope clears the threshold, else anomaly if the mean
// max-|z| clears it, else the level bin of the mean level.
Predicate dominant_predicate(int feature,
                             const std::vector<const WindowedSample*>& members,
                             const FeatureStats& stats,
                             const MiningParams& mp);

// --- Latent rule states (recurrence, transitions, code assignment) ----------

// Gated recurrence parameters realizing the rule generation function:
//   z = sigmoid(W_z [x; r] + b_z), cand = tanh(W_r [x; r] + b_r),
//   r_t = (1 - z) .* r_prev + z .* cand.
struct RuleRecurrenceParams {
  Tensor W_z, b_z;  // (d_ctx + d_r) x d_r, 1 x d_r
  Tensor W_r, b_r;

  static RuleRecurrenceParams init(int d_ctx, int d_r, Rng& rng);
};

Var generate_rule_state_graph(Var x_ctx, Var r_prev,
                              RuleRecurrenceParams& params);
Matrix generate_rule_state(const Matrix& x_ctx, const Matrix& r_prev,
                           RuleRecurrenceParams& params);

// Column-stochastic transition matrix over one sequence's rule states:
// M(i,t) = exp(sim(r_i, r_t)) / sum_j exp(sim(r_j, r_t)).
Matrix step_transition_matrix(const Matrix& states,
                              SimKind sim = SimKind::kCosine);

struct RuleAssignment {
  Matrix probabilities;  // 1 x m simplex
  int argmax = 0;        // ties break toward the lowest code id
};

RuleAssignment assign_code(const Matrix& state, const Matrix& codebook,
                           double temperature, SimKind sim = SimKind::kCosine);
// Tape version; returns the 1 x m probability row.
Var assign_code_graph(Var state, Var codebook, double temperature,
                      SimKind sim = SimKind::kCosine);

// k-means++-style codebook seeding over observed rule states.
Matrix kmeanspp_init(const std::vector<Matrix>& states, int m, int d_r,
                     Rng& rng);

// Row-stochastic empirical code-transition matrix with Laplace smoothing of
// one count per cell. Input: per-sequence code id series.
Matrix code_transition_counts(const std::vector<std::vector<int>>& sequences,
                              int m);

// --- Rule statistics ---------------------------------------------------------

double support(const DiscretizedRule& rule,
               const std::vector<WindowedSample>& windows,
               const FeatureStats& stats, const MiningParams& mp);
double confidence(const DiscretizedRule& rule,
                  const std::vector<WindowedSample>& windows,
                  const BandEdges& bands, const FeatureStats& stats,
                  const MiningParams& mp);

// Coverage set: indices of windows whose features satisfy the antecedent.
std::vector<int> coverage_set(const DiscretizedRule& rule,
                              const std::vector<WindowedSample>& windows,
                              const FeatureStats& stats,
                              const MiningParams& mp);

// Jaccard similarity of coverage sets; diagonal is exactly 1, zero-support
// rules contribute 0 off-diagonal.
Matrix rule_correlation(const std::vector<DiscretizedRule>& rules,
                        const std::vector<WindowedSample>& windows,
                        const FeatureStats& stats, const MiningParams& mp);

// Distinct rules discovered up to each step.
std::vector<long> cumulative_rule_count(
    const std::vector<std::set<int>>& per_step_rules);

// Turns one latent code's member windows into a discrete rule, or nothing if
// the membership is empty or no feature stands out. `feature_mass` has one
// row per window (attention-weighted per-sensor activation mass).
std::optional<DiscretizedRule> discretize_rule(
    int code_id, const std::vector<int>& member_indices,
    const std::vector<WindowedSample>& windows, const Matrix& feature_mass,
    const FeatureStats& stats, const BandEdges& bands, const MiningParams& mp);

}  // namespace ruleminer
