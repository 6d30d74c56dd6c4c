#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ruleminer/config.hpp"
#include "ruleminer/model.hpp"
#include "ruleminer/training.hpp"

namespace ruleminer {

struct MetricsReport {
  double rule_mining_accuracy = 0.0;  // [0, 1]
  double rule_coverage = 0.0;         // [0, 1]
  double wall_time_seconds = 0.0;     // mining phase only
  long rule_count = 0;
  std::string config_fingerprint;
  bool zero_rules = false;
  std::optional<double> planted_recovery;  // synth datasets only
};

struct AblationRow {
  std::string variant;  // full | no_time_dependency | no_dynamic_weights |
                        // no_self_attention
  MetricsReport metrics;
  bool failed = false;
};

// --- Mining ------------------------------------------------------------------

// Everything a mining pass over a window corpus produces: the discrete rules
// (sorted by descending confidence then id), which rules fire on each
// window, per-step code assignments, and the rule-correlation matrix.
struct MiningArtifacts {
  std::vector<DiscretizedRule> rules;
  std::vector<std::set<int>> fired_per_window;
  std::vector<std::vector<int>> code_sequences;
  Matrix correlation;  // rules.size() x rules.size()
  FeatureStats stats;
  double wall_time_seconds = 0.0;
};

// Assigns every window to its final-step code, turns each code's membership
// into a discrete rule, and computes rule statistics over the corpus.
MiningArtifacts mine_rules(Model& model,
                           const std::vector<WindowedSample>& windows,
                           const MiningParams& mp);

// Mines (timed) and scores: coverage is the fraction of windows matched by
// at least one rule; accuracy is, over covered windows, the fraction where
// the highest-confidence firing rule predicts the window's RUL band.
MetricsReport evaluate(Model& model, const std::vector<WindowedSample>& windows,
                       const MiningParams& mp,
                       const std::string& config_fingerprint,
                       const std::vector<PlantedRule>* planted = nullptr,
                       MiningArtifacts* artifacts_out = nullptr);

// Fraction of planted rules whose antecedent predicate set is emitted
// exactly.
double planted_recovery_rate(const std::vector<PlantedRule>& planted,
                             const std::vector<DiscretizedRule>& mined);

// --- Pipeline glue -----------------------------------------------------------

struct PreparedData {
  std::vector<WindowedSample> windows;  // features built and normalized
  FeatureStats sensor_stats;
  std::optional<std::vector<PlantedRule>> planted;
  BandEdges bands;
  NormStats norm;
};

// Synthesizes or loads the configured dataset, builds features, fits
// normalization and band edges.
PreparedData prepare_training_data(const RunConfig& cfg);

// Prepares externally loaded windows for a trained model (applies the
// checkpoint's normalization).
void prepare_eval_windows(const Model& model,
                          std::vector<WindowedSample>& windows);

struct TrainRun {
  Model model;
  std::vector<StepLog> history;
  PreparedData data;
};

TrainRun run_training(const RunConfig& cfg);

// --- Ablation grid -----------------------------------------------------------

extern const char* const kAblationVariants[4];
AblationFlags flags_for_variant(const std::string& variant);

// Trains and evaluates the four Table-style variants for every seed on the
// same prepared data; reports per-variant medians. A failed cell marks its
// row failed but the grid continues. `max_threads` caps the worker fan-out.
std::vector<AblationRow> run_ablations(const RunConfig& base,
                                       const std::vector<uint64_t>& seeds,
                                       int max_threads = 1);

void write_ablation_csv(const std::vector<AblationRow>& rows,
                        const std::string& path);

// --- Apriori baseline --------------------------------------------------------

// Item id space: predicate atoms from windows_to_transactions, plus one item
// per RUL band at kBandItemBase + band.
constexpr int kBandItemBase = 1'000'000;

// Frequent itemsets (lexicographically sorted) with support counts;
// threshold: count >= ceil(min_support * n).
std::vector<std::pair<std::vector<int>, long>> apriori_frequent_itemsets(
    const std::vector<std::vector<int>>& transactions, double min_support);

struct AprioriRule {
  std::vector<int> antecedent;  // atom ids
  int consequent = 0;           // band index
  double support = 0.0;
  double confidence = 0.0;
};

// Level-wise miner over atom+band transactions; emits X -> band rules
// meeting both thresholds.
std::vector<AprioriRule> apriori_baseline(
    const std::vector<std::vector<int>>& atom_transactions,
    const std::vector<int>& bands, double min_support, double min_confidence);

// Discretizes windows into predicate atoms (trend/anomaly/level per sensor).
std::vector<std::vector<int>> windows_to_transactions(
    const std::vector<WindowedSample>& windows, const FeatureStats& stats,
    const MiningParams& mp);

// --- Artifact files ----------------------------------------------------------

void save_rules_json(const std::vector<DiscretizedRule>& rules,
                     const std::string& path);
std::vector<DiscretizedRule> load_rules_json(const std::string& path);
void save_metrics_json(const MetricsReport& report, const std::string& path);

// Writes rule_timeline.csv, support_distribution.csv, rule_correlation.csv.
void export_figures(const MiningArtifacts& artifacts,
                    const std::string& out_dir);

}  // namespace ruleminer
