#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "ruleminer/rules.hpp"
#include "ruleminer/window.hpp"

namespace ruleminer {

// --- CMAPSS ------------------------------------------------------------------

// One line of the 26-column CMAPSS text format.
struct EngineRecord {
  int unit_id = 0;
  int cycle = 0;
  std::array<double, 3> op_settings{};
  std::array<double, 21> sensors{};
};

using UnitSeries = std::vector<EngineRecord>;

// Parses a whitespace-separated 26-column file into per-unit, cycle-ordered
// series. Cycle numbering must be consecutive starting at 1 per unit.
std::vector<UnitSeries> parse_cmapss(const std::string& path);
void write_cmapss(const std::string& path,
                  const std::vector<UnitSeries>& units);

struct WindowingConfig {
  int T = 30;
  int stride = 5;
  double rul_cap = 125.0;
  int bands = 4;
};

// Sliding windows over each unit; rul = last unit cycle - window end cycle.
std::vector<WindowedSample> make_windows(const std::vector<UnitSeries>& units,
                                         const WindowingConfig& cfg);

// --- Feature extraction ------------------------------------------------------

// Derived per-step features over expanding prefixes of the window (first
// three steps are zero; a prefix needs at least 4 samples). For each sensor:
// [ls trend slope, max |z| so far, dominant-bin energy fraction].
Matrix extract_features(const Matrix& sensor_rows);

// Fills w.features with [raw sensors | derived] for every window.
void build_features(std::vector<WindowedSample>& windows);

struct NormStats {
  std::vector<double> mean, stddev;
  std::vector<bool> zero_variance;
};

// Per-feature z-score statistics fitted on a training split.
NormStats fit_feature_norm(const std::vector<WindowedSample>& train);
void apply_feature_norm(std::vector<WindowedSample>& windows,
                        const NormStats& stats);

// --- Synthetic planted-rule generator ---------------------------------------

// Ground-truth rule injected by the generator. The generator guarantees the
// consequent band holds whenever the antecedent was injected (up to the
// configured label noise).
struct PlantedRule {
  std::vector<Predicate> antecedent;
  int consequent = 0;
  double injection_rate = 0.0;
};

// Engineered coverage overlap between two rules (Jaccard of their window
// sets); both rules must share a consequent band.
struct OverlapSpec {
  int rule_a = 0;
  int rule_b = 1;
  double jaccard = 0.0;
};

struct SynthConfig {
  uint64_t seed = 7;
  int rules = 5;
  int windows = 2000;
  int sensors = 12;
  int T = 30;
  int bands = 4;
  double rul_cap = 125.0;
  std::vector<double> injection_rates;  // empty -> built-in ladder
  std::vector<OverlapSpec> overlaps;
  double signal_strength = 1.0;  // scales planted pattern magnitudes
  double label_noise = 0.0;      // fraction of injected windows relabeled
  MiningParams mining;           // thresholds the predicates are checked with
};

struct SynthDataset {
  std::vector<WindowedSample> windows;  // sensors/timestamps/rul filled
  std::vector<PlantedRule> planted;
  BandEdges bands;
};

// Deterministic per seed. Noise windows are rejection-sampled so that no
// window satisfies an antecedent it was not injected with; planted
// antecedents are re-derived from the generated data with the same dominant-
// predicate procedure the miner uses, so sidecar and miner agree on
// thresholds and bin indices.
SynthDataset synth_planted_rules(const SynthConfig& cfg);

// --- Dataset persistence -----------------------------------------------------

// Layout: <dir>/windows.jsonl (one sample per line) and
// <dir>/planted_rules.json (rules + band edges + generator fingerprint).
void save_dataset(const SynthDataset& ds, const std::string& dir);

struct LoadedDataset {
  std::vector<WindowedSample> windows;
  std::optional<std::vector<PlantedRule>> planted;
  std::optional<BandEdges> bands;  // declared by synth datasets
};

// Accepts either a synth dataset directory or a CMAPSS text file.
LoadedDataset load_dataset(const std::string& path, const WindowingConfig& cfg);

}  // namespace ruleminer
