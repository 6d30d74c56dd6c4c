#pragma once

#include <vector>

#include "ruleminer/common.hpp"

namespace ruleminer {

// One model input unit: a fixed-length window of consecutive cycles from a
// single engine unit. `sensors` holds the raw per-cycle sensor readings that
// rule predicates are evaluated against; `features` is the model input
// (raw sensors plus derived per-step features), filled in by feature
// extraction and normalization.
struct WindowedSample {
  int unit_id = 0;
  Matrix sensors;                  // T x s (raw)
  Matrix features;                 // T x d_in (raw + derived, normalized)
  std::vector<double> timestamps;  // strictly increasing cycle indices
  double rul = 0.0;                // cycles remaining at window end
};

// Per-sensor corpus statistics used for predicate thresholds and level bins.
struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> stddev;           // >= 0; zero-variance flagged below
  std::vector<bool> zero_variance;

  size_t size() const { return mean.size(); }
};

FeatureStats compute_sensor_stats(const std::vector<WindowedSample>& windows);

// RUL band edges: bands[b] covers [edges[b], edges[b+1]) with the last band
// closed above.
struct BandEdges {
  std::vector<double> edges;  // size B+1, strictly increasing

  int bands() const { return static_cast<int>(edges.size()) - 1; }
  int band_of(double rul) const;
};

// Equal-frequency band edges over the given RUL values.
BandEdges equal_frequency_bands(std::vector<double> ruls, int bands);

}  // namespace ruleminer
