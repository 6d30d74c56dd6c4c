#include "ruleminer/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "ruleminer/random.hpp"
#include "ruleminer/serialize.hpp"

namespace fs = std::filesystem;

namespace ruleminer {

// --- window.hpp implementations ----------------------------------------------

FeatureStats compute_sensor_stats(const std::vector<WindowedSample>& windows) {
  if (windows.empty()) throw InputError("no windows to compute stats over");
  const auto s = windows.front().sensors.cols();
  FeatureStats st;
  st.mean.assign(static_cast<size_t>(s), 0.0);
  st.stddev.assign(static_cast<size_t>(s), 0.0);
  st.zero_variance.assign(static_cast<size_t>(s), false);

  long n = 0;
  std::vector<double> sum(static_cast<size_t>(s), 0.0);
  std::vector<double> sumsq(static_cast<size_t>(s), 0.0);
  for (const auto& w : windows) {
    for (Eigen::Index t = 0; t < w.sensors.rows(); ++t)
      for (Eigen::Index f = 0; f < s; ++f) {
        const double v = w.sensors(t, f);
        sum[static_cast<size_t>(f)] += v;
        sumsq[static_cast<size_t>(f)] += v * v;
      }
    n += w.sensors.rows();
  }
  for (Eigen::Index f = 0; f < s; ++f) {
    const auto fi = static_cast<size_t>(f);
    st.mean[fi] = sum[fi] / static_cast<double>(n);
    const double var =
        std::max(0.0, sumsq[fi] / static_cast<double>(n) -
                          st.mean[fi] * st.mean[fi]);
    st.stddev[fi] = std::sqrt(var);
    st.zero_variance[fi] = st.stddev[fi] < 1e-12;
  }
  return st;
}

int BandEdges::band_of(double rul) const {
  const int b = bands();
  for (int i = 1; i < b; ++i)
    if (rul < edges[static_cast<size_t>(i)]) return i - 1;
  return b - 1;
}

BandEdges equal_frequency_bands(std::vector<double> ruls, int bands) {
  if (ruls.empty()) throw InputError("no RUL values for banding");
  if (bands < 2) throw ConfigError("need at least 2 RUL bands");
  std::sort(ruls.begin(), ruls.end());
  BandEdges be;
  be.edges.resize(static_cast<size_t>(bands) + 1);
  be.edges.front() = ruls.front();
  be.edges.back() = ruls.back() + 1e-9;
  for (int b = 1; b < bands; ++b) {
    const auto q = static_cast<size_t>(
        static_cast<double>(ruls.size()) * b / bands);
    be.edges[static_cast<size_t>(b)] = ruls[std::min(q, ruls.size() - 1)];
  }
  for (size_t i = 1; i < be.edges.size(); ++i)
    be.edges[i] = std::max(be.edges[i], be.edges[i - 1] + 1e-9);
  return be;
}

// --- CMAPSS ------------------------------------------------------------------

std::vector<UnitSeries> parse_cmapss(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);

  std::map<int, UnitSeries> by_unit;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::istringstream ss(line);
    std::vector<double> vals;
    std::string tok;
    while (ss >> tok) {
      try {
        size_t used = 0;
        vals.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) +
                         ": non-numeric field '" + tok + "'");
      }
    }
    if (vals.size() != 26)
      throw ParseError("line " + std::to_string(line_no) + ": expected 26 columns, got " +
                       std::to_string(vals.size()));
    EngineRecord rec;
    rec.unit_id = static_cast<int>(vals[0]);
    rec.cycle = static_cast<int>(vals[1]);
    for (int i = 0; i < 3; ++i) rec.op_settings[static_cast<size_t>(i)] = vals[static_cast<size_t>(2 + i)];
    for (int i = 0; i < 21; ++i) rec.sensors[static_cast<size_t>(i)] = vals[static_cast<size_t>(5 + i)];
    by_unit[rec.unit_id].push_back(rec);
  }

  std::vector<UnitSeries> units;
  for (auto& [uid, series] : by_unit) {
    for (size_t i = 0; i < series.size(); ++i) {
      if (series[i].cycle != static_cast<int>(i) + 1)
        throw InputError("unit " + std::to_string(uid) +
                         ": cycles not consecutive from 1 (saw cycle " +
                         std::to_string(series[i].cycle) + " at position " +
                         std::to_string(i + 1) + ")");
    }
    units.push_back(std::move(series));
  }
  return units;
}

void write_cmapss(const std::string& path,
                  const std::vector<UnitSeries>& units) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out.precision(17);
  for (const auto& series : units)
    for (const auto& r : series) {
      out << r.unit_id << ' ' << r.cycle;
      for (double v : r.op_settings) out << ' ' << v;
      for (double v : r.sensors) out << ' ' << v;
      out << '\n';
    }
}

std::vector<WindowedSample> make_windows(const std::vector<UnitSeries>& units,
                                         const WindowingConfig& cfg) {
  if (cfg.T < 4) throw ConfigError("window length must be >= 4");
  if (cfg.stride < 1) throw ConfigError("stride must be >= 1");
  std::vector<WindowedSample> out;
  for (const auto& series : units) {
    if (static_cast<int>(series.size()) < cfg.T) continue;
    const int last_cycle = series.back().cycle;
    for (size_t start = 0; start + static_cast<size_t>(cfg.T) <= series.size();
         start += static_cast<size_t>(cfg.stride)) {
      WindowedSample w;
      w.unit_id = series.front().unit_id;
      w.sensors.resize(cfg.T, 21);
      w.timestamps.resize(static_cast<size_t>(cfg.T));
      for (int t = 0; t < cfg.T; ++t) {
        const EngineRecord& r = series[start + static_cast<size_t>(t)];
        for (int f = 0; f < 21; ++f) w.sensors(t, f) = r.sensors[static_cast<size_t>(f)];
        w.timestamps[static_cast<size_t>(t)] = r.cycle;
      }
      w.rul = last_cycle - series[start + static_cast<size_t>(cfg.T) - 1].cycle;
      out.push_back(std::move(w));
    }
  }
  return out;
}

// --- Feature extraction ------------------------------------------------------

namespace {

// Fraction of detrended energy in the dominant nonzero DFT bin.
double periodicity_fraction(const Eigen::Ref<const Eigen::VectorXd>& y) {
  const Eigen::Index n = y.size();
  if (n < 4) return 0.0;
  // remove the least-squares line
  const double slope = ls_slope(y);
  const double tbar = 0.5 * static_cast<double>(n - 1);
  const double ybar = y.mean();
  Eigen::VectorXd d(n);
  for (Eigen::Index t = 0; t < n; ++t)
    d(t) = y(t) - (ybar + slope * (static_cast<double>(t) - tbar));

  const double two_pi = 6.283185307179586476925286766559;
  double total = 0.0, best = 0.0;
  for (Eigen::Index k = 1; k <= n / 2; ++k) {
    double re = 0.0, im = 0.0;
    for (Eigen::Index t = 0; t < n; ++t) {
      const double ang = two_pi * static_cast<double>(k) *
                         static_cast<double>(t) / static_cast<double>(n);
      re += d(t) * std::cos(ang);
      im -= d(t) * std::sin(ang);
    }
    const double e = re * re + im * im;
    total += e;
    best = std::max(best, e);
  }
  if (total < 1e-18) return 0.0;
  return best / total;
}

}  // namespace

Matrix extract_features(const Matrix& sensor_rows) {
  const Eigen::Index T = sensor_rows.rows();
  const Eigen::Index s = sensor_rows.cols();
  if (T < 4) throw InputError("extract_features: window length must be >= 4");
  Matrix out = Matrix::Zero(T, 3 * s);
  for (Eigen::Index f = 0; f < s; ++f) {
    for (Eigen::Index t = 3; t < T; ++t) {
      const auto prefix = sensor_rows.col(f).head(t + 1);
      out(t, 3 * f + 0) = ls_slope(prefix);
      out(t, 3 * f + 1) = window_max_abs_z(prefix);
      out(t, 3 * f + 2) = periodicity_fraction(prefix);
    }
  }
  return out;
}

void build_features(std::vector<WindowedSample>& windows) {
  for (auto& w : windows) {
    const Matrix derived = extract_features(w.sensors);
    w.features.resize(w.sensors.rows(), w.sensors.cols() + derived.cols());
    w.features << w.sensors, derived;
  }
}

NormStats fit_feature_norm(const std::vector<WindowedSample>& train) {
  if (train.empty()) throw InputError("no training windows for normalization");
  const auto d = train.front().features.cols();
  if (d == 0) throw InputError("features not built before normalization");
  NormStats st;
  st.mean.assign(static_cast<size_t>(d), 0.0);
  st.stddev.assign(static_cast<size_t>(d), 0.0);
  st.zero_variance.assign(static_cast<size_t>(d), false);

  long n = 0;
  std::vector<double> sum(static_cast<size_t>(d), 0.0), sumsq(static_cast<size_t>(d), 0.0);
  for (const auto& w : train) {
    for (Eigen::Index t = 0; t < w.features.rows(); ++t)
      for (Eigen::Index f = 0; f < d; ++f) {
        const double v = w.features(t, f);
        sum[static_cast<size_t>(f)] += v;
        sumsq[static_cast<size_t>(f)] += v * v;
      }
    n += w.features.rows();
  }
  for (Eigen::Index f = 0; f < d; ++f) {
    const auto fi = static_cast<size_t>(f);
    st.mean[fi] = sum[fi] / static_cast<double>(n);
    const double var = std::max(
        0.0, sumsq[fi] / static_cast<double>(n) - st.mean[fi] * st.mean[fi]);
    st.stddev[fi] = std::sqrt(var);
    st.zero_variance[fi] = st.stddev[fi] < 1e-12;
  }
  return st;
}

void apply_feature_norm(std::vector<WindowedSample>& windows,
                        const NormStats& stats) {
  for (auto& w : windows) {
    if (static_cast<size_t>(w.features.cols()) != stats.mean.size())
      throw ShapeError("normalization stats built for " +
                       std::to_string(stats.mean.size()) + " features, got " +
                       std::to_string(w.features.cols()));
    for (Eigen::Index f = 0; f < w.features.cols(); ++f) {
      const auto fi = static_cast<size_t>(f);
      if (stats.zero_variance[fi]) {
        w.features.col(f).setZero();
      } else {
        w.features.col(f) =
            (w.features.col(f).array() - stats.mean[fi]) / stats.stddev[fi];
      }
    }
  }
}

// --- Synthetic planted-rule generator ---------------------------------------

namespace {

enum class PatternKind { kRamp, kNegRamp, kSpikes, kLevelShift };

struct PatternPlan {
  int feature = 0;
  PatternKind kind = PatternKind::kRamp;
};

struct RulePlan {
  std::vector<PatternPlan> patterns;
  int consequent = 0;
  double rate = 0.0;
};

void apply_pattern(Matrix& sensors, const PatternPlan& p, double strength) {
  const Eigen::Index T = sensors.rows();
  const double mid = 0.5 * static_cast<double>(T - 1);
  switch (p.kind) {
    case PatternKind::kRamp:
    case PatternKind::kNegRamp: {
      const double slope =
          (p.kind == PatternKind::kRamp ? 0.15 : -0.15) * strength;
      for (Eigen::Index t = 0; t < T; ++t)
        sensors(t, p.feature) += slope * (static_cast<double>(t) - mid);
      break;
    }
    case PatternKind::kSpikes: {
      // two same-sign spikes at slope-neutral symmetric positions
      const Eigen::Index p1 = T / 3;
      const Eigen::Index p2 = T - 1 - p1;
      sensors(p1, p.feature) += 9.0 * strength;
      sensors(p2, p.feature) += 9.0 * strength;
      break;
    }
    case PatternKind::kLevelShift:
      sensors.col(p.feature).array() += 3.0 * strength;
      break;
  }
}

double rul_in_band(const BandEdges& be, int band, Rng& rng) {
  const double lo = be.edges[static_cast<size_t>(band)];
  const double hi = be.edges[static_cast<size_t>(band) + 1];
  const double margin = 0.05 * (hi - lo);
  return rng.uniform(lo + margin, hi - margin);
}

}  // namespace

SynthDataset synth_planted_rules(const SynthConfig& cfg) {
  if (cfg.rules < 1) throw ConfigError("synth: need at least one rule");
  if (cfg.windows < 100) throw ConfigError("synth: need at least 100 windows");
  if (cfg.T < 8) throw ConfigError("synth: window length must be >= 8");
  if (cfg.bands < 2) throw ConfigError("synth: need at least 2 RUL bands");
  if (!cfg.injection_rates.empty() &&
      static_cast<int>(cfg.injection_rates.size()) != cfg.rules)
    throw ConfigError("synth: injection_rates must have one entry per rule");

  Rng rng(cfg.seed, "synth");

  // band edges: equal width over [0, rul_cap]
  BandEdges be;
  be.edges.resize(static_cast<size_t>(cfg.bands) + 1);
  for (int b = 0; b <= cfg.bands; ++b)
    be.edges[static_cast<size_t>(b)] = cfg.rul_cap * b / cfg.bands;

  // plan rules: alternating antecedent sizes 1/2, pattern kinds cycled
  const PatternKind kind_cycle[4] = {PatternKind::kRamp, PatternKind::kSpikes,
                                     PatternKind::kNegRamp,
                                     PatternKind::kLevelShift};
  std::vector<RulePlan> plans(static_cast<size_t>(cfg.rules));
  int next_feature = 0;
  int kind_idx = 0;
  for (int r = 0; r < cfg.rules; ++r) {
    RulePlan& plan = plans[static_cast<size_t>(r)];
    const int n_pred = 1 + (r % 2);
    for (int p = 0; p < n_pred; ++p) {
      if (next_feature >= cfg.sensors)
        throw ConfigError("synth: not enough sensors for " +
                          std::to_string(cfg.rules) + " rules (need " +
                          std::to_string(next_feature + 1) + ")");
      plan.patterns.push_back({next_feature++, kind_cycle[kind_idx++ % 4]});
    }
    plan.consequent = r % cfg.bands;
    plan.rate = cfg.injection_rates.empty()
                    ? std::max(0.04, 0.25 * std::pow(0.75, r))
                    : cfg.injection_rates[static_cast<size_t>(r)];
  }
  for (const auto& ov : cfg.overlaps) {
    if (ov.rule_a < 0 || ov.rule_b < 0 || ov.rule_a >= cfg.rules ||
        ov.rule_b >= cfg.rules || ov.rule_a == ov.rule_b)
      throw ConfigError("synth: overlap pair out of range");
    if (ov.jaccard <= 0.0 || ov.jaccard > 1.0)
      throw ConfigError("synth: overlap jaccard must be in (0, 1]");
    // co-fired windows carry both consequents, so the bands must agree
    plans[static_cast<size_t>(ov.rule_b)].consequent =
        plans[static_cast<size_t>(ov.rule_a)].consequent;
  }

  // allocate window index sets
  const int n = cfg.windows;
  std::vector<int> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = n - 1; i > 0; --i)
    std::swap(perm[static_cast<size_t>(i)],
              perm[static_cast<size_t>(rng.below(static_cast<uint64_t>(i + 1)))]);

  std::vector<long> want(static_cast<size_t>(cfg.rules));
  for (int r = 0; r < cfg.rules; ++r)
    want[static_cast<size_t>(r)] =
        std::lround(plans[static_cast<size_t>(r)].rate * n);

  std::vector<std::vector<int>> window_rules(static_cast<size_t>(n));
  size_t cursor = 0;
  auto take = [&](long count, std::initializer_list<int> rules_here) {
    if (cursor + static_cast<size_t>(count) > perm.size())
      throw ConfigError(
          "synth: injection rates sum past 1 with disjointness requested");
    for (long i = 0; i < count; ++i) {
      for (int r : rules_here)
        window_rules[static_cast<size_t>(perm[cursor])].push_back(r);
      ++cursor;
    }
  };
  for (const auto& ov : cfg.overlaps) {
    const auto a = static_cast<size_t>(ov.rule_a);
    const auto b = static_cast<size_t>(ov.rule_b);
    const long joint = std::lround(
        ov.jaccard * static_cast<double>(want[a] + want[b]) / (1.0 + ov.jaccard));
    if (joint > std::min(want[a], want[b]))
      throw ConfigError("synth: overlap jaccard incompatible with rates");
    take(joint, {ov.rule_a, ov.rule_b});
    want[a] -= joint;
    want[b] -= joint;
  }
  for (int r = 0; r < cfg.rules; ++r) take(want[static_cast<size_t>(r)], {r});

  // generate raw windows
  std::vector<double> baseline(static_cast<size_t>(cfg.sensors));
  for (auto& b : baseline) b = rng.uniform(-1.0, 1.0);

  SynthDataset ds;
  ds.bands = be;
  ds.windows.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    WindowedSample& w = ds.windows[static_cast<size_t>(i)];
    w.unit_id = i + 1;
    const double start = 1.0 + static_cast<double>(rng.below(300));
    w.timestamps.resize(static_cast<size_t>(cfg.T));
    for (int t = 0; t < cfg.T; ++t) w.timestamps[static_cast<size_t>(t)] = start + t;
    w.sensors.resize(cfg.T, cfg.sensors);
    for (int t = 0; t < cfg.T; ++t)
      for (int f = 0; f < cfg.sensors; ++f)
        w.sensors(t, f) = baseline[static_cast<size_t>(f)] + rng.gaussian();
    for (int r : window_rules[static_cast<size_t>(i)])
      for (const auto& pat : plans[static_cast<size_t>(r)].patterns)
        apply_pattern(w.sensors, pat, cfg.signal_strength);

    int band;
    if (window_rules[static_cast<size_t>(i)].empty()) {
      band = static_cast<int>(rng.below(static_cast<uint64_t>(cfg.bands)));
    } else {
      band = plans[static_cast<size_t>(window_rules[static_cast<size_t>(i)][0])]
                 .consequent;
      if (cfg.label_noise > 0.0 && rng.uniform() < cfg.label_noise)
        band = static_cast<int>(rng.below(static_cast<uint64_t>(cfg.bands)));
    }
    w.rul = rul_in_band(be, band, rng);
  }

  // derive canonical antecedents and rejection-sample until no window
  // satisfies a rule it was not injected with (and every member satisfies
  // its own)
  std::vector<std::vector<int>> members(static_cast<size_t>(cfg.rules));
  for (int i = 0; i < n; ++i)
    for (int r : window_rules[static_cast<size_t>(i)])
      members[static_cast<size_t>(r)].push_back(i);

  auto redraw_channel = [&](WindowedSample& w, int f) {
    for (Eigen::Index t = 0; t < w.sensors.rows(); ++t)
      w.sensors(t, f) = baseline[static_cast<size_t>(f)] + rng.gaussian();
  };

  const int max_iters = 80;
  int iter = 0;
  for (; iter < max_iters; ++iter) {
    const FeatureStats stats = compute_sensor_stats(ds.windows);
    ds.planted.assign(static_cast<size_t>(cfg.rules), PlantedRule{});
    for (int r = 0; r < cfg.rules; ++r) {
      PlantedRule& pr = ds.planted[static_cast<size_t>(r)];
      pr.consequent = plans[static_cast<size_t>(r)].consequent;
      pr.injection_rate = static_cast<double>(members[static_cast<size_t>(r)].size()) /
                          static_cast<double>(n);
      pr.antecedent.clear();
      std::vector<const WindowedSample*> mem_ptrs;
      for (int i : members[static_cast<size_t>(r)])
        mem_ptrs.push_back(&ds.windows[static_cast<size_t>(i)]);
      for (const auto& pat : plans[static_cast<size_t>(r)].patterns)
        pr.antecedent.push_back(
            dominant_predicate(pat.feature, mem_ptrs, stats, cfg.mining));
      std::sort(pr.antecedent.begin(), pr.antecedent.end(),
                [](const Predicate& a, const Predicate& b) {
                  return a.feature < b.feature;
                });
    }

    long violations = 0;
    for (int i = 0; i < n; ++i) {
      WindowedSample& w = ds.windows[static_cast<size_t>(i)];
      const auto& mine = window_rules[static_cast<size_t>(i)];
      for (int r = 0; r < cfg.rules; ++r) {
        const bool is_member =
            std::find(mine.begin(), mine.end(), r) != mine.end();
        const bool fires = antecedent_holds(
            ds.planted[static_cast<size_t>(r)].antecedent, w, stats, cfg.mining);
        if (fires == is_member) continue;
        ++violations;
        if (is_member) {
          // member stopped satisfying its own antecedent: redraw its noise
          // and reapply the pattern
          for (const auto& pat : plans[static_cast<size_t>(r)].patterns) {
            redraw_channel(w, pat.feature);
            apply_pattern(w.sensors, pat, cfg.signal_strength);
          }
        } else {
          for (const auto& pat : plans[static_cast<size_t>(r)].patterns)
            redraw_channel(w, pat.feature);
        }
      }
    }
    if (violations == 0) break;
  }
  if (iter == max_iters)
    throw NumericError("synth: rejection sampling did not converge");

  return ds;
}

// --- Dataset persistence -----------------------------------------------------

void save_dataset(const SynthDataset& ds, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  const fs::path base(dir);

  std::ofstream wf(base / "windows.jsonl");
  if (!wf) throw IoError("cannot write " + (base / "windows.jsonl").string());
  for (const auto& w : ds.windows) {
    Json j{{"unit", w.unit_id},
           {"rul", w.rul},
           {"timestamps", w.timestamps},
           {"sensors", matrix_to_json(w.sensors)}};
    wf << j.dump() << '\n';
  }

  Json rules = Json::array();
  for (const auto& r : ds.planted) {
    Json ant = Json::array();
    for (const auto& p : r.antecedent) ant.push_back(to_json(p));
    rules.push_back(Json{{"antecedent", ant},
                         {"consequent", r.consequent},
                         {"injection_rate", r.injection_rate}});
  }
  Json sidecar{{"band_edges", ds.bands.edges}, {"rules", rules}};
  std::ofstream sf(base / "planted_rules.json");
  if (!sf)
    throw IoError("cannot write " + (base / "planted_rules.json").string());
  sf << sidecar.dump(2) << '\n';
}

LoadedDataset load_dataset(const std::string& path,
                           const WindowingConfig& cfg) {
  LoadedDataset out;
  if (fs::is_directory(path)) {
    const fs::path base(path);
    std::ifstream wf(base / "windows.jsonl");
    if (!wf) throw IoError("cannot open " + (base / "windows.jsonl").string());
    std::string line;
    long line_no = 0;
    while (std::getline(wf, line)) {
      ++line_no;
      if (line.empty()) continue;
      Json j;
      try {
        j = Json::parse(line);
      } catch (const Json::parse_error& e) {
        throw ParseError("windows.jsonl line " + std::to_string(line_no) +
                         ": " + e.what());
      }
      WindowedSample w;
      w.unit_id = j.at("unit").get<int>();
      w.rul = j.at("rul").get<double>();
      w.timestamps = j.at("timestamps").get<std::vector<double>>();
      w.sensors = matrix_from_json(j.at("sensors"));
      out.windows.push_back(std::move(w));
    }
    const fs::path sidecar = base / "planted_rules.json";
    if (fs::exists(sidecar)) {
      std::ifstream sf(sidecar);
      Json j;
      sf >> j;
      BandEdges be;
      be.edges = j.at("band_edges").get<std::vector<double>>();
      out.bands = be;
      std::vector<PlantedRule> rules;
      for (const auto& rj : j.at("rules")) {
        PlantedRule r;
        for (const auto& pj : rj.at("antecedent"))
          r.antecedent.push_back(predicate_from_json(pj));
        r.consequent = rj.at("consequent").get<int>();
        r.injection_rate = rj.at("injection_rate").get<double>();
        rules.push_back(std::move(r));
      }
      out.planted = std::move(rules);
    }
    return out;
  }
  if (!fs::exists(path)) throw IoError("no such dataset: " + path);
  out.windows = make_windows(parse_cmapss(path), cfg);
  return out;
}

}  // namespace ruleminer
