#include "ruleminer/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include "ruleminer/random.hpp"
#include "ruleminer/serialize.hpp"

namespace fs = std::filesystem;

namespace ruleminer {

namespace {

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

MiningArtifacts mine_rules(Model& model,
                           const std::vector<WindowedSample>& windows,
                           const MiningParams& mp) {
  if (windows.empty()) throw InputError("mine_rules: no windows");
  const auto t0 = std::chrono::steady_clock::now();

  MiningArtifacts art;
  art.stats = compute_sensor_stats(windows);
  const auto n = windows.size();
  const auto s = windows.front().sensors.cols();

  // forward pass per window: final-step code, per-step codes, feature mass
  Matrix feature_mass = Matrix::Zero(static_cast<Eigen::Index>(n), s);
  std::vector<int> window_code(n, 0);
  art.code_sequences.resize(n);
  for (size_t i = 0; i < n; ++i) {
    Tape tape;
    Model::Forward f = model.forward_window(tape, windows[i]);
    art.code_sequences[i] = f.self_targets;
    window_code[i] = f.self_targets.back();

    // step importance: average attention mass a step receives (rows of the
    // column-stochastic step-weight matrix)
    const Matrix& A = tape.value(f.step_weights);
    const Eigen::Index T = A.rows();
    Eigen::VectorXd step_imp =
        A.rowwise().sum() / static_cast<double>(T);
    // per-sensor mass: step-weighted magnitude of the sensor's feature group
    // (raw + trend + anomaly + periodicity columns of the normalized input)
    const Matrix& F = windows[i].features;
    for (Eigen::Index f_idx = 0; f_idx < s; ++f_idx) {
      double mass = 0.0;
      for (Eigen::Index t = 0; t < T; ++t) {
        mass += step_imp(t) *
                (std::abs(F(t, f_idx)) + std::abs(F(t, s + 3 * f_idx)) +
                 std::abs(F(t, s + 3 * f_idx + 1)) +
                 std::abs(F(t, s + 3 * f_idx + 2)));
      }
      feature_mass(static_cast<Eigen::Index>(i), f_idx) = mass;
    }
  }

  // mass relative to the corpus baseline: a sensor only counts for a code if
  // its members carry more activation there than the average window does
  const Matrix baseline = feature_mass.colwise().mean();
  for (Eigen::Index r = 0; r < feature_mass.rows(); ++r)
    feature_mass.row(r) =
        (feature_mass.row(r) - baseline).cwiseMax(0.0);

  // candidate membership per (code, band) cell: conditioning on the observed
  // band strips unrelated windows out of a code's membership, so the
  // dominant predicates are computed over a much purer window set
  const int n_bands = model.bands.bands();
  std::vector<std::vector<int>> members(
      static_cast<size_t>(model.cfg.m * n_bands));
  for (size_t i = 0; i < n; ++i) {
    const int band = model.bands.band_of(windows[i].rul);
    members[static_cast<size_t>(window_code[i] * n_bands + band)].push_back(
        static_cast<int>(i));
  }

  // one candidate rule per non-empty cell; duplicates keep the lowest id
  std::vector<DiscretizedRule> rules;
  for (int cell = 0; cell < model.cfg.m * n_bands; ++cell) {
    auto rule = discretize_rule(cell, members[static_cast<size_t>(cell)],
                                windows, feature_mass, art.stats, model.bands,
                                mp);
    if (!rule) continue;
    if (rule->support < mp.min_support) continue;
    const bool dup = std::any_of(
        rules.begin(), rules.end(), [&](const DiscretizedRule& r) {
          return r.antecedent == rule->antecedent &&
                 r.consequent == rule->consequent;
        });
    if (!dup) rules.push_back(std::move(*rule));
  }
  std::sort(rules.begin(), rules.end(),
            [](const DiscretizedRule& a, const DiscretizedRule& b) {
              if (a.confidence != b.confidence)
                return a.confidence > b.confidence;
              return a.id < b.id;
            });
  art.rules = std::move(rules);

  art.fired_per_window.assign(n, {});
  for (size_t i = 0; i < n; ++i)
    for (const auto& r : art.rules)
      if (antecedent_holds(r.antecedent, windows[i], art.stats, mp))
        art.fired_per_window[i].insert(r.id);

  art.correlation = rule_correlation(art.rules, windows, art.stats, mp);

  art.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return art;
}

double planted_recovery_rate(const std::vector<PlantedRule>& planted,
                             const std::vector<DiscretizedRule>& mined) {
  if (planted.empty()) return 0.0;
  long hits = 0;
  for (const auto& p : planted) {
    for (const auto& r : mined) {
      if (r.antecedent == p.antecedent) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(planted.size());
}

MetricsReport evaluate(Model& model,
                       const std::vector<WindowedSample>& windows,
                       const MiningParams& mp,
                       const std::string& config_fingerprint,
                       const std::vector<PlantedRule>* planted,
                       MiningArtifacts* artifacts_out) {
  if (windows.empty()) throw InputError("evaluate: no windows");
  MiningArtifacts art = mine_rules(model, windows, mp);

  MetricsReport rep;
  rep.config_fingerprint = config_fingerprint;
  rep.wall_time_seconds = art.wall_time_seconds;
  rep.rule_count = static_cast<long>(art.rules.size());
  rep.zero_rules = art.rules.empty();

  if (!rep.zero_rules) {
    long covered = 0, correct = 0;
    for (size_t i = 0; i < windows.size(); ++i) {
      if (art.fired_per_window[i].empty()) continue;
      ++covered;
      // rules are sorted by descending confidence (then id): the first one
      // that fires is the highest-confidence firing rule
      for (const auto& r : art.rules) {
        if (!art.fired_per_window[i].count(r.id)) continue;
        if (model.bands.band_of(windows[i].rul) == r.consequent) ++correct;
        break;
      }
    }
    rep.rule_coverage =
        static_cast<double>(covered) / static_cast<double>(windows.size());
    rep.rule_mining_accuracy =
        covered == 0 ? 0.0
                     : static_cast<double>(correct) /
                           static_cast<double>(covered);
  }
  if (planted) rep.planted_recovery = planted_recovery_rate(*planted, art.rules);
  if (artifacts_out) *artifacts_out = std::move(art);
  return rep;
}

// --- pipeline ---------------------------------------------------------------

PreparedData prepare_training_data(const RunConfig& cfg) {
  PreparedData data;
  if (cfg.inline_synth) {
    SynthConfig sc = cfg.synth;
    sc.mining = cfg.mining;
    SynthDataset ds = synth_planted_rules(sc);
    data.windows = std::move(ds.windows);
    data.planted = std::move(ds.planted);
    data.bands = ds.bands;
  } else {
    LoadedDataset ds = load_dataset(cfg.data_path, cfg.windowing);
    if (ds.windows.empty())
      throw InputError("dataset " + cfg.data_path + " produced no windows");
    data.windows = std::move(ds.windows);
    data.planted = std::move(ds.planted);
    if (ds.bands) {
      data.bands = *ds.bands;
    } else {
      std::vector<double> ruls;
      ruls.reserve(data.windows.size());
      for (const auto& w : data.windows)
        ruls.push_back(std::min(w.rul, cfg.windowing.rul_cap));
      data.bands = equal_frequency_bands(std::move(ruls), cfg.windowing.bands);
    }
  }
  build_features(data.windows);
  data.sensor_stats = compute_sensor_stats(data.windows);
  data.norm = fit_feature_norm(data.windows);
  apply_feature_norm(data.windows, data.norm);
  return data;
}

void prepare_eval_windows(const Model& model,
                          std::vector<WindowedSample>& windows) {
  build_features(windows);
  apply_feature_norm(windows, model.norm);
}

TrainRun run_training(const RunConfig& cfg) {
  PreparedData data = prepare_training_data(cfg);
  ModelConfig mc = cfg.model;
  mc.d_in = static_cast<int>(data.windows.front().features.cols());
  Model model = Model::init(mc, cfg.flags, cfg.train.seed);
  model.norm = data.norm;
  model.bands = data.bands;
  model.windowing = cfg.windowing;
  model.mining = cfg.mining;
  model.fingerprint = config_fingerprint(cfg);
  std::vector<StepLog> history = train(model, data.windows, cfg.train);
  return TrainRun{std::move(model), std::move(history), std::move(data)};
}

// --- ablations ---------------------------------------------------------------

const char* const kAblationVariants[4] = {"full", "no_time_dependency",
                                          "no_dynamic_weights",
                                          "no_self_attention"};

AblationFlags flags_for_variant(const std::string& variant) {
  AblationFlags f;
  if (variant == "full") return f;
  if (variant == "no_time_dependency") {
    f.use_time_dependency = false;
    return f;
  }
  if (variant == "no_dynamic_weights") {
    f.use_dynamic_weights = false;
    return f;
  }
  if (variant == "no_self_attention") {
    f.use_self_attention = false;
    return f;
  }
  throw ConfigError("unknown ablation variant: " + variant);
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct CellResult {
  MetricsReport report;
  bool failed = true;
};

}  // namespace

std::vector<AblationRow> run_ablations(const RunConfig& base,
                                       const std::vector<uint64_t>& seeds,
                                       int max_threads) {
  if (seeds.size() < 3)
    throw ConfigError("run_ablations: need at least 3 seeds for a stable median");
  PreparedData data = prepare_training_data(base);
  const std::string fingerprint = config_fingerprint(base);

  struct Cell {
    size_t variant;
    uint64_t seed;
  };
  std::vector<Cell> cells;
  for (size_t v = 0; v < 4; ++v)
    for (uint64_t s : seeds) cells.push_back({v, s});
  std::vector<CellResult> results(cells.size());

  auto run_cell = [&](size_t idx) {
    const Cell& cell = cells[idx];
    try {
      const std::string variant = kAblationVariants[cell.variant];
      // independent deterministic stream per (seed, variant)
      const uint64_t cell_seed = cell.seed ^ Rng::fnv1a64(variant);
      ModelConfig mc = base.model;
      mc.d_in = static_cast<int>(data.windows.front().features.cols());
      Model model = Model::init(mc, flags_for_variant(variant), cell_seed);
      model.norm = data.norm;
      model.bands = data.bands;
      model.windowing = base.windowing;
      model.mining = base.mining;
      model.fingerprint = fingerprint;
      TrainConfig tc = base.train;
      tc.seed = cell_seed;
      train(model, data.windows, tc);
      const std::vector<PlantedRule>* planted =
          data.planted ? &*data.planted : nullptr;
      results[idx].report =
          evaluate(model, data.windows, base.mining, fingerprint, planted);
      results[idx].failed = false;
    } catch (const std::exception&) {
      results[idx].failed = true;
    }
  };

  const int threads =
      std::max(1, std::min<int>(max_threads, static_cast<int>(cells.size())));
  if (threads == 1) {
    for (size_t i = 0; i < cells.size(); ++i) run_cell(i);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (size_t i = next.fetch_add(1); i < cells.size();
             i = next.fetch_add(1))
          run_cell(i);
      });
    for (auto& t : pool) t.join();
  }

  std::vector<AblationRow> rows;
  for (size_t v = 0; v < 4; ++v) {
    AblationRow row;
    row.variant = kAblationVariants[v];
    std::vector<double> acc, cov, wall, cnt, rec;
    bool any_ok = false, has_recovery = false;
    for (size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].variant != v) continue;
      if (results[i].failed) {
        row.failed = true;
        continue;
      }
      any_ok = true;
      acc.push_back(results[i].report.rule_mining_accuracy);
      cov.push_back(results[i].report.rule_coverage);
      wall.push_back(results[i].report.wall_time_seconds);
      cnt.push_back(static_cast<double>(results[i].report.rule_count));
      if (results[i].report.planted_recovery) {
        has_recovery = true;
        rec.push_back(*results[i].report.planted_recovery);
      }
    }
    if (!any_ok) {
      row.failed = true;
    } else {
      row.metrics.rule_mining_accuracy = median(acc);
      row.metrics.rule_coverage = median(cov);
      row.metrics.wall_time_seconds = median(wall);
      row.metrics.rule_count = static_cast<long>(median(cnt));
      row.metrics.config_fingerprint = fingerprint;
      if (has_recovery) row.metrics.planted_recovery = median(rec);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "variant,rule_mining_accuracy,rule_coverage,efficiency_seconds\n";
  for (const auto& r : rows) {
    if (r.failed) {
      out << r.variant << ",failed,failed,failed\n";
    } else {
      out << r.variant << ',' << fmt6(r.metrics.rule_mining_accuracy) << ','
          << fmt6(r.metrics.rule_coverage) << ','
          << fmt6(r.metrics.wall_time_seconds) << '\n';
    }
  }
}

// --- apriori -----------------------------------------------------------------

std::vector<std::pair<std::vector<int>, long>> apriori_frequent_itemsets(
    const std::vector<std::vector<int>>& transactions, double min_support) {
  if (min_support <= 0.0 || min_support > 1.0)
    throw ConfigError("apriori: min_support must be in (0, 1]");
  const auto n = transactions.size();
  if (n == 0) return {};
  const long threshold = static_cast<long>(
      std::ceil(min_support * static_cast<double>(n) - 1e-9));

  std::vector<std::vector<int>> txs = transactions;
  for (auto& t : txs) {
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
  }

  auto count_of = [&](const std::vector<int>& items) {
    long c = 0;
    for (const auto& t : txs)
      if (std::includes(t.begin(), t.end(), items.begin(), items.end())) ++c;
    return c;
  };

  std::vector<std::pair<std::vector<int>, long>> out;

  // L1
  std::map<int, long> singles;
  for (const auto& t : txs)
    for (int item : t) singles[item]++;
  std::vector<std::vector<int>> level;
  for (const auto& [item, c] : singles)
    if (c >= threshold) {
      level.push_back({item});
      out.push_back({{item}, c});
    }

  while (!level.empty()) {
    // candidate join: two k-sets sharing the first k-1 items
    std::vector<std::vector<int>> next;
    for (size_t i = 0; i < level.size(); ++i) {
      for (size_t j = i + 1; j < level.size(); ++j) {
        const auto& a = level[i];
        const auto& b = level[j];
        if (!std::equal(a.begin(), a.end() - 1, b.begin())) break;
        std::vector<int> cand = a;
        cand.push_back(b.back());
        // downward closure: every (k)-subset must be frequent
        bool ok = true;
        for (size_t drop = 0; ok && drop + 1 < cand.size(); ++drop) {
          std::vector<int> sub;
          for (size_t x = 0; x < cand.size(); ++x)
            if (x != drop) sub.push_back(cand[x]);
          ok = std::binary_search(level.begin(), level.end(), sub);
        }
        if (!ok) continue;
        if (count_of(cand) >= threshold) next.push_back(std::move(cand));
      }
    }
    std::sort(next.begin(), next.end());
    for (const auto& items : next) out.push_back({items, count_of(items)});
    level = std::move(next);
  }

  std::sort(out.begin(), out.end());
  return out;
}

std::vector<AprioriRule> apriori_baseline(
    const std::vector<std::vector<int>>& atom_transactions,
    const std::vector<int>& bands, double min_support, double min_confidence) {
  if (atom_transactions.size() != bands.size())
    throw ShapeError("apriori_baseline: one band per transaction required");
  std::vector<std::vector<int>> txs = atom_transactions;
  for (size_t i = 0; i < txs.size(); ++i)
    txs[i].push_back(kBandItemBase + bands[i]);

  const auto frequent = apriori_frequent_itemsets(txs, min_support);
  std::map<std::vector<int>, long> counts;
  for (const auto& [items, c] : frequent) counts[items] = c;

  const double n = static_cast<double>(txs.size());
  std::vector<AprioriRule> rules;
  for (const auto& [items, c] : frequent) {
    if (items.size() < 2) continue;
    // band items sort above all atoms, so a band item can only be last
    if (items.back() < kBandItemBase) continue;
    std::vector<int> antecedent(items.begin(), items.end() - 1);
    if (antecedent.empty() || antecedent.back() >= kBandItemBase) continue;
    const auto it = counts.find(antecedent);
    if (it == counts.end()) continue;
    const double conf =
        static_cast<double>(c) / static_cast<double>(it->second);
    if (conf < min_confidence) continue;
    AprioriRule r;
    r.antecedent = std::move(antecedent);
    r.consequent = items.back() - kBandItemBase;
    r.support = static_cast<double>(c) / n;
    r.confidence = conf;
    rules.push_back(std::move(r));
  }
  return rules;
}

std::vector<std::vector<int>> windows_to_transactions(
    const std::vector<WindowedSample>& windows, const FeatureStats& stats,
    const MiningParams& mp) {
  std::vector<std::vector<int>> txs;
  txs.reserve(windows.size());
  const int per_sensor = 3 + mp.level_bins;
  for (const auto& w : windows) {
    std::vector<int> atoms;
    for (Eigen::Index f = 0; f < w.sensors.cols(); ++f) {
      const int base = static_cast<int>(f) * per_sensor;
      Predicate p;
      p.feature = static_cast<int>(f);
      p.window = static_cast<int>(w.sensors.rows());
      p.kind = PredicateKind::kTrendUp;
      if (predicate_holds(p, w, stats, mp)) atoms.push_back(base + 0);
      p.kind = PredicateKind::kTrendDown;
      if (predicate_holds(p, w, stats, mp)) atoms.push_back(base + 1);
      p.kind = PredicateKind::kAnomalyHigh;
      if (predicate_holds(p, w, stats, mp)) atoms.push_back(base + 2);
      const int bin =
          level_bin(w.sensors.col(f).mean(), stats.mean[static_cast<size_t>(f)],
                    stats.stddev[static_cast<size_t>(f)], mp.level_bins);
      atoms.push_back(base + 3 + bin);
    }
    txs.push_back(std::move(atoms));
  }
  return txs;
}

// --- artifact files ----------------------------------------------------------

void save_rules_json(const std::vector<DiscretizedRule>& rules,
                     const std::string& path) {
  Json arr = Json::array();
  for (const auto& r : rules) arr.push_back(to_json(r));
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << arr.dump(2) << '\n';
}

std::vector<DiscretizedRule> load_rules_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  Json arr;
  try {
    in >> arr;
  } catch (const Json::parse_error& e) {
    throw ParseError(std::string("rules json: ") + e.what());
  }
  std::vector<DiscretizedRule> rules;
  for (const auto& rj : arr) rules.push_back(rule_from_json(rj));
  return rules;
}

void save_metrics_json(const MetricsReport& report, const std::string& path) {
  Json j{{"rule_mining_accuracy", report.rule_mining_accuracy},
         {"rule_coverage", report.rule_coverage},
         {"wall_time_seconds", report.wall_time_seconds},
         {"rule_count", report.rule_count},
         {"config_fingerprint", report.config_fingerprint},
         {"zero_rules", report.zero_rules}};
  if (report.planted_recovery) j["planted_recovery"] = *report.planted_recovery;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << '\n';
}

void export_figures(const MiningArtifacts& artifacts,
                    const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  const fs::path base(out_dir);

  {
    std::ofstream out(base / "rule_timeline.csv");
    if (!out)
      throw IoError("cannot write " + (base / "rule_timeline.csv").string());
    out << "step,cumulative_rules\n";
    const auto series = cumulative_rule_count(artifacts.fired_per_window);
    for (size_t t = 0; t < series.size(); ++t)
      out << (t + 1) << ',' << series[t] << '\n';
  }
  {
    std::ofstream out(base / "support_distribution.csv");
    if (!out)
      throw IoError("cannot write " +
                    (base / "support_distribution.csv").string());
    out << "rule_id,support\n";
    for (const auto& r : artifacts.rules)
      out << r.id << ',' << fmt6(r.support) << '\n';
  }
  {
    std::ofstream out(base / "rule_correlation.csv");
    if (!out)
      throw IoError("cannot write " +
                    (base / "rule_correlation.csv").string());
    out << "rule_id";
    for (const auto& r : artifacts.rules) out << ',' << r.id;
    out << '\n';
    for (size_t i = 0; i < artifacts.rules.size(); ++i) {
      out << artifacts.rules[i].id;
      for (size_t j = 0; j < artifacts.rules.size(); ++j)
        out << ',' << fmt6(artifacts.correlation(static_cast<Eigen::Index>(i),
                                                 static_cast<Eigen::Index>(j)));
      out << '\n';
    }
  }
}

}  // namespace ruleminer
