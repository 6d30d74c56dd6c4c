#include "ruleminer/rules.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ruleminer/random.hpp"

namespace ruleminer {

const char* predicate_kind_name(PredicateKind k) {
  switch (k) {
    case PredicateKind::kTrendUp: return "trend-up";
    case PredicateKind::kTrendDown: return "trend-down";
    case PredicateKind::kAnomalyHigh: return "anomaly-high";
    case PredicateKind::kLevelInBin: return "level-in-bin";
  }
  return "?";
}

PredicateKind predicate_kind_from_name(const std::string& name) {
  if (name == "trend-up") return PredicateKind::kTrendUp;
  if (name == "trend-down") return PredicateKind::kTrendDown;
  if (name == "anomaly-high") return PredicateKind::kAnomalyHigh;
  if (name == "level-in-bin") return PredicateKind::kLevelInBin;
  throw ParseError("unknown predicate kind: " + name);
}

double ls_slope(const Eigen::Ref<const Eigen::VectorXd>& y) {
  const Eigen::Index n = y.size();
  if (n < 2) return 0.0;
  const double tbar = 0.5 * static_cast<double>(n - 1);
  const double ybar = y.mean();
  double num = 0.0, den = 0.0;
  for (Eigen::Index t = 0; t < n; ++t) {
    const double dt = static_cast<double>(t) - tbar;
    num += dt * (y(t) - ybar);
    den += dt * dt;
  }
  return num / den;
}

double window_max_abs_z(const Eigen::Ref<const Eigen::VectorXd>& y) {
  const auto n = static_cast<double>(y.size());
  const double mean = y.mean();
  const double var = (y.array() - mean).square().sum() / n;
  if (var < 1e-24) return 0.0;
  const double sd = std::sqrt(var);
  return ((y.array() - mean).abs() / sd).maxCoeff();
}

int level_bin(double value, double mean, double stddev, int bins) {
  if (stddev < 1e-12) return bins / 2;
  const double lo = mean - 2.0 * stddev;
  const double width = 4.0 * stddev / bins;
  const int b = static_cast<int>(std::floor((value - lo) / width));
  return std::clamp(b, 0, bins - 1);
}

bool predicate_holds(const Predicate& p, const WindowedSample& w,
                     const FeatureStats& stats, const MiningParams& mp) {
  if (p.feature < 0 || p.feature >= w.sensors.cols())
    throw ShapeError("predicate references sensor " +
                     std::to_string(p.feature) + " but window has " +
                     std::to_string(w.sensors.cols()));
  const Eigen::VectorXd col = w.sensors.col(p.feature);
  const double sd = std::max(stats.stddev[static_cast<size_t>(p.feature)],
                             1e-12);
  switch (p.kind) {
    case PredicateKind::kTrendUp:
      return ls_slope(col) > mp.trend_slope_factor * sd;
    case PredicateKind::kTrendDown:
      return ls_slope(col) < -mp.trend_slope_factor * sd;
    case PredicateKind::kAnomalyHigh:
      return window_max_abs_z(col) > mp.anomaly_z;
    case PredicateKind::kLevelInBin:
      return level_bin(col.mean(), stats.mean[static_cast<size_t>(p.feature)],
                       stats.stddev[static_cast<size_t>(p.feature)],
                       mp.level_bins) == p.bin;
  }
  return false;
}

bool antecedent_holds(const std::vector<Predicate>& antecedent,
                      const WindowedSample& w, const FeatureStats& stats,
                      const MiningParams& mp) {
  for (const auto& p : antecedent)
    if (!predicate_holds(p, w, stats, mp)) return false;
  return !antecedent.empty();
}

Predicate dominant_predicate(int feature,
                             const std::vector<const WindowedSample*>& members,
                             const FeatureStats& stats,
                             const MiningParams& mp) {
  double slope_sum = 0.0, maxz_sum = 0.0, level_sum = 0.0;
  for (const WindowedSample* w : members) {
    const Eigen::VectorXd col = w->sensors.col(feature);
    slope_sum += ls_slope(col);
    maxz_sum += window_max_abs_z(col);
    level_sum += col.mean();
  }
  const auto n = static_cast<double>(members.size());
  const double slope = slope_sum / n;
  const double maxz = maxz_sum / n;
  const double level = level_sum / n;
  const double sd = std::max(stats.stddev[static_cast<size_t>(feature)], 1e-12);
  const int w_len =
      members.empty() ? 0 : static_cast<int>(members.front()->sensors.rows());

  Predicate p;
  p.feature = feature;
  p.window = w_len;
  if (std::abs(slope) > mp.trend_slope_factor * sd) {
    p.kind = slope > 0 ? PredicateKind::kTrendUp : PredicateKind::kTrendDown;
  } else if (maxz > mp.anomaly_z) {
    p.kind = PredicateKind::kAnomalyHigh;
  } else {
    p.kind = PredicateKind::kLevelInBin;
    p.bin = level_bin(level, stats.mean[static_cast<size_t>(feature)],
                      stats.stddev[static_cast<size_t>(feature)],
                      mp.level_bins);
  }
  return p;
}

RuleRecurrenceParams RuleRecurrenceParams::init(int d_ctx, int d_r, Rng& rng) {
  RuleRecurrenceParams p;
  const double s = 1.0 / std::sqrt(static_cast<double>(d_ctx + d_r));
  p.W_z = Tensor(rng.gaussian_matrix(d_ctx + d_r, d_r, s), true);
  p.b_z = Tensor(Matrix::Zero(1, d_r), true);
  p.W_r = Tensor(rng.gaussian_matrix(d_ctx + d_r, d_r, s), true);
  p.b_r = Tensor(Matrix::Zero(1, d_r), true);
  return p;
}

Var generate_rule_state_graph(Var x_ctx, Var r_prev,
                              RuleRecurrenceParams& params) {
  Tape& t = *x_ctx.tape;
  const Eigen::Index d_in = t.value(x_ctx).cols() + t.value(r_prev).cols();
  if (params.W_z.value.rows() != d_in)
    throw ShapeError("generate_rule_state: [x; r] width " +
                     std::to_string(d_in) + " does not match W_z " +
                     shape_str(params.W_z.value));
  Var xr = concat_cols(x_ctx, r_prev);
  Var z = sigmoid(add_rowvec(matmul(xr, t.leaf(params.W_z)), t.leaf(params.b_z)));
  Var cand =
      tanh_op(add_rowvec(matmul(xr, t.leaf(params.W_r)), t.leaf(params.b_r)));
  return add(mul(affine(z, -1.0, 1.0), r_prev), mul(z, cand));
}

Matrix generate_rule_state(const Matrix& x_ctx, const Matrix& r_prev,
                           RuleRecurrenceParams& params) {
  Tape tape;
  return tape.value(generate_rule_state_graph(tape.constant(x_ctx),
                                              tape.constant(r_prev), params));
}

Matrix step_transition_matrix(const Matrix& states, SimKind sim) {
  if (states.rows() < 1)
    throw ShapeError("step_transition_matrix: need at least one state");
  Tape tape;
  Var s = tape.constant(states);
  Var m = (sim == SimKind::kCosine) ? cosine_sim(s, s)
                                    : matmul(s, transpose(s));
  return tape.value(transpose(softmax_rows(transpose(m))));
}

RuleAssignment assign_code(const Matrix& state, const Matrix& codebook,
                           double temperature, SimKind sim) {
  if (temperature <= 0.0)
    throw ConfigError("assign_code: temperature must be > 0");
  if (state.cols() != codebook.cols())
    throw ShapeError("assign_code: state width " + shape_str(state) +
                     " vs codebook " + shape_str(codebook));
  Matrix sims(1, codebook.rows());
  for (Eigen::Index j = 0; j < codebook.rows(); ++j) {
    sims(0, j) = (sim == SimKind::kCosine)
                     ? cosine_similarity(state, codebook.row(j))
                     : state.row(0).dot(codebook.row(j));
  }
  RuleAssignment a;
  a.probabilities = softmax_rows_value(sims / temperature);
  a.argmax = argmax_row(a.probabilities);
  return a;
}

Var assign_code_graph(Var state, Var codebook, double temperature,
                      SimKind sim) {
  if (temperature <= 0.0)
    throw ConfigError("assign_code: temperature must be > 0");
  Var sims = (sim == SimKind::kCosine)
                 ? cosine_sim(state, codebook)
                 : matmul(state, transpose(codebook));
  return softmax_rows(affine(sims, 1.0 / temperature, 0.0));
}

Matrix kmeanspp_init(const std::vector<Matrix>& states, int m, int d_r,
                     Rng& rng) {
  if (m < 2) throw ConfigError("codebook size must be >= 2");
  Matrix codes(m, d_r);
  if (states.empty()) {
    for (int j = 0; j < m; ++j) codes.row(j) = rng.gaussian_matrix(1, d_r, 0.5);
    return codes;
  }
  const size_t n = states.size();
  std::vector<size_t> chosen;
  chosen.push_back(rng.below(n));
  while (chosen.size() < static_cast<size_t>(m)) {
    std::vector<double> d2(n, 0.0);
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      for (size_t c : chosen)
        best = std::min(best, (states[i] - states[c]).squaredNorm());
      d2[i] = best;
      total += best;
    }
    size_t pick;
    if (total < 1e-24) {
      pick = rng.below(n);
    } else {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= u) { pick = i; break; }
      }
    }
    chosen.push_back(pick);
  }
  for (int j = 0; j < m; ++j) {
    codes.row(j) = states[chosen[static_cast<size_t>(j)]].row(0);
    // jitter keeps codes pairwise distinct even when seeded from duplicates
    codes.row(j) += rng.gaussian_matrix(1, d_r, 1e-3).row(0);
  }
  return codes;
}

Matrix code_transition_counts(const std::vector<std::vector<int>>& sequences,
                              int m) {
  Matrix counts = Matrix::Zero(m, m);
  long pairs = 0;
  for (const auto& seq : sequences) {
    for (size_t t = 0; t + 1 < seq.size(); ++t) {
      counts(seq[t], seq[t + 1]) += 1.0;
      ++pairs;
    }
  }
  if (pairs == 0)
    throw InputError("code_transition_counts: no consecutive pairs in corpus");
  Matrix out(m, m);
  for (int i = 0; i < m; ++i) {
    const double row_total = counts.row(i).sum();
    for (int j = 0; j < m; ++j)
      out(i, j) = (counts(i, j) + 1.0) / (row_total + m);
  }
  return out;
}

std::vector<int> coverage_set(const DiscretizedRule& rule,
                              const std::vector<WindowedSample>& windows,
                              const FeatureStats& stats,
                              const MiningParams& mp) {
  std::vector<int> covered;
  for (size_t i = 0; i < windows.size(); ++i)
    if (antecedent_holds(rule.antecedent, windows[i], stats, mp))
      covered.push_back(static_cast<int>(i));
  return covered;
}

double support(const DiscretizedRule& rule,
               const std::vector<WindowedSample>& windows,
               const FeatureStats& stats, const MiningParams& mp) {
  if (windows.empty()) throw InputError("support: empty window set");
  return static_cast<double>(coverage_set(rule, windows, stats, mp).size()) /
         static_cast<double>(windows.size());
}

double confidence(const DiscretizedRule& rule,
                  const std::vector<WindowedSample>& windows,
                  const BandEdges& bands, const FeatureStats& stats,
                  const MiningParams& mp) {
  const std::vector<int> covered = coverage_set(rule, windows, stats, mp);
  if (covered.empty())
    throw InputError("confidence: undefined for zero-support rule");
  long hits = 0;
  for (int i : covered)
    if (bands.band_of(windows[static_cast<size_t>(i)].rul) == rule.consequent)
      ++hits;
  return static_cast<double>(hits) / static_cast<double>(covered.size());
}

Matrix rule_correlation(const std::vector<DiscretizedRule>& rules,
                        const std::vector<WindowedSample>& windows,
                        const FeatureStats& stats, const MiningParams& mp) {
  const auto n = static_cast<Eigen::Index>(rules.size());
  std::vector<std::vector<int>> cov(rules.size());
  for (size_t i = 0; i < rules.size(); ++i)
    cov[i] = coverage_set(rules[i], windows, stats, mp);

  Matrix out = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const auto& a = cov[static_cast<size_t>(i)];
      const auto& b = cov[static_cast<size_t>(j)];
      if (a.empty() || b.empty()) continue;
      std::vector<int> inter;
      std::set_intersection(a.begin(), a.end(), b.begin(), b.end(),
                            std::back_inserter(inter));
      const double uni =
          static_cast<double>(a.size() + b.size() - inter.size());
      out(i, j) = out(j, i) = static_cast<double>(inter.size()) / uni;
    }
  }
  return out;
}

std::vector<long> cumulative_rule_count(
    const std::vector<std::set<int>>& per_step_rules) {
  std::vector<long> series;
  series.reserve(per_step_rules.size());
  std::set<int> seen;
  for (const auto& step : per_step_rules) {
    seen.insert(step.begin(), step.end());
    series.push_back(static_cast<long>(seen.size()));
  }
  return series;
}

std::optional<DiscretizedRule> discretize_rule(
    int code_id, const std::vector<int>& member_indices,
    const std::vector<WindowedSample>& windows, const Matrix& feature_mass,
    const FeatureStats& stats, const BandEdges& bands, const MiningParams& mp) {
  if (member_indices.empty()) return std::nullopt;
  const auto n_sensors = feature_mass.cols();

  Eigen::VectorXd mass = Eigen::VectorXd::Zero(n_sensors);
  for (int i : member_indices) mass += feature_mass.row(i).transpose();
  mass /= static_cast<double>(member_indices.size());

  std::vector<int> order(static_cast<size_t>(n_sensors));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return mass(a) > mass(b); });
  const double top = mass(order.front());
  if (!(top > 0.0)) return std::nullopt;

  std::vector<const WindowedSample*> members;
  members.reserve(member_indices.size());
  for (int i : member_indices) members.push_back(&windows[static_cast<size_t>(i)]);

  DiscretizedRule rule;
  rule.id = code_id;
  for (int f : order) {
    if (static_cast<int>(rule.antecedent.size()) >= mp.top_k) break;
    if (mass(f) < mp.mass_keep_ratio * top) break;
    rule.antecedent.push_back(dominant_predicate(f, members, stats, mp));
  }
  if (rule.antecedent.empty()) return std::nullopt;
  std::sort(rule.antecedent.begin(), rule.antecedent.end(),
            [](const Predicate& a, const Predicate& b) {
              return a.feature < b.feature;
            });

  std::vector<long> band_votes(static_cast<size_t>(bands.bands()), 0);
  for (const WindowedSample* w : members)
    band_votes[static_cast<size_t>(bands.band_of(w->rul))]++;
  rule.consequent = static_cast<int>(std::distance(
      band_votes.begin(),
      std::max_element(band_votes.begin(), band_votes.end())));

  rule.support = support(rule, windows, stats, mp);
  if (rule.support <= 0.0) return std::nullopt;
  rule.confidence = confidence(rule, windows, bands, stats, mp);
  return rule;
}

}  // namespace ruleminer
