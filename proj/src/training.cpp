#include "ruleminer/training.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "ruleminer/random.hpp"

namespace ruleminer {

double rule_log_likelihood(const std::vector<RuleAssignment>& assignments,
                           const std::vector<int>& targets) {
  if (assignments.size() != targets.size())
    throw ShapeError("rule_log_likelihood: need one target per step");
  double loss = 0.0;
  for (size_t t = 0; t < assignments.size(); ++t) {
    const double p = std::max(
        assignments[t].probabilities(0, targets[t]), 1e-12);
    loss -= std::log(p);
  }
  return loss;
}

double distribution_divergence(const DriftMonitor& monitor) {
  if (!monitor.initialized) return 0.0;
  const size_t d = monitor.hist_mean.size();
  if (d == 0) return 0.0;
  double total = 0.0;
  for (size_t f = 0; f < d; ++f) {
    const double v1 = std::max(monitor.hist_var[f], 1e-8);
    const double v2 = std::max(monitor.cur_var[f], 1e-8);
    const double dmu = monitor.hist_mean[f] - monitor.cur_mean[f];
    const double kl_pq = 0.5 * std::log(v2 / v1) + (v1 + dmu * dmu) / (2.0 * v2) - 0.5;
    const double kl_qp = 0.5 * std::log(v1 / v2) + (v2 + dmu * dmu) / (2.0 * v1) - 0.5;
    total += 0.5 * (kl_pq + kl_qp);
  }
  return total / static_cast<double>(d);
}

double DriftMonitor::update(const std::vector<double>& batch_mean,
                            const std::vector<double>& batch_var) {
  cur_mean = batch_mean;
  cur_var = batch_var;
  if (!initialized) {
    hist_mean = batch_mean;
    hist_var = batch_var;
    initialized = true;
  }
  drift = distribution_divergence(*this);
  for (size_t f = 0; f < hist_mean.size(); ++f) {
    hist_mean[f] = decay * hist_mean[f] + (1.0 - decay) * batch_mean[f];
    hist_var[f] = decay * hist_var[f] + (1.0 - decay) * batch_var[f];
  }
  return drift;
}

double adaptive_learning_rate(double eta_base, double drift, double kappa) {
  if (eta_base <= 0.0)
    throw ConfigError("adaptive_learning_rate: eta_base must be > 0");
  if (drift < 0.0)
    throw InputError("adaptive_learning_rate: drift must be >= 0");
  return eta_base / (1.0 + kappa * drift);
}

AdamState AdamState::init(
    std::vector<std::pair<std::string, Tensor*>>& params) {
  AdamState s;
  for (auto& [name, t] : params) {
    s.m.push_back(Matrix::Zero(t->value.rows(), t->value.cols()));
    s.v.push_back(Matrix::Zero(t->value.rows(), t->value.cols()));
  }
  return s;
}

void AdamState::apply(std::vector<std::pair<std::string, Tensor*>>& params,
                      double lr) {
  ++step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& t = *params[i].second;
    m[i] = beta1 * m[i] + (1.0 - beta1) * t.grad;
    v[i] = beta2 * v[i] +
           (1.0 - beta2) * t.grad.cwiseProduct(t.grad);
    const Matrix m_hat = m[i] / bc1;
    const Matrix v_hat = v[i] / bc2;
    t.value -=
        lr * (m_hat.array() / (v_hat.array().sqrt() + eps)).matrix();
  }
}

namespace {

// Per-feature mean/variance of the model inputs across a batch.
void batch_feature_stats(const std::vector<WindowedSample>& windows,
                         const std::vector<size_t>& batch,
                         std::vector<double>& mean, std::vector<double>& var) {
  const auto d = windows[batch.front()].features.cols();
  mean.assign(static_cast<size_t>(d), 0.0);
  var.assign(static_cast<size_t>(d), 0.0);
  long n = 0;
  for (size_t bi : batch) {
    const Matrix& F = windows[bi].features;
    for (Eigen::Index t = 0; t < F.rows(); ++t)
      for (Eigen::Index f = 0; f < d; ++f)
        mean[static_cast<size_t>(f)] += F(t, f);
    n += F.rows();
  }
  for (auto& v : mean) v /= static_cast<double>(n);
  for (size_t bi : batch) {
    const Matrix& F = windows[bi].features;
    for (Eigen::Index t = 0; t < F.rows(); ++t)
      for (Eigen::Index f = 0; f < d; ++f) {
        const double dlt = F(t, f) - mean[static_cast<size_t>(f)];
        var[static_cast<size_t>(f)] += dlt * dlt;
      }
  }
  for (auto& v : var) v /= static_cast<double>(n);
}

// Accumulates beta * d(mean pairwise cosine similarity)/d(codebook) into the
// codebook gradient; keeps codes from collapsing onto each other. Not part
// of the reported loss terms.
void add_codebook_repulsion(Model& model, double beta) {
  if (beta <= 0.0 || model.cfg.m < 2) return;
  Tape tape;
  Var book = tape.leaf(model.codebook);
  Var sims = cosine_sim(book, book);
  const double m = static_cast<double>(model.cfg.m);
  // mean over off-diagonal pairs; the diagonal contributes a constant
  Var penalty = affine(sum(sims), beta / (m * (m - 1.0)), 0.0);
  tape.backward(penalty);
}

}  // namespace

StepLog train_step(Model& model, const std::vector<WindowedSample>& windows,
                   const std::vector<size_t>& batch_indices, AdamState& opt,
                   DriftMonitor& monitor, const TrainConfig& cfg,
                   long step_index, LabelCache* cache) {
  if (batch_indices.empty()) throw InputError("train_step: empty batch");
  auto params = model.named_params();
  for (auto& [name, t] : params) t->zero_grad();

  Tape tape;
  const double inv_b = 1.0 / static_cast<double>(batch_indices.size());
  Var nll_acc = tape.constant(Matrix::Zero(1, 1));
  Var mse_acc = tape.constant(Matrix::Zero(1, 1));
  Var pbar_acc =
      tape.constant(Matrix::Zero(1, static_cast<Eigen::Index>(model.cfg.m)));
  long total_steps = 0;

  for (size_t bi : batch_indices) {
    const WindowedSample& w = windows[bi];
    const std::vector<int>* fixed = nullptr;
    if (cache && cache->era[bi] == cache->current_era)
      fixed = &cache->labels[bi];
    Model::Forward f = model.forward_window(tape, w, fixed);
    if (cache && !fixed) {
      cache->labels[bi] = f.self_targets;
      cache->era[bi] = cache->current_era;
    }
    nll_acc = add(nll_acc, f.nll);
    Var err = affine(f.rul_pred, 1.0, -model.rul_target(w.rul));
    mse_acc = add(mse_acc, mul(err, err));
    for (Var p : f.probs) pbar_acc = add(pbar_acc, p);
    total_steps += static_cast<long>(f.probs.size());
  }

  Var nll_mean = affine(nll_acc, inv_b, 0.0);
  Var mse_mean = affine(mse_acc, inv_b, 0.0);
  Var pbar = affine(pbar_acc, 1.0 / static_cast<double>(total_steps), 0.0);
  Var ent_reg = sum(mul(pbar, log_clamped(pbar)));  // negative entropy

  Var total = add(affine(nll_mean, cfg.weights.nll, 0.0),
                  add(affine(mse_mean, cfg.weights.rul, 0.0),
                      affine(ent_reg, cfg.weights.ent, 0.0)));

  StepLog log;
  log.step = step_index;
  log.nll = tape.value(nll_mean)(0, 0);
  log.rul_mse = tape.value(mse_mean)(0, 0);
  log.entropy_reg = tape.value(ent_reg)(0, 0);
  log.total = tape.value(total)(0, 0);
  if (!std::isfinite(log.total))
    throw NumericError("train: non-finite loss at batch " +
                       std::to_string(step_index));

  tape.backward(total);
  add_codebook_repulsion(model, cfg.repulsion_beta);

  std::vector<double> bmean, bvar;
  batch_feature_stats(windows, batch_indices, bmean, bvar);
  log.drift = monitor.update(bmean, bvar);
  log.lr = adaptive_learning_rate(cfg.lr, log.drift, cfg.drift_kappa);
  opt.apply(params, log.lr);
  return log;
}

int revive_dead_codes(Model& model, const std::vector<WindowedSample>& windows,
                      double min_share, size_t max_windows) {
  const size_t step = std::max<size_t>(1, windows.size() / max_windows);
  std::vector<Matrix> states;
  for (size_t i = 0; i < windows.size(); i += step) {
    Tape tape;
    Model::Forward f = model.forward_window(tape, windows[i]);
    states.push_back(tape.value(f.states.back()));
  }
  const auto n = static_cast<double>(states.size());
  const int m = model.cfg.m;

  // one Lloyd pass keeps the codebook centered on the current state
  // distribution so no single code can swallow the corpus
  std::vector<long> usage(static_cast<size_t>(m), 0);
  std::vector<Matrix> sums(static_cast<size_t>(m),
                           Matrix::Zero(1, model.cfg.d_r));
  for (const Matrix& s : states) {
    const RuleAssignment a =
        assign_code(s, model.codebook.value, model.cfg.temperature,
                    model.cfg.sim);
    usage[static_cast<size_t>(a.argmax)]++;
    sums[static_cast<size_t>(a.argmax)] += s;
  }
  for (int c = 0; c < m; ++c) {
    if (usage[static_cast<size_t>(c)] > 0)
      model.codebook.value.row(c) =
          sums[static_cast<size_t>(c)].row(0) /
          static_cast<double>(usage[static_cast<size_t>(c)]);
  }

  // re-seed codes that fell out of use onto far-from-codebook states
  int revived = 0;
  for (int c = 0; c < m; ++c) {
    if (static_cast<double>(usage[static_cast<size_t>(c)]) / n >= min_share)
      continue;
    double best_d = -1.0;
    size_t best_i = 0;
    for (size_t i = 0; i < states.size(); ++i) {
      double nearest = std::numeric_limits<double>::max();
      for (int j = 0; j < m; ++j)
        nearest = std::min(
            nearest, (states[i] - model.codebook.value.row(j)).squaredNorm());
      if (nearest > best_d) {
        best_d = nearest;
        best_i = i;
      }
    }
    model.codebook.value.row(c) = states[best_i].row(0);
    ++revived;
  }
  return revived;
}

std::vector<StepLog> train(Model& model,
                           const std::vector<WindowedSample>& windows,
                           const TrainConfig& cfg) {
  if (windows.empty()) throw InputError("train: no windows");
  seed_codebook(model, windows, cfg.seed);

  auto params = model.named_params();
  AdamState opt = AdamState::init(params);
  DriftMonitor monitor;
  monitor.decay = cfg.drift_decay;
  Rng rng(cfg.seed, "batching");

  std::vector<size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();  // trigger reshuffle on first use

  std::vector<StepLog> history;
  history.reserve(static_cast<size_t>(cfg.steps));
  const auto batch_size =
      std::min<size_t>(static_cast<size_t>(cfg.batch), windows.size());
  const long steps_per_epoch = static_cast<long>(
      (windows.size() + batch_size - 1) / batch_size);
  const long label_refresh =
      cfg.label_refresh > 0 ? cfg.label_refresh : steps_per_epoch;

  LabelCache cache(windows.size());
  auto refresh_labels = [&] {
    for (size_t i = 0; i < windows.size(); ++i) {
      Tape tape;
      Model::Forward f = model.forward_window(tape, windows[i]);
      cache.labels[i] = f.self_targets;
      cache.era[i] = cache.current_era;
    }
  };
  refresh_labels();

  for (long step = 0; step < cfg.steps; ++step) {
    std::vector<size_t> batch;
    batch.reserve(batch_size);
    for (size_t i = 0; i < batch_size; ++i) {
      if (cursor >= order.size()) {
        for (size_t j = order.size() - 1; j > 0; --j)
          std::swap(order[j], order[rng.below(j + 1)]);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    history.push_back(
        train_step(model, windows, batch, opt, monitor, cfg, step, &cache));
    if (cfg.revive_every > 0 && (step + 1) % cfg.revive_every == 0 &&
        step + 1 < cfg.steps)
      revive_dead_codes(model, windows, cfg.revive_min_share);
    if ((step + 1) % label_refresh == 0 && step + 1 < cfg.steps) {
      ++cache.current_era;
      refresh_labels();
    }
  }
  return history;
}

void write_training_log(const std::string& path,
                        const std::vector<StepLog>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write training log " + path);
  out << "step,nll,rul_mse,entropy_reg,total,drift,lr\n";
  char buf[256];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof(buf), "%ld,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                  h.step, h.nll, h.rul_mse, h.entropy_reg, h.total, h.drift,
                  h.lr);
    out << buf;
  }
}

}  // namespace ruleminer
