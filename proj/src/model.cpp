#include "ruleminer/model.hpp"

#include <cmath>
#include <fstream>

#include "ruleminer/random.hpp"
#include "ruleminer/serialize.hpp"

namespace ruleminer {

Model Model::init(const ModelConfig& cfg, const AblationFlags& flags,
                  uint64_t seed) {
  if (cfg.d_in <= 0 || cfg.d_model <= 0 || cfg.d_ff <= 0 || cfg.d_k <= 0 ||
      cfg.layers < 1 || cfg.d_r <= 0)
    throw ConfigError("model: all dimensions must be positive, layers >= 1");
  if (cfg.m < 2) throw ConfigError("model: codebook size must be >= 2");
  if (cfg.temperature <= 0.0)
    throw ConfigError("model: temperature must be > 0");

  Rng rng(seed, "init");
  Model m;
  m.cfg = cfg;
  m.flags = flags;
  const double s_in = 1.0 / std::sqrt(static_cast<double>(cfg.d_in));
  m.W_in = Tensor(rng.gaussian_matrix(cfg.d_in, cfg.d_model, s_in), true);
  m.b_in = Tensor(Matrix::Zero(1, cfg.d_model), true);
  for (int l = 0; l < cfg.layers; ++l)
    m.layers.push_back(EncoderLayer::init(cfg.d_model, cfg.d_ff, cfg.d_k, rng));
  m.rule = RuleRecurrenceParams::init(cfg.d_model, cfg.d_r, rng);
  m.codebook = Tensor(rng.gaussian_matrix(cfg.m, cfg.d_r, 0.5), true);
  m.W_rul = Tensor(
      rng.gaussian_matrix(cfg.d_model, 1,
                          1.0 / std::sqrt(static_cast<double>(cfg.d_model))),
      true);
  m.b_rul = Tensor(Matrix::Constant(1, 1, 0.5), true);
  return m;
}

std::vector<std::pair<std::string, Tensor*>> Model::named_params() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("W_in", &W_in);
  out.emplace_back("b_in", &b_in);
  for (size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    EncoderLayer& layer = layers[l];
    out.emplace_back(p + "W_q", &layer.attn.W_q);
    out.emplace_back(p + "W_k", &layer.attn.W_k);
    out.emplace_back(p + "W_v", &layer.attn.W_v);
    out.emplace_back(p + "W_o", &layer.attn.W_o);
    out.emplace_back(p + "W1", &layer.W1);
    out.emplace_back(p + "b1", &layer.b1);
    out.emplace_back(p + "W2", &layer.W2);
    out.emplace_back(p + "b2", &layer.b2);
    out.emplace_back(p + "decay_rho", &layer.decay_rho);
    out.emplace_back(p + "gate.w", &layer.gate.w);
    out.emplace_back(p + "gate.b", &layer.gate.b);
  }
  out.emplace_back("rule.W_z", &rule.W_z);
  out.emplace_back("rule.b_z", &rule.b_z);
  out.emplace_back("rule.W_r", &rule.W_r);
  out.emplace_back("rule.b_r", &rule.b_r);
  out.emplace_back("codebook", &codebook);
  out.emplace_back("rul.W", &W_rul);
  out.emplace_back("rul.b", &b_rul);
  return out;
}

Var Model::encode_graph(Tape& tape, const Matrix& features,
                        const std::vector<double>& timestamps) {
  if (features.cols() != cfg.d_in)
    throw ShapeError("encode: input width " + shape_str(features) +
                     " does not match d_in " + std::to_string(cfg.d_in));
  Var x = tape.constant(features);
  Var h = add_rowvec(matmul(x, tape.leaf(W_in)), tape.leaf(b_in));
  for (auto& layer : layers)
    h = layer_forward_graph(h, timestamps, flags, layer);
  return h;
}

Matrix Model::encode(const Matrix& features,
                     const std::vector<double>& timestamps) {
  Tape tape;
  return tape.value(encode_graph(tape, features, timestamps));
}

double Model::rul_target(double rul) const {
  return std::min(rul, windowing.rul_cap) / windowing.rul_cap;
}

Model::Forward Model::forward_window(Tape& tape, const WindowedSample& w,
                                     const std::vector<int>* fixed_targets) {
  Forward f;
  f.h = encode_graph(tape, w.features, w.timestamps);
  f.step_weights = temporal_step_weights_graph(f.h, cfg.sim);
  // context per step: row t of A^T H, the step-weighted mix of encoder rows
  Var ctx = matmul(transpose(f.step_weights), f.h);

  Var book = tape.leaf(codebook);
  Var r_prev = tape.constant(Matrix::Zero(1, cfg.d_r));
  Var nll_sum = tape.constant(Matrix::Zero(1, 1));
  const auto T = w.features.rows();
  if (fixed_targets && static_cast<Eigen::Index>(fixed_targets->size()) != T)
    throw ShapeError("forward: fixed target count does not match window length");
  f.states.reserve(static_cast<size_t>(T));
  f.probs.reserve(static_cast<size_t>(T));
  for (Eigen::Index t = 0; t < T; ++t) {
    Var state =
        generate_rule_state_graph(row(ctx, static_cast<int>(t)), r_prev, rule);
    Var prob = assign_code_graph(state, book, cfg.temperature, cfg.sim);
    const int fresh = argmax_row(tape.value(prob));
    const int target =
        fixed_targets ? (*fixed_targets)[static_cast<size_t>(t)] : fresh;
    f.states.push_back(state);
    f.probs.push_back(prob);
    f.self_targets.push_back(fresh);
    nll_sum = add(nll_sum, log_clamped(pick(prob, {target})));
    r_prev = state;
  }
  f.nll = affine(nll_sum, -1.0, 0.0);
  f.rul_pred = add(matmul(colmean(f.h), tape.leaf(W_rul)), tape.leaf(b_rul));
  return f;
}

void save_checkpoint(const Model& model, const std::string& path) {
  Json params = Json::object();
  for (auto& [name, tensor] : const_cast<Model&>(model).named_params()) {
    std::vector<double> data(tensor->value.data(),
                             tensor->value.data() + tensor->value.size());
    params[name] = Json{{"shape", {tensor->value.rows(), tensor->value.cols()}},
                        {"data", data}};
  }
  Json j{
      {"format", "rule-miner-checkpoint-v1"},
      {"config",
       {{"d_in", model.cfg.d_in},
        {"d_model", model.cfg.d_model},
        {"d_ff", model.cfg.d_ff},
        {"layers", model.cfg.layers},
        {"d_k", model.cfg.d_k},
        {"m", model.cfg.m},
        {"d_r", model.cfg.d_r},
        {"temperature", model.cfg.temperature},
        {"sim", model.cfg.sim == SimKind::kCosine ? "cosine" : "dot"},
        {"ts_base", model.cfg.ts_base}}},
      {"flags",
       {{"use_time_dependency", model.flags.use_time_dependency},
        {"use_dynamic_weights", model.flags.use_dynamic_weights},
        {"use_self_attention", model.flags.use_self_attention}}},
      {"params", params},
      {"norm",
       {{"mean", model.norm.mean},
        {"stddev", model.norm.stddev},
        {"zero_variance", model.norm.zero_variance}}},
      {"band_edges", model.bands.edges},
      {"windowing",
       {{"T", model.windowing.T},
        {"stride", model.windowing.stride},
        {"rul_cap", model.windowing.rul_cap},
        {"bands", model.windowing.bands}}},
      {"mining",
       {{"anomaly_z", model.mining.anomaly_z},
        {"trend_slope_factor", model.mining.trend_slope_factor},
        {"level_bins", model.mining.level_bins},
        {"top_k", model.mining.top_k},
        {"mass_keep_ratio", model.mining.mass_keep_ratio},
        {"min_support", model.mining.min_support}}},
      {"fingerprint", model.fingerprint},
  };
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out << j.dump(2) << '\n';
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path);
  Json j;
  try {
    in >> j;
  } catch (const Json::parse_error& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  if (j.value("format", "") != "rule-miner-checkpoint-v1")
    throw ConfigError("checkpoint: unknown format");

  const Json& cj = j.at("config");
  ModelConfig cfg;
  cfg.d_in = cj.at("d_in").get<int>();
  cfg.d_model = cj.at("d_model").get<int>();
  cfg.d_ff = cj.at("d_ff").get<int>();
  cfg.layers = cj.at("layers").get<int>();
  cfg.d_k = cj.at("d_k").get<int>();
  cfg.m = cj.at("m").get<int>();
  cfg.d_r = cj.at("d_r").get<int>();
  cfg.temperature = cj.at("temperature").get<double>();
  cfg.sim = cj.at("sim").get<std::string>() == "dot" ? SimKind::kDot
                                                     : SimKind::kCosine;
  cfg.ts_base = cj.at("ts_base").get<double>();

  AblationFlags flags;
  const Json& fj = j.at("flags");
  flags.use_time_dependency = fj.at("use_time_dependency").get<bool>();
  flags.use_dynamic_weights = fj.at("use_dynamic_weights").get<bool>();
  flags.use_self_attention = fj.at("use_self_attention").get<bool>();

  Model model = Model::init(cfg, flags, 0);
  const Json& params = j.at("params");
  for (auto& [name, tensor] : model.named_params()) {
    if (!params.contains(name))
      throw ConfigError("checkpoint: missing parameter " + name);
    const Json& pj = params.at(name);
    const auto rows = pj.at("shape").at(0).get<Eigen::Index>();
    const auto cols = pj.at("shape").at(1).get<Eigen::Index>();
    if (rows != tensor->value.rows() || cols != tensor->value.cols())
      throw ShapeError("checkpoint: parameter " + name + " has shape " +
                       std::to_string(rows) + "x" + std::to_string(cols) +
                       ", expected " + shape_str(tensor->value));
    const auto data = pj.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols)
      throw ShapeError("checkpoint: parameter " + name + " has " +
                       std::to_string(data.size()) + " values for shape " +
                       std::to_string(rows) + "x" + std::to_string(cols));
    for (Eigen::Index i = 0; i < tensor->value.size(); ++i)
      tensor->value.data()[i] = data[static_cast<size_t>(i)];
    if (!tensor->value.allFinite())
      throw NumericError("checkpoint: parameter " + name + " is not finite");
    tensor->zero_grad();
  }
  for (const auto& layer : model.layers)
    if (!(layer.decay_rate() >= 0.0))
      throw ConfigError("checkpoint: negative time-decay rate");

  const Json& nj = j.at("norm");
  model.norm.mean = nj.at("mean").get<std::vector<double>>();
  model.norm.stddev = nj.at("stddev").get<std::vector<double>>();
  model.norm.zero_variance = nj.at("zero_variance").get<std::vector<bool>>();
  model.bands.edges = j.at("band_edges").get<std::vector<double>>();

  const Json& wj = j.at("windowing");
  model.windowing.T = wj.at("T").get<int>();
  model.windowing.stride = wj.at("stride").get<int>();
  model.windowing.rul_cap = wj.at("rul_cap").get<double>();
  model.windowing.bands = wj.at("bands").get<int>();

  const Json& mj = j.at("mining");
  model.mining.anomaly_z = mj.at("anomaly_z").get<double>();
  model.mining.trend_slope_factor =
      mj.at("trend_slope_factor").get<double>();
  model.mining.level_bins = mj.at("level_bins").get<int>();
  model.mining.top_k = mj.at("top_k").get<int>();
  model.mining.mass_keep_ratio = mj.at("mass_keep_ratio").get<double>();
  model.mining.min_support = mj.at("min_support").get<double>();
  model.fingerprint = j.at("fingerprint").get<std::string>();
  return model;
}

void seed_codebook(Model& model, const std::vector<WindowedSample>& windows,
                   uint64_t seed, size_t max_windows) {
  Rng rng(seed, "codebook");
  std::vector<Matrix> states;
  const size_t step = std::max<size_t>(1, windows.size() / max_windows);
  for (size_t i = 0; i < windows.size(); i += step) {
    Tape tape;
    Model::Forward f = model.forward_window(tape, windows[i]);
    states.push_back(tape.value(f.states.back()));
  }
  model.codebook.value = kmeanspp_init(states, model.cfg.m, model.cfg.d_r, rng);
  model.codebook.zero_grad();
}

}  // namespace ruleminer
