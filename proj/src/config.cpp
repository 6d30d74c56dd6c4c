#include "ruleminer/config.hpp"

#include <fstream>
#include <set>

#include "ruleminer/random.hpp"

namespace ruleminer {

namespace {

using Json = nlohmann::json;

// Wrapper that tracks which keys were consumed and rejects leftovers.
class StrictObject {
 public:
  StrictObject(const Json& j, std::string path)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object())
      throw ConfigError("config: " + path_ + " must be an object");
  }

  bool has(const std::string& key) {
    used_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const Json::exception&) {
      throw ConfigError("config: bad value for " + path_ + "." + key);
    }
  }

  const Json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  void finish() {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key()))
        throw ConfigError("config: unknown key " + path_ + "." + it.key());
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> used_;
};

SimKind parse_sim(const std::string& s) {
  if (s == "cosine") return SimKind::kCosine;
  if (s == "dot") return SimKind::kDot;
  throw ConfigError("config: sim must be 'cosine' or 'dot'");
}

}  // namespace

RunConfig default_run_config() { return RunConfig{}; }

RunConfig parse_run_config(const Json& j) {
  RunConfig cfg;
  StrictObject root(j, "");

  if (root.has("data")) {
    StrictObject data(root.raw("data"), "data");
    if (data.has("path")) {
      cfg.data_path = data.get<std::string>("path", "");
      cfg.inline_synth = false;
    }
    if (data.has("synth")) {
      if (!cfg.inline_synth)
        throw ConfigError("config: data.path and data.synth are exclusive");
      StrictObject sy(data.raw("synth"), "data.synth");
      cfg.synth.seed = sy.get<uint64_t>("seed", cfg.synth.seed);
      cfg.synth.rules = sy.get<int>("rules", cfg.synth.rules);
      cfg.synth.windows = sy.get<int>("windows", cfg.synth.windows);
      cfg.synth.sensors = sy.get<int>("sensors", cfg.synth.sensors);
      cfg.synth.T = sy.get<int>("T", cfg.synth.T);
      cfg.synth.bands = sy.get<int>("bands", cfg.synth.bands);
      cfg.synth.rul_cap = sy.get<double>("rul_cap", cfg.synth.rul_cap);
      cfg.synth.signal_strength =
          sy.get<double>("signal_strength", cfg.synth.signal_strength);
      cfg.synth.label_noise =
          sy.get<double>("label_noise", cfg.synth.label_noise);
      cfg.synth.injection_rates = sy.get<std::vector<double>>(
          "injection_rates", cfg.synth.injection_rates);
      if (sy.has("overlaps")) {
        for (const auto& oj : sy.raw("overlaps")) {
          StrictObject so(oj, "data.synth.overlaps[]");
          OverlapSpec ov;
          ov.rule_a = so.get<int>("rule_a", 0);
          ov.rule_b = so.get<int>("rule_b", 1);
          ov.jaccard = so.get<double>("jaccard", 0.5);
          so.finish();
          cfg.synth.overlaps.push_back(ov);
        }
      }
      sy.finish();
    }
    data.finish();
  }

  if (root.has("model")) {
    StrictObject mj(root.raw("model"), "model");
    cfg.model.d_model = mj.get<int>("d_model", cfg.model.d_model);
    cfg.model.d_ff = mj.get<int>("d_ff", cfg.model.d_ff);
    cfg.model.layers = mj.get<int>("layers", cfg.model.layers);
    cfg.model.d_k = mj.get<int>("d_k", cfg.model.d_k);
    cfg.model.m = mj.get<int>("m", cfg.model.m);
    cfg.model.d_r = mj.get<int>("d_r", cfg.model.d_r);
    cfg.model.temperature =
        mj.get<double>("temperature", cfg.model.temperature);
    cfg.model.sim = parse_sim(mj.get<std::string>(
        "sim", cfg.model.sim == SimKind::kDot ? "dot" : "cosine"));
    cfg.model.ts_base = mj.get<double>("ts_base", cfg.model.ts_base);
    mj.finish();
  }

  if (root.has("train")) {
    StrictObject tj(root.raw("train"), "train");
    cfg.train.steps = tj.get<long>("steps", cfg.train.steps);
    cfg.train.batch = tj.get<int>("batch", cfg.train.batch);
    cfg.train.lr = tj.get<double>("lr", cfg.train.lr);
    cfg.train.weights.nll = tj.get<double>("w_nll", cfg.train.weights.nll);
    cfg.train.weights.rul = tj.get<double>("w_rul", cfg.train.weights.rul);
    cfg.train.weights.ent = tj.get<double>("w_ent", cfg.train.weights.ent);
    cfg.train.seed = tj.get<uint64_t>("seed", cfg.train.seed);
    cfg.train.repulsion_beta =
        tj.get<double>("repulsion_beta", cfg.train.repulsion_beta);
    cfg.train.drift_kappa =
        tj.get<double>("drift_kappa", cfg.train.drift_kappa);
    cfg.train.drift_decay =
        tj.get<double>("drift_decay", cfg.train.drift_decay);
    tj.finish();
  }

  if (root.has("flags")) {
    StrictObject fj(root.raw("flags"), "flags");
    cfg.flags.use_time_dependency =
        fj.get<bool>("use_time_dependency", cfg.flags.use_time_dependency);
    cfg.flags.use_dynamic_weights =
        fj.get<bool>("use_dynamic_weights", cfg.flags.use_dynamic_weights);
    cfg.flags.use_self_attention =
        fj.get<bool>("use_self_attention", cfg.flags.use_self_attention);
    fj.finish();
  }

  if (root.has("windowing")) {
    StrictObject wj(root.raw("windowing"), "windowing");
    cfg.windowing.T = wj.get<int>("T", cfg.windowing.T);
    cfg.windowing.stride = wj.get<int>("stride", cfg.windowing.stride);
    cfg.windowing.rul_cap = wj.get<double>("rul_cap", cfg.windowing.rul_cap);
    cfg.windowing.bands = wj.get<int>("bands", cfg.windowing.bands);
    wj.finish();
  }

  if (root.has("mining")) {
    StrictObject mj(root.raw("mining"), "mining");
    cfg.mining.anomaly_z = mj.get<double>("anomaly_z", cfg.mining.anomaly_z);
    cfg.mining.trend_slope_factor = mj.get<double>(
        "trend_slope_factor", cfg.mining.trend_slope_factor);
    cfg.mining.level_bins = mj.get<int>("level_bins", cfg.mining.level_bins);
    cfg.mining.top_k = mj.get<int>("top_k", cfg.mining.top_k);
    cfg.mining.mass_keep_ratio =
        mj.get<double>("mass_keep_ratio", cfg.mining.mass_keep_ratio);
    cfg.mining.min_support =
        mj.get<double>("min_support", cfg.mining.min_support);
    mj.finish();
  }

  root.finish();
  cfg.synth.mining = cfg.mining;
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  Json j;
  try {
    in >> j;
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return parse_run_config(j);
}

Json run_config_to_json(const RunConfig& cfg) {
  Json data;
  if (!cfg.inline_synth) {
    data = Json{{"path", cfg.data_path}};
  } else {
    Json overlaps = Json::array();
    for (const auto& ov : cfg.synth.overlaps)
      overlaps.push_back(Json{{"rule_a", ov.rule_a},
                              {"rule_b", ov.rule_b},
                              {"jaccard", ov.jaccard}});
    data = Json{{"synth",
                 {{"seed", cfg.synth.seed},
                  {"rules", cfg.synth.rules},
                  {"windows", cfg.synth.windows},
                  {"sensors", cfg.synth.sensors},
                  {"T", cfg.synth.T},
                  {"bands", cfg.synth.bands},
                  {"rul_cap", cfg.synth.rul_cap},
                  {"signal_strength", cfg.synth.signal_strength},
                  {"label_noise", cfg.synth.label_noise},
                  {"injection_rates", cfg.synth.injection_rates},
                  {"overlaps", overlaps}}}};
  }
  return Json{
      {"data", data},
      {"model",
       {{"d_model", cfg.model.d_model},
        {"d_ff", cfg.model.d_ff},
        {"layers", cfg.model.layers},
        {"d_k", cfg.model.d_k},
        {"m", cfg.model.m},
        {"d_r", cfg.model.d_r},
        {"temperature", cfg.model.temperature},
        {"sim", cfg.model.sim == SimKind::kDot ? "dot" : "cosine"},
        {"ts_base", cfg.model.ts_base}}},
      {"train",
       {{"steps", cfg.train.steps},
        {"batch", cfg.train.batch},
        {"lr", cfg.train.lr},
        {"w_nll", cfg.train.weights.nll},
        {"w_rul", cfg.train.weights.rul},
        {"w_ent", cfg.train.weights.ent},
        {"seed", cfg.train.seed},
        {"repulsion_beta", cfg.train.repulsion_beta},
        {"drift_kappa", cfg.train.drift_kappa},
        {"drift_decay", cfg.train.drift_decay}}},
      {"flags",
       {{"use_time_dependency", cfg.flags.use_time_dependency},
        {"use_dynamic_weights", cfg.flags.use_dynamic_weights},
        {"use_self_attention", cfg.flags.use_self_attention}}},
      {"windowing",
       {{"T", cfg.windowing.T},
        {"stride", cfg.windowing.stride},
        {"rul_cap", cfg.windowing.rul_cap},
        {"bands", cfg.windowing.bands}}},
      {"mining",
       {{"anomaly_z", cfg.mining.anomaly_z},
        {"trend_slope_factor", cfg.mining.trend_slope_factor},
        {"level_bins", cfg.mining.level_bins},
        {"top_k", cfg.mining.top_k},
        {"mass_keep_ratio", cfg.mining.mass_keep_ratio},
        {"min_support", cfg.mining.min_support}}},
  };
}

std::string config_fingerprint(const RunConfig& cfg) {
  const std::string dump = run_config_to_json(cfg).dump();
  const uint64_t h = Rng::fnv1a64(dump);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace ruleminer
